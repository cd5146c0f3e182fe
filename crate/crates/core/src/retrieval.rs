//! Flat cosine-similarity index over the training corpus.
//!
//! Vectors are L2-normalized once at build time, so a query costs one dot
//! product per row. Results are ordered by descending score with ties broken
//! by ascending sample id.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, DatasetError, Sample};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("no vector for sample {0}")]
    MissingVector(u64),
    #[error("vector for sample {0} has zero norm")]
    ZeroVector(u64),
    #[error("vector for sample {0} contains a non-finite value")]
    NonFinite(u64),
    #[error("duplicate vector id {0}")]
    DuplicateId(u64),
    #[error("index has no retrievable rows")]
    EmptyIndex,
    #[error("query vector has zero norm")]
    ZeroQuery,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Raw (not yet normalized) vectors keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    pub dim: usize,
    pub ids: Vec<u64>,
    pub rows: Vec<Vec<f32>>,
}

impl VectorSet {
    pub fn new(ids: Vec<u64>, rows: Vec<Vec<f32>>) -> Result<Self, RetrievalError> {
        assert_eq!(ids.len(), rows.len(), "one id per row");
        let dim = rows.first().map_or(0, Vec::len);
        for row in &rows {
            if row.len() != dim {
                return Err(RetrievalError::DimMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
        }
        Ok(Self { dim, ids, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub sample_id: u64,
    pub score: f32,
}

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Returns `v / |v|`, or `None` for a zero vector. The norm is accumulated in
/// f64.
pub fn normalize(v: &[f32]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

/// Hit ordering: higher score first, then lower sample id.
pub fn hit_order(a: &RetrievalHit, b: &RetrievalHit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.sample_id.cmp(&b.sample_id))
}

/// Immutable normalized embedding matrix.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<u64>,
    data: Vec<f32>,
}

impl VectorIndex {
    /// Builds an index over `samples`, in sample order, taking each sample's
    /// vector from `vectors`. Vectors for ids outside `samples` are ignored.
    pub fn build(samples: &[Sample], vectors: &VectorSet) -> Result<Self, RetrievalError> {
        let ids: Vec<u64> = samples.iter().map(|s| s.id).collect();
        Self::build_from_ids(&ids, vectors)
    }

    pub fn build_from_ids(ids: &[u64], vectors: &VectorSet) -> Result<Self, RetrievalError> {
        let mut by_id: HashMap<u64, &[f32]> = HashMap::with_capacity(vectors.len());
        for (id, row) in vectors.ids.iter().zip(&vectors.rows) {
            if by_id.insert(*id, row).is_some() {
                return Err(RetrievalError::DuplicateId(*id));
            }
        }
        let dim = vectors.dim;
        let mut data = Vec::with_capacity(ids.len() * dim);
        let mut seen = HashSet::with_capacity(ids.len());
        for &id in ids {
            if !seen.insert(id) {
                return Err(RetrievalError::DuplicateId(id));
            }
            let row = by_id.get(&id).ok_or(RetrievalError::MissingVector(id))?;
            if row.len() != dim {
                return Err(RetrievalError::DimMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(RetrievalError::NonFinite(id));
            }
            let unit = normalize(row).ok_or(RetrievalError::ZeroVector(id))?;
            data.extend_from_slice(&unit);
        }
        Ok(Self {
            dim,
            ids: ids.to_vec(),
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector_for(&self, id: u64) -> Option<&[f32]> {
        self.ids.iter().position(|&x| x == id).map(|i| self.row(i))
    }

    /// Top-`k` rows by cosine similarity to `query`, skipping `exclude`.
    pub fn retrieve(
        &self,
        query: &[f32],
        k: usize,
        exclude: Option<u64>,
    ) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if query.len() != self.dim {
            return Err(RetrievalError::DimMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        let query = normalize(query).ok_or(RetrievalError::ZeroQuery)?;
        let mut hits: Vec<RetrievalHit> = self
            .ids
            .iter()
            .enumerate()
            .filter(|(_, id)| Some(**id) != exclude)
            .map(|(i, &id)| RetrievalHit {
                sample_id: id,
                // Adding +0.0 turns -0.0 into +0.0, so orthogonal rows tie.
                score: dot(self.row(i), &query) + 0.0,
            })
            .collect();
        if hits.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, hit_order);
            hits.truncate(k);
        }
        hits.sort_unstable_by(hit_order);
        Ok(hits)
    }

    pub fn to_vector_set(&self) -> VectorSet {
        VectorSet {
            dim: self.dim,
            ids: self.ids.clone(),
            rows: (0..self.len()).map(|i| self.row(i).to_vec()).collect(),
        }
    }
}

/// Number of samples whose content duplicates an earlier sample's content.
pub fn duplicate_content_count(samples: &[Sample]) -> usize {
    let mut seen = HashSet::new();
    samples.iter().filter(|s| !seen.insert(s.content.as_str())).count()
}

const MAGIC: &[u8; 4] = b"FGV1";

#[derive(Serialize, Deserialize)]
struct RowId {
    row: usize,
    id: u64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".ids.jsonl");
    PathBuf::from(name)
}

/// Writes `FGV1 | u32 count | u32 dim | count*dim f32`, all little-endian,
/// plus a `<path>.ids.jsonl` sidecar mapping rows to sample ids.
pub fn write_vectors(path: &Path, set: &VectorSet) -> Result<(), RetrievalError> {
    let io = |source| RetrievalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let too_big = || RetrievalError::Format {
        path: path.to_path_buf(),
        reason: "matrix too large for u32 header".to_string(),
    };
    let count = u32::try_from(set.len()).map_err(|_| too_big())?;
    let dim = u32::try_from(set.dim).map_err(|_| too_big())?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&count.to_le_bytes()).map_err(io)?;
    w.write_all(&dim.to_le_bytes()).map_err(io)?;
    for row in &set.rows {
        for x in row {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;

    let ids: Vec<RowId> = set
        .ids
        .iter()
        .enumerate()
        .map(|(row, &id)| RowId { row, id })
        .collect();
    dataset::write_jsonl(&sidecar_path(path), &ids)?;
    Ok(())
}

pub fn read_vectors(path: &Path) -> Result<VectorSet, RetrievalError> {
    let bad = |reason: &str| RetrievalError::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut bytes = Vec::new();
    File::open(path)
        .map(BufReader::new)
        .and_then(|mut r| r.read_to_end(&mut bytes))
        .map_err(|source| RetrievalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing FGV1 header"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[12..];
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("header overflows"))?;
    if payload.len() != expected {
        return Err(bad(&format!(
            "expected {expected} payload bytes for {count}x{dim}, found {}",
            payload.len()
        )));
    }
    let floats: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let rows: Vec<Vec<f32>> = if dim == 0 {
        vec![Vec::new(); count]
    } else {
        floats.chunks_exact(dim).map(<[f32]>::to_vec).collect()
    };

    let mut sidecar: Vec<RowId> = dataset::read_jsonl(&sidecar_path(path))?;
    sidecar.sort_by_key(|r| r.row);
    if sidecar.len() != count || sidecar.iter().enumerate().any(|(i, r)| r.row != i) {
        return Err(bad("id sidecar does not cover every row exactly once"));
    }
    Ok(VectorSet {
        dim,
        ids: sidecar.into_iter().map(|r| r.id).collect(),
        rows,
    })
}

pub fn write_index(path: &Path, index: &VectorIndex) -> Result<(), RetrievalError> {
    write_vectors(path, &index.to_vector_set())
}

/// Loads a vector file as an index, re-normalizing every row.
pub fn read_index(path: &Path) -> Result<VectorIndex, RetrievalError> {
    let set = read_vectors(path)?;
    VectorIndex::build_from_ids(&set.ids.clone(), &set)
}
