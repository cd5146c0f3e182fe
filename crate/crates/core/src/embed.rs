//! Text embedding backends.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{combine, fnv1a64};
use crate::http::{HttpError, JsonClient, RetryPolicy};
use crate::retrieval::VectorSet;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("embedding backend returned {found} for {expected}")]
    BackendShape { expected: String, found: String },
}

impl From<HttpError> for EmbedError {
    fn from(e: HttpError) -> Self {
        EmbedError::BackendUnavailable(e.to_string())
    }
}

pub trait Embedder: Send + Sync {
    /// One vector per input text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

/// Embed every text, checking count and a consistent dimension.
pub fn embed_texts(texts: &[String], backend: &dyn Embedder) -> Result<Vec<Vec<f32>>, EmbedError> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let vectors = backend.embed(texts)?;
    if vectors.len() != texts.len() {
        return Err(EmbedError::BackendShape {
            expected: format!("{} vectors", texts.len()),
            found: format!("{} vectors", vectors.len()),
        });
    }
    let dim = vectors[0].len();
    if dim == 0 {
        return Err(EmbedError::BackendShape {
            expected: "non-empty vectors".to_string(),
            found: "dimension 0".to_string(),
        });
    }
    if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
        return Err(EmbedError::BackendShape {
            expected: format!("dimension {dim}"),
            found: format!("dimension {}", bad.len()),
        });
    }
    Ok(vectors)
}

/// Deterministic offline embedder: hashes character unigrams and bigrams into
/// `dim` signed buckets, so texts sharing characters land near each other.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "hash embedder needs a positive dimension");
        Self { dim }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
        let mut add = |feature: u64, weight: f32| {
            let h = combine(&[feature, self.dim as u64]);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign * weight;
        };
        let mut buf = [0u8; 8];
        for c in &chars {
            add(fnv1a64(c.encode_utf8(&mut buf).as_bytes()), 1.0);
        }
        for pair in chars.windows(2) {
            let s: String = pair.iter().collect();
            add(fnv1a64(s.as_bytes()) ^ 0x5bd1_e995, 1.0);
        }
        if v.iter().all(|&x| x == 0.0) {
            // Feature collisions cancelled out (or blank text): fall back to
            // a one-hot vector chosen by the whole-text hash.
            let h = fnv1a64(text.as_bytes());
            v[(h % self.dim as u64) as usize] = 1.0;
        }
        v
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Serves vectors loaded from disk, row by row, in the order of the request.
#[derive(Debug, Clone)]
pub struct FileEmbedder {
    vectors: VectorSet,
}

impl FileEmbedder {
    pub fn new(vectors: VectorSet) -> Self {
        Self { vectors }
    }
}

impl Embedder for FileEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        if texts.len() != self.vectors.len() {
            return Err(EmbedError::BackendShape {
                expected: format!("{} vectors", texts.len()),
                found: format!("{} stored rows", self.vectors.len()),
            });
        }
        Ok(self.vectors.rows.clone())
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    input: &'a [String],
    model: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
    #[serde(default)]
    index: Option<usize>,
}

/// Client for the `{"input": [...], "model": ...}` embeddings protocol.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: JsonClient,
    model: String,
    batch_size: usize,
}

impl HttpEmbedder {
    pub fn new(
        url: &str,
        model: &str,
        bearer: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
        batch_size: usize,
    ) -> Self {
        Self {
            client: JsonClient::new(url, bearer, timeout, retry),
            model: model.to_string(),
            batch_size: batch_size.max(1),
        }
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let resp: EmbeddingResponse = self.client.post(&EmbeddingRequest {
            input: texts,
            model: &self.model,
        })?;
        if resp.data.len() != texts.len() {
            return Err(EmbedError::BackendShape {
                expected: format!("{} embeddings", texts.len()),
                found: format!("{} embeddings", resp.data.len()),
            });
        }
        let mut data = resp.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            out.extend(self.embed_batch(chunk)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_gives_empty_output() {
        assert!(embed_texts(&[], &HashEmbedder::new(8)).unwrap().is_empty());
    }

    #[test]
    fn hash_embeddings_are_deterministic() {
        let e = HashEmbedder::new(16);
        let texts = vec!["他们都是坏人".to_string(), "完全无关的句子".to_string(), String::new()];
        let a = embed_texts(&texts, &e).unwrap();
        let b = embed_texts(&texts, &HashEmbedder::new(16)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.len() == 16 && v.iter().any(|&x| x != 0.0)));
    }

    #[test]
    fn hash_embeddings_reflect_overlap() {
        let e = HashEmbedder::new(64);
        let cos = |a: &[f32], b: &[f32]| {
            let d: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let n = |v: &[f32]| v.iter().map(|x| x * x).sum::<f32>().sqrt();
            d / (n(a) * n(b))
        };
        let base = e.embed_one("这些地方的人都很坏");
        let near = e.embed_one("这些地方的人都很好");
        let far = e.embed_one("abcdefg hijk");
        assert!(cos(&base, &near) > cos(&base, &far));
    }

    #[test]
    fn file_backend_checks_count() {
        let set = VectorSet::new(vec![0, 1], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let e = FileEmbedder::new(set);
        assert_eq!(e.embed(&["a".into(), "b".into()]).unwrap().len(), 2);
        assert!(matches!(embed_texts(&["a".into()], &e), Err(EmbedError::BackendShape { .. })));
    }

    struct Ragged;
    impl Embedder for Ragged {
        fn embed(&self, _: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
            Ok(vec![vec![1.0, 2.0], vec![1.0]])
        }
    }

    #[test]
    fn ragged_dims_are_shape_errors() {
        assert!(matches!(
            embed_texts(&["a".into(), "b".into()], &Ragged),
            Err(EmbedError::BackendShape { .. })
        ));
    }
}
