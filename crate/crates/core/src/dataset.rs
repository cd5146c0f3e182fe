//! Dataset records and JSON Lines I/O.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub content: String,
    /// Gold annotation; may be absent in unlabelled inference inputs.
    #[serde(default)]
    pub output: String,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("duplicate sample id {0}")]
    DuplicateId(u64),
    #[error("sample {0} has empty content")]
    EmptyContent(u64),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| DatasetError::Json {
            path: path.to_path_buf(),
            line: idx + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    let mut writer = JsonlWriter::create(path)?;
    for item in items {
        writer.write(item)?;
    }
    writer.finish()
}

/// Line-at-a-time JSONL writer.
pub struct JsonlWriter {
    path: PathBuf,
    inner: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self, DatasetError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = File::create(path).map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            inner: BufWriter::new(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, item: &T) -> Result<(), DatasetError> {
        let line = serde_json::to_string(item).map_err(|source| DatasetError::Json {
            path: self.path.clone(),
            line: 0,
            source,
        })?;
        writeln!(self.inner, "{line}").map_err(io_err(&self.path))
    }

    pub fn finish(mut self) -> Result<(), DatasetError> {
        self.inner.flush().map_err(io_err(&self.path))
    }
}

/// Loads samples from JSON Lines, or from a single JSON array when the file
/// starts with `[`.
pub fn read_samples(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(io_err(path))?;
    let samples: Vec<Sample> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|source| DatasetError::Json {
            path: path.to_path_buf(),
            line: source.line(),
            source,
        })?
    } else {
        read_jsonl(path)?
    };
    validate_samples(&samples)?;
    Ok(samples)
}

pub fn validate_samples(samples: &[Sample]) -> Result<(), DatasetError> {
    let mut seen = HashSet::with_capacity(samples.len());
    for s in samples {
        if !seen.insert(s.id) {
            return Err(DatasetError::DuplicateId(s.id));
        }
        if s.content.trim().is_empty() {
            return Err(DatasetError::EmptyContent(s.id));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_jsonl_and_array_forms() {
        let dir = tempfile::tempdir().unwrap();
        let jsonl = dir.path().join("a.jsonl");
        std::fs::write(
            &jsonl,
            "{\"id\":1,\"content\":\"x\",\"output\":\"A | b | c [END]\"}\n\n{\"id\":2,\"content\":\"y\",\"output\":\"o\"}\n",
        )
        .unwrap();
        let arr = dir.path().join("a.json");
        std::fs::write(
            &arr,
            "  [{\"id\":1,\"content\":\"x\",\"output\":\"A | b | c [END]\"},{\"id\":2,\"content\":\"y\",\"output\":\"o\"}]",
        )
        .unwrap();
        let a = read_samples(&jsonl).unwrap();
        let b = read_samples(&arr).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn rejects_duplicates_and_empty_content() {
        let dup = vec![
            Sample { id: 1, content: "a".into(), output: String::new() },
            Sample { id: 1, content: "b".into(), output: String::new() },
        ];
        assert!(matches!(validate_samples(&dup), Err(DatasetError::DuplicateId(1))));
        let empty = vec![Sample { id: 3, content: "  ".into(), output: String::new() }];
        assert!(matches!(validate_samples(&empty), Err(DatasetError::EmptyContent(3))));
    }

    #[test]
    fn reports_bad_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(&p, "{\"id\":1,\"content\":\"x\",\"output\":\"\"}\nnot json\n").unwrap();
        match read_samples(&p) {
            Err(DatasetError::Json { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/out.jsonl");
        let s = vec![Sample { id: 9, content: "内容".into(), output: "x".into() }];
        write_jsonl(&p, &s).unwrap();
        assert_eq!(read_samples(&p).unwrap(), s);
    }
}
