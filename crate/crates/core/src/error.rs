//! Top-level error for pipeline commands, with a stable machine-readable kind.

use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

use crate::config::ConfigError;
use crate::dataset::DatasetError;
use crate::embed::EmbedError;
use crate::mav::MavError;
use crate::model::AnnotationError;
use crate::promptgen::PromptError;
use crate::reformulate::TransformError;
use crate::retrieval::RetrievalError;
use crate::scoring::ScoreError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Mav(#[from] MavError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("{path}: sample {id}: {source}")]
    Annotation {
        path: PathBuf,
        id: u64,
        source: AnnotationError,
    },
    #[error("{path}: duplicate prediction for sample {id}")]
    DuplicatePrediction { path: PathBuf, id: u64 },
    #[error("tau {tau} exceeds the recorded threshold {recorded} (sample {id})")]
    TauExceedsRecorded { tau: u32, recorded: u32, id: u64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Dataset(_) => "dataset",
            Error::Transform(TransformError::Aborted(_)) => "rule_violation",
            Error::Transform(TransformError::Parse { .. }) | Error::Annotation { .. } => "annotation",
            Error::Retrieval(_) => "retrieval",
            Error::Embed(_) => "embedding",
            Error::Prompt(_) => "prompt",
            Error::Mav(MavError::Generation(_)) => "generation",
            Error::Mav(_) => "voting",
            Error::Score(_) | Error::DuplicatePrediction { .. } => "scoring",
            Error::TauExceedsRecorded { .. } => "tau_exceeds_recorded",
            Error::Io { .. } => "io",
            Error::Usage(_) => "usage",
        }
    }

    /// `{"error": {"kind": ..., "message": ...}}`
    pub fn to_json(&self) -> serde_json::Value {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } })
    }
}
