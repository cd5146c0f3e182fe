//! Pipeline configuration (TOML).
//!
//! Every section is optional and defaults to the reference setup: top-10
//! retrieval, a voting threshold of 200 and sampling temperature 0.1.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::http::RetryPolicy;
use crate::llm::GenParams;
use crate::mav::MavConfig;
use crate::model::{AnnotationFormat, Arity};
use crate::promptgen::PromptTemplate;
use crate::reformulate::{OnViolation, TrRule};
use crate::scoring::MatchPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Overrides the mock backend's seed when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub ablation: AblationConfig,
    pub data: DataPaths,
    pub format: AnnotationFormat,
    pub tr: TrConfig,
    pub embedding: EmbeddingConfig,
    pub llm: LlmConfig,
    pub mav: MavConfig,
    pub prompt: PromptConfig,
    pub scoring: MatchPolicy,
    pub parallel: ParallelConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Work on triplets and recover hatefulness from the group.
    pub tr: bool,
    /// Put a retrieved training example into each prompt.
    pub srag: bool,
    /// Vote over repeated generations instead of a single shot.
    pub mav: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            tr: true,
            srag: true,
            mav: true,
        }
    }
}

impl AblationConfig {
    pub fn arity(&self) -> Arity {
        if self.tr {
            Arity::Triplet
        } else {
            Arity::Quadruplet
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_vectors: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrConfig {
    pub non_hate_group_token: String,
    pub on_violation: OnViolation,
}

impl Default for TrConfig {
    fn default() -> Self {
        Self {
            non_hate_group_token: TrRule::default().non_hate_group_token,
            on_violation: OnViolation::default(),
        }
    }
}

impl TrConfig {
    pub fn rule(&self) -> TrRule {
        TrRule {
            non_hate_group_token: self.non_hate_group_token.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingBackendKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub backend: EmbeddingBackendKind,
    /// Dimension of the hash backend; HTTP backends report their own.
    pub hash_dim: usize,
    pub url: String,
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    pub batch_size: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            backend: EmbeddingBackendKind::Hash,
            hash_dim: 256,
            url: "http://127.0.0.1:8081/v1/embeddings".to_string(),
            model: "bge-large-zh-v1.5".to_string(),
            api_key_env: None,
            batch_size: 64,
            timeout_secs: 60,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmBackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    pub backend: LlmBackendKind,
    pub url: String,
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
    pub retry: RetryPolicy,
    /// JSON mock definition, required for the mock backend.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_spec: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        let params = GenParams::default();
        Self {
            backend: LlmBackendKind::Http,
            url: "http://127.0.0.1:8000/v1/chat/completions".to_string(),
            model: "qwen2.5-7b-srag".to_string(),
            api_key_env: None,
            timeout_secs: 120,
            max_tokens: params.max_tokens,
            stop: params.stop,
            retry: RetryPolicy::default(),
            mock_spec: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    /// Include the retrieved example's gold answer in inference prompts.
    pub include_example_answer: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub example_layout: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub example_layout_no_answer: Option<String>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            include_example_answer: true,
            instruction: None,
            layout: None,
            example_layout: None,
            example_layout_no_answer: None,
        }
    }
}

impl PromptConfig {
    pub fn template(&self, arity: Arity) -> PromptTemplate {
        let mut t = PromptTemplate::for_arity(arity);
        if let Some(v) = &self.instruction {
            t.instruction = v.clone();
        }
        if let Some(v) = &self.layout {
            t.layout = v.clone();
        }
        if let Some(v) = &self.example_layout {
            t.example_layout = v.clone();
        }
        if let Some(v) = &self.example_layout_no_answer {
            t.example_layout_no_answer = v.clone();
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParallelConfig {
    /// Test samples processed concurrently.
    pub samples: usize,
    /// Cap on concurrent generation requests across all samples.
    pub max_in_flight: usize,
}

impl Default for ParallelConfig {
    fn default() -> Self {
        Self {
            samples: 4,
            max_in_flight: 16,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::from_toml(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    pub fn gen_params(&self) -> GenParams {
        GenParams {
            temperature: self.mav.temperature,
            max_tokens: self.llm.max_tokens,
            stop: self.llm.stop.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = ConfigError::Invalid;
        self.format.validate().map_err(invalid)?;
        self.tr.rule().validate().map_err(invalid)?;
        self.mav.validate().map_err(|e| invalid(e.to_string()))?;
        self.gen_params().validate().map_err(invalid)?;
        self.scoring.validate().map_err(invalid)?;
        for arity in [Arity::Triplet, Arity::Quadruplet] {
            self.prompt
                .template(arity)
                .validate()
                .map_err(|e| invalid(e.to_string()))?;
        }
        if self.embedding.hash_dim == 0 {
            return Err(invalid("embedding.hash_dim must be positive".into()));
        }
        if self.parallel.samples == 0 || self.parallel.max_in_flight == 0 {
            return Err(invalid("parallel caps must be positive".into()));
        }
        if self.llm.backend == LlmBackendKind::Mock && self.llm.mock_spec.is_none() {
            return Err(invalid("llm.mock_spec is required for the mock backend".into()));
        }
        Ok(())
    }
}
