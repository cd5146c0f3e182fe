//! Hate-speech quadruplet extraction with retrieval-augmented prompts and
//! multi-round answer voting.
//!
//! The pipeline:
//!
//! 1. [`reformulate`] rewrites quadruplet annotations as triplets; the
//!    hatefulness label is recovered later from the targeted group.
//! 2. [`retrieval`] indexes training-text embeddings for cosine search.
//! 3. [`promptgen`] pairs every input with its nearest training example(s).
//! 4. [`mav`] samples answers from an [`llm`] backend over `k` prompts until
//!    one canonical answer has `tau` votes.
//! 5. [`scoring`] computes hard, soft and average F1.
//!
//! [`pipeline`] ties these together behind the `hatequad` command line.

pub mod config;
pub mod dataset;
pub mod error;
pub mod embed;
pub mod hash;
pub mod http;
pub mod llm;
pub mod mav;
pub mod model;
pub mod pipeline;
pub mod promptgen;
pub mod reformulate;
pub mod retrieval;
pub mod scoring;
