//! Provider-fairness toolkit for pairwise recommenders.
//!
//! The crate covers the full experimental loop: synthetic interaction
//! generation with controlled provider-group imbalance, ingestion of
//! real rating logs, minority upsampling treatments, pairwise
//! matrix-factorization training with an optional fairness regularizer,
//! and an audit suite measuring group disparities in relevance,
//! visibility, and exposure alongside ranking quality and coverage.

pub mod error;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
