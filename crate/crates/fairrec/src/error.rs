//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("item {item} has no providers")]
    ItemWithoutProviders { item: u32 },

    #[error("empty catalog")]
    EmptyCatalog,

    #[error("empty interaction set")]
    EmptyInteractions,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("synthetic generation failed: {0}")]
    Synth(String),

    #[error("upsampling failed: {0}")]
    Upsample(String),

    #[error("training failed: {0}")]
    Train(String),

    #[error("metrics computation failed: {0}")]
    Metrics(String),

    #[error("ingest error at line {line}: {msg}")]
    IngestRow { line: usize, msg: String },

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("harness error in stage `{stage}`: {msg}")]
    Stage { stage: String, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
