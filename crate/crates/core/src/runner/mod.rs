//! Data plumbing and the batch commands behind the CLI.

mod commands;
mod config;
mod corpus;
mod dataset;

pub use commands::{
    cmd_convert, cmd_evaluate, cmd_gen_data, cmd_geometry_check, cmd_train_classifier, cmd_train_embeddings,
    EmbeddingRun, Metrics,
};
pub use config::{RunConfig, KEYS, PRESETS};
pub use corpus::{corpus_tokens, ingest_corpus, CorpusTokens};
pub use dataset::{
    generate_synthetic_intents, parse_tsv, synthetic_signatures, to_tsv, IntentDataset, Record, Split, SyntheticSpec,
};

use std::path::Path;

use crate::embed::EmbedError;
use crate::hypformer::HypformerError;
use crate::GeometryTag;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: invalid UTF-8 at byte offset {offset}")]
    Utf8 { path: String, offset: u64 },
    #[error("{path}:{line}: {msg}")]
    Malformed { path: String, line: usize, msg: String },
    #[error("{0}: no content")]
    EmptyInput(String),
    #[error("label {0:?} has no training examples after the split")]
    EmptyLabel(String),
    #[error("vocabulary of {available} tokens cannot hold {needed} disjoint signature and noise tokens")]
    VocabTooSmall { needed: usize, available: usize },
    #[error("{embeddings} embeddings cannot feed a {model} model")]
    GeometryMismatch { embeddings: GeometryTag, model: GeometryTag },
    #[error("missing required setting {0}")]
    Missing(&'static str),
    #[error("{path}: {source}")]
    Embedding { path: String, source: EmbedError },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Model(#[from] HypformerError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RunError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, RunError>;
