//! Skip-gram with negative sampling, in Euclidean space and on the
//! hyperboloid, plus the text embedding format.

mod io;
mod pairs;
mod skipgram;
mod vocab;

pub use io::{escape_token, unescape_token, EmbeddingFile};
pub use pairs::{generate_pairs, TrainingPair, NEGATIVE_RETRIES};
pub use skipgram::{
    hyperboloid_logit, minkowski_gradients, pair_log_likelihood, rsgd_step_hyperboloid, train_skipgram,
    EmbeddingMatrices, PairGradients, SkipGramConfig, SkipGramOutput, INIT_SIGMA,
};
pub use vocab::{build_vocab, detokenize, tokenize, Vocabulary};

use crate::geometry::GeometryError;
use crate::GeometryTag;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("vocabulary is empty after filtering")]
    EmptyVocabulary,
    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("non-finite logit")]
    NonFiniteLogit,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("non-finite value in row {1} of {0}")]
    NonFiniteRow(&'static str, usize),
    #[error("row {1} of {0} left the hyperboloid: <x,x>_L = {2}")]
    OffManifold(&'static str, usize, f64),
    #[error("{0} geometry is not supported here")]
    UnsupportedGeometry(GeometryTag),
    #[error("cannot convert {0} embeddings to {1}")]
    UnsupportedConversion(GeometryTag, GeometryTag),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, EmbedError>;
