//! Hyperbolic deep-learning toolkit: gyrovector geometry, a small autodiff
//! tape, hyperboloid skip-gram embeddings and a hyperbolic Transformer
//! intent classifier.

pub mod diffcore;
pub mod embed;
pub mod geometry;
pub mod hypformer;
pub mod optim;
pub mod runner;

use std::fmt;
use std::str::FromStr;

/// Which space a set of vectors lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GeometryTag {
    Euclidean,
    Poincare,
    Hyperboloid,
}

impl GeometryTag {
    pub fn as_str(self) -> &'static str {
        match self {
            GeometryTag::Euclidean => "euclidean",
            GeometryTag::Poincare => "poincare",
            GeometryTag::Hyperboloid => "hyperboloid",
        }
    }
}

impl fmt::Display for GeometryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown geometry {0:?} (expected euclidean, poincare or hyperboloid)")]
pub struct UnknownGeometry(pub String);

impl FromStr for GeometryTag {
    type Err = UnknownGeometry;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(GeometryTag::Euclidean),
            "poincare" => Ok(GeometryTag::Poincare),
            "hyperboloid" => Ok(GeometryTag::Hyperboloid),
            other => Err(UnknownGeometry(other.to_string())),
        }
    }
}
