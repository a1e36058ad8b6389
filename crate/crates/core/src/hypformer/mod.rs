//! Transformer intent classifier, Euclidean and Poincaré-ball variants.

mod bundle;
mod model;
pub mod ops;
mod train;

pub use bundle::{ModelBundle, BUNDLE_MAGIC};
pub use model::{Classifier, SequenceBatch, Slot, TokenTable};
pub use ops::{
    attach_positions, hyperbolic_attention, hyperbolic_ffn, hyperbolic_mlr, hyperbolic_pool, merge_heads,
    positional_encoding, scaled_dot_attention, split_heads, tangent_dropout,
};
pub use train::{evaluate, train_classifier, EpochStats, Evaluation, TrainConfig, TrainReport};

use crate::diffcore::DiffError;
use crate::geometry::GeometryError;
use crate::optim::OptimError;
use crate::GeometryTag;

#[derive(Debug, thiserror::Error)]
pub enum HypformerError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("every position of a sequence is masked")]
    AllMasked,
    #[error("hyperplane normal of class {0} is zero")]
    ZeroNormal(usize),
    #[error("{0} geometry is not supported by the classifier")]
    UnsupportedGeometry(GeometryTag),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("training diverged at epoch {epoch}: {source}")]
    Diverged { epoch: usize, source: DiffError },
    #[error("bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HypformerError>;

/// Shape and behaviour of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    /// Width of each head; the projected width is `heads * head_dim`.
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    /// `Euclidean` or `Poincare`.
    pub geometry: GeometryTag,
    pub max_seq_len: usize,
    pub num_classes: usize,
    /// Ball radius.
    pub c: f64,
    /// `x ⊕ sublayer(x)` (or `x + sublayer(x)`) around both sublayers.
    pub residual: bool,
    /// Multiplier on the sinusoidal encoding before it is attached.
    pub pe_scale: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            heads: 16,
            model_dim: 100,
            head_dim: 8,
            ffn_dim: 128,
            dropout: 0.0,
            geometry: GeometryTag::Poincare,
            max_seq_len: 64,
            num_classes: 2,
            c: 1.0,
            residual: false,
            pe_scale: 1.0,
        }
    }
}

impl TransformerConfig {
    pub fn projected_width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HypformerError::Config(m.into()));
        if self.geometry == GeometryTag::Hyperboloid {
            return Err(HypformerError::UnsupportedGeometry(self.geometry));
        }
        if self.layers == 0 {
            return bad("at least one layer is required");
        }
        if self.heads == 0 || self.head_dim == 0 || self.model_dim == 0 || self.ffn_dim == 0 {
            return bad("heads, head_dim, model_dim and ffn_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.num_classes == 0 {
            return bad("at least one class is required");
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be positive");
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("ball radius must be positive");
        }
        if !self.pe_scale.is_finite() || self.pe_scale < 0.0 {
            return bad("pe_scale must be a non-negative number");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let ok = TransformerConfig::default();
        assert!(ok.validate().is_ok());
        assert_eq!(ok.projected_width(), 128);
        for bad in [
            TransformerConfig { layers: 0, ..ok.clone() },
            TransformerConfig { dropout: 1.0, ..ok.clone() },
            TransformerConfig { dropout: -0.1, ..ok.clone() },
            TransformerConfig { heads: 0, ..ok.clone() },
            TransformerConfig { num_classes: 0, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(HypformerError::Config(_))));
        }
        let h = TransformerConfig { geometry: GeometryTag::Hyperboloid, ..ok };
        assert!(matches!(h.validate(), Err(HypformerError::UnsupportedGeometry(_))));
    }
}
