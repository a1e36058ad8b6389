use std::path::{Path, PathBuf};

use super::{Result, RunError};
use crate::embed::SkipGramConfig;
use crate::hypformer::{TrainConfig, TransformerConfig};
use crate::optim::{LrPolicy, OptimizerConfig, RestartSchedule, DEFAULT_EPS, DEFAULT_RHO};
use crate::GeometryTag;

/// Everything a command may need. Each command reads the subset it uses.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub geometry: GeometryTag,
    pub dim: usize,

    // skip-gram
    pub window: usize,
    pub negatives: usize,
    pub theta: f64,
    pub emb_lr: f64,
    pub emb_epochs: usize,
    pub min_count: u64,
    pub alpha: f64,
    pub keep_whitespace: bool,

    // classifier
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub residual: bool,
    pub pe_scale: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub euclidean_lr: f64,
    pub riemannian_lr: f64,
    /// `None` disables the restart; unset means the midpoint.
    pub restart_epoch: Option<Option<usize>>,
    pub lr_policy: LrPolicy,
    pub holdout: f64,

    // synthetic data
    pub classes: usize,
    pub composites: usize,
    pub per_class: usize,
    pub rows: Option<usize>,
    pub vocab_size: usize,
    pub max_noise: usize,

    // paths
    pub corpus: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sg = SkipGramConfig::default();
        Self {
            seed: 0,
            geometry: GeometryTag::Hyperboloid,
            dim: 16,
            window: sg.window,
            negatives: sg.negatives,
            // at 1 the positive probability tops out at 0.5
            theta: 3.0,
            emb_lr: sg.lr,
            emb_epochs: sg.epochs,
            min_count: sg.min_count,
            alpha: sg.alpha,
            keep_whitespace: false,
            layers: 2,
            heads: 4,
            head_dim: 4,
            ffn_dim: 32,
            dropout: 0.0,
            max_seq_len: 64,
            residual: false,
            pe_scale: 1.0,
            epochs: 100,
            batch_size: 16,
            euclidean_lr: 1e-3,
            riemannian_lr: 0.05,
            restart_epoch: None,
            lr_policy: LrPolicy::Decay { factor: crate::optim::DEFAULT_DECAY },
            holdout: 0.15,
            classes: 8,
            composites: 2,
            per_class: 50,
            rows: None,
            vocab_size: 200,
            max_noise: 3,
            corpus: None,
            dataset: None,
            embeddings: None,
            model: None,
            out: None,
            metrics: None,
        }
    }
}

pub const PRESETS: [&str; 4] = ["eucl-c2v-128", "eucl-c2v-256", "hyp-c2v-100-nodrop", "hyp-c2v-100-drop30"];

pub const KEYS: [&str; 40] = [
    "seed", "geometry", "dim", "window", "negatives", "theta", "emb_lr", "emb_epochs", "min_count", "alpha",
    "keep_whitespace", "layers", "heads", "head_dim", "ffn_dim", "dropout", "max_seq_len", "residual", "pe_scale",
    "epochs", "batch_size", "euclidean_lr", "riemannian_lr", "restart_epoch", "lr_policy", "holdout", "classes",
    "composites", "per_class", "rows", "vocab_size", "max_noise", "corpus", "dataset", "embeddings", "model", "out",
    "metrics", "lr_decay", "preset",
];

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| RunError::Config(format!("invalid value for {key}: {v:?}")))
}

fn opt_path(v: &str) -> Option<PathBuf> {
    let v = v.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Settings for one of the shipped presets.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = Self { layers: 3, heads: 16, epochs: 100, ..Self::default() };
        match name {
            "eucl-c2v-128" | "eucl-c2v-256" => {
                c.geometry = GeometryTag::Euclidean;
                c.dim = if name.ends_with("128") { 128 } else { 256 };
                c.head_dim = c.dim / 16;
                c.ffn_dim = 2 * c.dim;
                c.dropout = 0.2;
                c.euclidean_lr = 1e-4;
            }
            "hyp-c2v-100-nodrop" | "hyp-c2v-100-drop30" => {
                c.geometry = GeometryTag::Hyperboloid;
                c.dim = 100;
                c.head_dim = 8;
                c.ffn_dim = 200;
                c.dropout = if name.ends_with("drop30") { 0.3 } else { 0.0 };
                c.euclidean_lr = 1e-3;
                c.riemannian_lr = 0.05;
            }
            _ => return Err(RunError::Config(format!("unknown preset {name:?}; known: {}", PRESETS.join(", ")))),
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "geometry" => self.geometry = v.parse().map_err(|_| RunError::Config(format!("unknown geometry {v:?}")))?,
            "dim" => self.dim = parse(key, v)?,
            "window" => self.window = parse(key, v)?,
            "negatives" => self.negatives = parse(key, v)?,
            "theta" => self.theta = parse(key, v)?,
            "emb_lr" => self.emb_lr = parse(key, v)?,
            "emb_epochs" => self.emb_epochs = parse(key, v)?,
            "min_count" => self.min_count = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "keep_whitespace" => self.keep_whitespace = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "head_dim" => self.head_dim = parse(key, v)?,
            "ffn_dim" => self.ffn_dim = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "max_seq_len" => self.max_seq_len = parse(key, v)?,
            "residual" => self.residual = parse(key, v)?,
            "pe_scale" => self.pe_scale = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "euclidean_lr" => self.euclidean_lr = parse(key, v)?,
            "riemannian_lr" => self.riemannian_lr = parse(key, v)?,
            "restart_epoch" => {
                self.restart_epoch = match v {
                    "none" => Some(None),
                    "midpoint" => None,
                    _ => Some(Some(parse(key, v)?)),
                }
            }
            "lr_policy" => {
                self.lr_policy = match v {
                    "cosine" => LrPolicy::Cosine,
                    "decay" => match self.lr_policy {
                        LrPolicy::Decay { factor } => LrPolicy::Decay { factor },
                        LrPolicy::Cosine => LrPolicy::Decay { factor: crate::optim::DEFAULT_DECAY },
                    },
                    _ => return Err(RunError::Config(format!("lr_policy must be decay or cosine, got {v:?}"))),
                }
            }
            "lr_decay" => self.lr_policy = LrPolicy::Decay { factor: parse(key, v)? },
            "holdout" => self.holdout = parse(key, v)?,
            "classes" => self.classes = parse(key, v)?,
            "composites" => self.composites = parse(key, v)?,
            "per_class" => self.per_class = parse(key, v)?,
            "rows" => self.rows = if v == "auto" { None } else { Some(parse(key, v)?) },
            "vocab_size" => self.vocab_size = parse(key, v)?,
            "max_noise" => self.max_noise = parse(key, v)?,
            "corpus" => self.corpus = opt_path(v),
            "dataset" => self.dataset = opt_path(v),
            "embeddings" => self.embeddings = opt_path(v),
            "model" => self.model = opt_path(v),
            "out" => self.out = opt_path(v),
            "metrics" => self.metrics = opt_path(v),
            "preset" => *self = Self::preset(v)?,
            _ => return Err(RunError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| RunError::Config(format!("{origin}:{}: expected key=value", i + 1)))?;
            self.set(k.trim(), v).map_err(|e| RunError::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Defaults, then an optional config file, then overrides in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        Self::resolve_from(Self::default(), file, overrides)
    }

    /// Like [`RunConfig::resolve`], starting from `base` instead of the defaults.
    pub fn resolve_from(base: Self, file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = base;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(RunError::Config(m));
        if self.dim == 0 {
            return fail("dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return fail(format!("holdout must lie in [0, 1), got {}", self.holdout));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be positive".into());
        }
        if let Some(Some(r)) = self.restart_epoch {
            if r == 0 || r >= self.epochs {
                return fail(format!("restart_epoch {r} lies outside a {}-epoch run", self.epochs));
            }
        }
        for (k, v) in [("euclidean_lr", self.euclidean_lr), ("riemannian_lr", self.riemannian_lr), ("emb_lr", self.emb_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{k} must be positive"));
            }
        }
        Ok(())
    }

    /// Resolved settings as `key=value` lines, in key order.
    pub fn lines(&self) -> Vec<String> {
        let p = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let restart = match self.restart_epoch {
            None => "midpoint".to_string(),
            Some(None) => "none".to_string(),
            Some(Some(r)) => r.to_string(),
        };
        let policy = match self.lr_policy {
            LrPolicy::Cosine => "cosine".to_string(),
            LrPolicy::Decay { .. } => "decay".to_string(),
        };
        let decay = match self.lr_policy {
            LrPolicy::Decay { factor } => factor.to_string(),
            LrPolicy::Cosine => String::new(),
        };
        let mut out = vec![
            ("seed", self.seed.to_string()),
            ("geometry", self.geometry.to_string()),
            ("dim", self.dim.to_string()),
            ("window", self.window.to_string()),
            ("negatives", self.negatives.to_string()),
            ("theta", self.theta.to_string()),
            ("emb_lr", self.emb_lr.to_string()),
            ("emb_epochs", self.emb_epochs.to_string()),
            ("min_count", self.min_count.to_string()),
            ("alpha", self.alpha.to_string()),
            ("keep_whitespace", self.keep_whitespace.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("head_dim", self.head_dim.to_string()),
            ("ffn_dim", self.ffn_dim.to_string()),
            ("dropout", self.dropout.to_string()),
            ("max_seq_len", self.max_seq_len.to_string()),
            ("residual", self.residual.to_string()),
            ("pe_scale", self.pe_scale.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("euclidean_lr", self.euclidean_lr.to_string()),
            ("riemannian_lr", self.riemannian_lr.to_string()),
            ("restart_epoch", restart),
            ("lr_policy", policy),
            ("lr_decay", decay),
            ("holdout", self.holdout.to_string()),
            ("classes", self.classes.to_string()),
            ("composites", self.composites.to_string()),
            ("per_class", self.per_class.to_string()),
            ("rows", self.rows.map_or("auto".into(), |r| r.to_string())),
            ("vocab_size", self.vocab_size.to_string()),
            ("max_noise", self.max_noise.to_string()),
            ("corpus", p(&self.corpus)),
            ("dataset", p(&self.dataset)),
            ("embeddings", p(&self.embeddings)),
            ("model", p(&self.model)),
            ("out", p(&self.out)),
            ("metrics", p(&self.metrics)),
        ];
        if matches!(self.lr_policy, LrPolicy::Cosine) {
            out.retain(|(k, _)| *k != "lr_decay");
        }
        out.sort_by(|a, b| a.0.cmp(b.0));
        out.into_iter().map(|(k, v)| format!("{k}={v}")).collect()
    }

    pub fn skipgram(&self) -> SkipGramConfig {
        SkipGramConfig {
            geometry: self.geometry,
            dim: self.dim,
            window: self.window,
            negatives: self.negatives,
            theta: self.theta,
            lr: self.emb_lr,
            epochs: self.emb_epochs,
            seed: self.seed,
            min_count: self.min_count,
            alpha: self.alpha,
            subsample: None,
        }
    }

    /// Classifier shape; hyperboloid settings train a Poincaré-ball model.
    pub fn transformer(&self, num_classes: usize) -> TransformerConfig {
        let geometry = match self.geometry {
            GeometryTag::Euclidean => GeometryTag::Euclidean,
            _ => GeometryTag::Poincare,
        };
        TransformerConfig {
            layers: self.layers,
            heads: self.heads,
            model_dim: self.dim,
            head_dim: self.head_dim,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
            geometry,
            max_seq_len: self.max_seq_len,
            num_classes,
            c: 1.0,
            residual: self.residual,
            pe_scale: self.pe_scale,
        }
    }

    pub fn training(&self) -> TrainConfig {
        let restart_epoch = match self.restart_epoch {
            None => RestartSchedule::midpoint(self.epochs).restart_epoch,
            Some(r) => r,
        };
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: OptimizerConfig {
                euclidean_lr: self.euclidean_lr,
                riemannian_lr: self.riemannian_lr,
                rho: DEFAULT_RHO,
                eps: DEFAULT_EPS,
            },
            schedule: RestartSchedule { restart_epoch, epochs: self.epochs, policy: self.lr_policy },
            seed: self.seed,
        }
    }
}
