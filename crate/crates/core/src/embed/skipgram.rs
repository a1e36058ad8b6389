use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{generate_pairs, EmbedError, Result, TrainingPair, Vocabulary};
use crate::diffcore::Tensor;
use crate::geometry::{exp_map_hyperboloid, lorentz_inner, tangent_project, HyperboloidPoint};
use crate::GeometryTag;

/// Standard deviation of the tangent noise used to place initial points
/// around the hyperboloid apex.
pub const INIT_SIGMA: f64 = 0.01;

/// Centre (`A`) and context (`B`) embeddings, one row per vocabulary id.
/// Hyperboloid rows carry `dim + 1` Minkowski coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrices {
    pub geometry: GeometryTag,
    pub dim: usize,
    pub a: Tensor,
    pub b: Tensor,
}

pub(crate) fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `⟨a,b⟩_L + θ`.
pub fn hyperboloid_logit(a: &HyperboloidPoint, b: &HyperboloidPoint, theta: f64) -> f64 {
    crate::geometry::lorentz_inner(a.coords(), b.coords()).expect("points of equal dimension") + theta
}

/// Flips the sign of the time-like (last) coordinate.
fn metric_flip(v: &mut [f64]) {
    if let Some(t) = v.last_mut() {
        *t = -*t;
    }
}

impl EmbeddingMatrices {
    pub fn width(&self) -> usize {
        match self.geometry {
            GeometryTag::Hyperboloid => self.dim + 1,
            _ => self.dim,
        }
    }

    pub fn vocab_len(&self) -> usize {
        self.a.rows()
    }

    /// Random initial matrices. Hyperboloid rows are exp-mapped Gaussian
    /// tangent vectors at the apex; Euclidean rows follow the usual
    /// word2vec scheme (small uniform `A`, zero `B`).
    pub fn init(geometry: GeometryTag, vocab_len: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let (a, b) = match geometry {
            GeometryTag::Hyperboloid => {
                let origin = HyperboloidPoint::origin(dim);
                let normal = Normal::new(0.0, INIT_SIGMA).expect("valid sigma");
                let mut draw = || -> Tensor {
                    let mut t = Tensor::zeros(vocab_len, dim + 1);
                    for r in 0..vocab_len {
                        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
                        v.push(0.0);
                        let p = exp_map_hyperboloid(&origin, &v).expect("tangent at apex");
                        t.row_slice_mut(r).copy_from_slice(p.coords());
                    }
                    t
                };
                let a = draw();
                (a, draw())
            }
            GeometryTag::Euclidean => {
                let mut a = Tensor::zeros(vocab_len, dim);
                let half = 0.5 / dim as f64;
                for v in a.data_mut() {
                    *v = rng.random_range(-half..half);
                }
                (a, Tensor::zeros(vocab_len, dim))
            }
            GeometryTag::Poincare => return Err(EmbedError::UnsupportedGeometry(geometry)),
        };
        Ok(Self { geometry, dim, a, b })
    }

    fn logit(&self, center: usize, context: usize, theta: f64) -> f64 {
        let a = self.a.row_slice(center);
        let b = self.b.row_slice(context);
        match self.geometry {
            GeometryTag::Hyperboloid => crate::geometry::lorentz_inner(a, b).expect("equal widths") + theta,
            _ => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }

    /// The rows that are exported (`A`).
    pub fn export_rows(&self) -> &Tensor {
        &self.a
    }

    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        for (name, m) in [("A", &self.a), ("B", &self.b)] {
            if !m.is_finite() {
                return Err(EmbedError::NonFiniteRow(name, 0));
            }
            if self.geometry == GeometryTag::Hyperboloid {
                for r in 0..m.rows() {
                    let row = m.row_slice(r);
                    let q = lorentz_inner(row, row).expect("equal widths");
                    if (q + 1.0).abs() > tol || row[self.dim] <= 0.0 {
                        return Err(EmbedError::OffManifold(name, r, q));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `Σ_i log σ(±logit_i)` over the positive context (+) and the negatives (−).
pub fn pair_log_likelihood(pair: &TrainingPair, emb: &EmbeddingMatrices, theta: f64) -> Result<f64> {
    let mut total = 0.0;
    for (w, y) in pair.samples() {
        let z = emb.logit(pair.center, w, theta);
        if !z.is_finite() {
            return Err(EmbedError::NonFiniteLogit);
        }
        total += log_sigmoid(if y > 0.0 { z } else { -z });
    }
    Ok(total)
}

/// Ambient gradients of the pair log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradients {
    pub center: Vec<f64>,
    /// One entry per distinct context row, in order of first appearance. Rows
    /// that occur several times in the sample set accumulate every
    /// occurrence.
    pub contexts: Vec<(usize, Vec<f64>)>,
}

fn pair_gradients(pair: &TrainingPair, emb: &EmbeddingMatrices, theta: f64) -> PairGradients {
    let width = emb.width();
    let a = emb.a.row_slice(pair.center);
    let mut center = vec![0.0; width];
    let mut contexts: Vec<(usize, Vec<f64>)> = Vec::new();
    for (w, y) in pair.samples() {
        let b = emb.b.row_slice(w);
        let k = y - sigmoid(emb.logit(pair.center, w, theta));
        for (c, bv) in center.iter_mut().zip(b) {
            *c += k * bv;
        }
        let slot = match contexts.iter().position(|(id, _)| *id == w) {
            Some(i) => i,
            None => {
                contexts.push((w, vec![0.0; width]));
                contexts.len() - 1
            }
        };
        for (g, av) in contexts[slot].1.iter_mut().zip(a) {
            *g += k * av;
        }
    }
    if emb.geometry == GeometryTag::Hyperboloid {
        metric_flip(&mut center);
        for (_, g) in contexts.iter_mut() {
            metric_flip(g);
        }
    }
    PairGradients { center, contexts }
}

/// Gradients of the hyperboloid pair log-likelihood with respect to the
/// ambient coordinates of the centre row and each sampled context row.
///
/// The closed forms `Σ (y − σ)·B` and `(y − σ)·A` are Minkowski gradients;
/// negating their last coordinate turns them into the ordinary partial
/// derivatives returned here.
pub fn minkowski_gradients(pair: &TrainingPair, emb: &EmbeddingMatrices, theta: f64) -> Result<PairGradients> {
    if emb.geometry != GeometryTag::Hyperboloid {
        return Err(EmbedError::UnsupportedGeometry(emb.geometry));
    }
    Ok(pair_gradients(pair, emb, theta))
}

/// One Riemannian SGD step on the hyperboloid for a loss with ambient
/// partial derivatives `ambient_grad`: the metric flip turns them into the
/// Minkowski gradient, which is projected onto the tangent space and
/// followed backwards along the exponential map.
pub fn rsgd_step_hyperboloid(param: &HyperboloidPoint, ambient_grad: &[f64], lr: f64) -> Result<HyperboloidPoint> {
    if ambient_grad.iter().any(|g| !g.is_finite()) {
        return Err(EmbedError::NonFiniteGradient);
    }
    let mut h = ambient_grad.to_vec();
    metric_flip(&mut h);
    let tangent = tangent_project(param, &h)?;
    let step: Vec<f64> = tangent.vec().iter().map(|v| -lr * v).collect();
    Ok(exp_map_hyperboloid(param, &step)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkipGramConfig {
    pub geometry: GeometryTag,
    pub dim: usize,
    /// Context radius μ.
    pub window: usize,
    /// Negatives per pair m.
    pub negatives: usize,
    /// Additive shift on the Lorentzian logit.
    pub theta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub min_count: u64,
    /// Noise-distribution exponent.
    pub alpha: f64,
    /// Frequent-token subsampling threshold; off when `None`.
    pub subsample: Option<f64>,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryTag::Hyperboloid,
            dim: 10,
            window: 5,
            negatives: 5,
            theta: 1.0,
            lr: 0.05,
            epochs: 5,
            seed: 0,
            min_count: 1,
            alpha: 0.75,
            subsample: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SkipGramOutput {
    pub vocab: Vocabulary,
    pub matrices: EmbeddingMatrices,
    /// Mean negative log-likelihood per pair, one entry per epoch.
    pub epoch_losses: Vec<f64>,
}

fn subsample(ids: &[usize], vocab: &Vocabulary, t: f64, rng: &mut impl Rng) -> Vec<usize> {
    let total: u64 = (0..vocab.len()).map(|i| vocab.count(i)).sum();
    ids.iter()
        .copied()
        .filter(|&id| {
            let f = vocab.count(id) as f64 / total as f64;
            let keep = ((t / f).sqrt()).min(1.0);
            rng.random::<f64>() < keep
        })
        .collect()
}

fn update_pair(pair: &TrainingPair, emb: &mut EmbeddingMatrices, cfg: &SkipGramConfig) -> Result<()> {
    let g = pair_gradients(pair, emb, cfg.theta);
    match emb.geometry {
        GeometryTag::Hyperboloid => {
            // descend on the negative log-likelihood
            let step = |row: &mut [f64], grad: &[f64]| -> Result<()> {
                let neg: Vec<f64> = grad.iter().map(|v| -v).collect();
                let p = HyperboloidPoint::renormalize(row)?;
                let next = rsgd_step_hyperboloid(&p, &neg, cfg.lr)?;
                row.copy_from_slice(next.coords());
                Ok(())
            };
            step(emb.a.row_slice_mut(pair.center), &g.center)?;
            for (w, grad) in &g.contexts {
                step(emb.b.row_slice_mut(*w), grad)?;
            }
        }
        _ => {
            for (v, d) in emb.a.row_slice_mut(pair.center).iter_mut().zip(&g.center) {
                *v += cfg.lr * d;
            }
            for (w, grad) in &g.contexts {
                for (v, d) in emb.b.row_slice_mut(*w).iter_mut().zip(grad) {
                    *v += cfg.lr * d;
                }
            }
        }
    }
    Ok(())
}

/// Trains skip-gram embeddings on a token stream. `on_epoch` receives the
/// 1-based epoch number and its mean loss.
pub fn train_skipgram<S: AsRef<str>>(
    tokens: &[S],
    cfg: &SkipGramConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<SkipGramOutput> {
    if cfg.dim == 0 || cfg.window == 0 {
        return Err(EmbedError::InvalidConfig("dim and window must be positive".into()));
    }
    let vocab = super::build_vocab(tokens.iter().map(AsRef::as_ref), cfg.min_count, cfg.alpha)?;
    let ids = vocab.encode(tokens);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut emb = EmbeddingMatrices::init(cfg.geometry, vocab.len(), cfg.dim, &mut rng)?;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let stream = match cfg.subsample {
            Some(t) => subsample(&ids, &vocab, t, &mut rng),
            None => ids.clone(),
        };
        if stream.len() < 2 {
            return Err(EmbedError::InvalidConfig("corpus too short for a single pair".into()));
        }
        let pairs = generate_pairs(&stream, cfg.window, cfg.negatives, &vocab, &mut rng);
        let mut total = 0.0;
        for (step, pair) in pairs.iter().enumerate() {
            let ll = pair_log_likelihood(pair, &emb, cfg.theta).map_err(|_| EmbedError::Diverged { epoch, step })?;
            total -= ll;
            update_pair(pair, &mut emb, cfg).map_err(|_| EmbedError::Diverged { epoch, step })?;
        }
        let mean = total / pairs.len() as f64;
        if !mean.is_finite() {
            return Err(EmbedError::Diverged { epoch, step: pairs.len() });
        }
        log::info!("epoch {epoch} loss {mean:.6}");
        on_epoch(epoch, mean);
        losses.push(mean);
    }
    emb.check_invariants(1e-6)?;
    Ok(SkipGramOutput { vocab, matrices: emb, epoch_losses: losses })
}
