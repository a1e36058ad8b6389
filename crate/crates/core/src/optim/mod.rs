//! RMSProp for Euclidean parameters, Riemannian SGD on the Poincaré ball, and
//! the single warm-restart schedule.

use std::collections::BTreeMap;

use crate::diffcore::Tensor;
use crate::geometry::{conformal_factor, exp_map_poincare, GeometryError, PoincarePoint};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),
    #[error("gradient shape {grad:?} does not match parameter {name} of shape {param:?}")]
    ShapeMismatch { name: String, param: [usize; 2], grad: [usize; 2] },
    #[error("restart epoch {restart} lies outside a {epochs}-epoch run")]
    RestartOutOfRange { restart: usize, epochs: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, OptimError>;

pub const DEFAULT_RHO: f64 = 0.9;
pub const DEFAULT_EPS: f64 = 1e-8;

/// One RMSProp update in place:
/// `acc ← ρ·acc + (1−ρ)·g²`, `p ← p − lr·g/√(acc + ε)`.
pub fn rmsprop_step(param: &mut [f64], grad: &[f64], acc: &mut [f64], lr: f64, rho: f64, eps: f64) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient("rmsprop".into()));
    }
    for ((p, g), a) in param.iter_mut().zip(grad).zip(acc.iter_mut()) {
        *a = rho * *a + (1.0 - rho) * g * g;
        *p -= lr * g / (*a + eps).sqrt();
    }
    Ok(())
}

/// Riemannian SGD on the ball: the Euclidean gradient is rescaled by the
/// inverse metric `1/λ²` and followed along the exponential map.
pub fn rsgd_step_poincare(param: &PoincarePoint, euclidean_grad: &[f64], lr: f64) -> Result<PoincarePoint> {
    if euclidean_grad.iter().any(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient("rsgd".into()));
    }
    let lam = conformal_factor(param);
    let k = -lr / (lam * lam);
    let step: Vec<f64> = euclidean_grad.iter().map(|g| k * g).collect();
    Ok(exp_map_poincare(param, &step)?)
}

/// How a parameter is stored and updated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamKind {
    /// Plain matrix, updated with RMSProp.
    Euclidean,
    /// Each row is a point of the Poincaré ball of radius `c`, updated with
    /// Riemannian SGD.
    Poincare { c: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub kind: ParamKind,
    pub value: Tensor,
}

/// Named parameters in a stable (sorted) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) {
        self.params.insert(name.into(), Param { kind, value });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> &Tensor {
        &self.params.get(name).unwrap_or_else(|| panic!("no parameter named {name}")).value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.params.get_mut(name).unwrap_or_else(|| panic!("no parameter named {name}")).value
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn size(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// RMSProp learning rate for Euclidean parameters.
    pub euclidean_lr: f64,
    /// Riemannian SGD learning rate for ball parameters.
    pub riemannian_lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { euclidean_lr: 1e-3, riemannian_lr: 0.05, rho: DEFAULT_RHO, eps: DEFAULT_EPS }
    }
}

/// Mutable optimizer state: RMSProp second moments, step counter and the
/// current learning-rate multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub accumulators: BTreeMap<String, Tensor>,
    pub steps: u64,
    pub lr_scale: f64,
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self { accumulators: BTreeMap::new(), steps: 0, lr_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self { config, state: OptimizerState::default() }
    }

    pub fn euclidean_lr(&self) -> f64 {
        self.config.euclidean_lr * self.state.lr_scale
    }

    pub fn riemannian_lr(&self) -> f64 {
        self.config.riemannian_lr * self.state.lr_scale
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(OptimError::NonFiniteGradient(name.clone()));
            }
        }
        let (elr, rlr) = (self.euclidean_lr(), self.riemannian_lr());
        for (name, p) in params.params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != p.value.shape() {
                return Err(OptimError::ShapeMismatch {
                    name: name.clone(),
                    param: p.value.shape(),
                    grad: g.shape(),
                });
            }
            match p.kind {
                ParamKind::Euclidean => {
                    let acc = self
                        .state
                        .accumulators
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
                    rmsprop_step(p.value.data_mut(), g.data(), acc.data_mut(), elr, self.config.rho, self.config.eps)?;
                }
                ParamKind::Poincare { c } => {
                    for r in 0..p.value.rows() {
                        let point = PoincarePoint::projected(p.value.row_slice(r).to_vec(), c);
                        let next = rsgd_step_poincare(&point, g.row_slice(r), rlr)?;
                        p.value.row_slice_mut(r).copy_from_slice(next.coords());
                    }
                }
            }
        }
        self.state.steps += 1;
        Ok(())
    }
}

/// Learning-rate shape between restarts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrPolicy {
    /// `factor^k` after `k` epochs into the current cycle.
    Decay { factor: f64 },
    /// Half-cosine from 1 towards 0 over the current cycle.
    Cosine,
}

/// One warm restart at `restart_epoch` (0-based), or none.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestartSchedule {
    pub restart_epoch: Option<usize>,
    pub epochs: usize,
    pub policy: LrPolicy,
}

pub const DEFAULT_DECAY: f64 = 0.95;

impl RestartSchedule {
    /// Restart at the midpoint of the run.
    pub fn midpoint(epochs: usize) -> Self {
        Self {
            restart_epoch: (epochs >= 2).then_some(epochs / 2),
            epochs,
            policy: LrPolicy::Decay { factor: DEFAULT_DECAY },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.restart_epoch {
            Some(r) if r == 0 || r >= self.epochs => {
                Err(OptimError::RestartOutOfRange { restart: r, epochs: self.epochs })
            }
            _ => Ok(()),
        }
    }

    fn cycle(&self, epoch: usize) -> (usize, usize) {
        match self.restart_epoch {
            Some(r) if epoch >= r => (epoch - r, self.epochs - r),
            Some(r) => (epoch, r),
            None => (epoch, self.epochs.max(1)),
        }
    }

    /// Learning-rate multiplier in effect during `epoch`.
    pub fn lr_multiplier(&self, epoch: usize) -> f64 {
        let (k, len) = self.cycle(epoch);
        match self.policy {
            LrPolicy::Decay { factor } => factor.powi(k as i32),
            LrPolicy::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * k as f64 / len as f64).cos()),
        }
    }
}

/// At the restart epoch, clears RMSProp accumulators and restores the initial
/// learning rate; otherwise leaves the state alone. Returns whether a restart
/// happened.
pub fn apply_restart(schedule: &RestartSchedule, epoch: usize, state: &mut OptimizerState) -> bool {
    if schedule.restart_epoch != Some(epoch) {
        return false;
    }
    state.accumulators.clear();
    state.lr_scale = 1.0;
    true
}

/// Per-epoch bookkeeping: applies the restart, then sets the multiplier.
pub fn begin_epoch(schedule: &RestartSchedule, epoch: usize, state: &mut OptimizerState) -> bool {
    let restarted = apply_restart(schedule, epoch, state);
    state.lr_scale = schedule.lr_multiplier(epoch);
    restarted
}
