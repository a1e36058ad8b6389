//! Poincaré ball and hyperboloid models of hyperbolic space.
//!
//! Everything in here is pure: functions take points by reference and return
//! fresh values. The Poincaré side follows the gyrovector formalism (Möbius
//! addition, scalar multiplication, gyrations); the hyperboloid side works in
//! Minkowski coordinates with the time-like coordinate stored last.

pub mod check;
mod hyperboloid;
mod point;
mod poincare;
pub(crate) mod vecops;

pub use hyperboloid::{
    exp_map_hyperboloid, hyperboloid_distance, hyperboloid_parallel_transport, lorentz_inner,
    log_map_hyperboloid, to_hyperboloid, to_hyperboloid_with, to_poincare, tangent_project,
    InverseProjection,
};
pub use point::{HyperboloidPoint, PoincarePoint, TangentVector, EPS_BOUNDARY};
pub use poincare::{
    bias_translate, conformal_factor, exp_map_poincare, gyration, lift_map, log_map_poincare,
    mobius_add, mobius_matvec, mobius_neg, mobius_scalar_mul, poincare_distance,
    transport_from_origin_poincare,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("ball radius mismatch: {0} vs {1}")]
    RadiusMismatch(f64, f64),
    #[error("ball radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("point with norm {norm} lies outside the ball of radius {radius}")]
    OutsideBall { norm: f64, radius: f64 },
    #[error("point is not on the hyperboloid: <x,x>_L = {inner}, time coordinate {time}")]
    OffHyperboloid { inner: f64, time: f64 },
    #[error("vector is not tangent at its base point: <x,v>_L = {0}")]
    NotTangent(f64),
    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),
    #[error("empty coordinate vector")]
    Empty,
    #[error("model conversion requires a unit ball, got radius {0}")]
    UnsupportedRadius(f64),
}

pub type Result<T> = std::result::Result<T, GeometryError>;
