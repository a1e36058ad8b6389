use super::point::{PoincarePoint, TangentVector};
use super::vecops::{axpby, dot, norm, norm_sq, scale};
use super::{GeometryError, Result};
use crate::diffcore::Tensor;

fn check_pair(x: &PoincarePoint, y: &PoincarePoint) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: x.dim(),
            actual: y.dim(),
        });
    }
    if x.c() != y.c() {
        return Err(GeometryError::RadiusMismatch(x.c(), y.c()));
    }
    Ok(())
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(GeometryError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

pub(crate) fn mobius_add_raw(x: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let c2 = c * c;
    let xy = dot(x, y);
    let x2 = norm_sq(x);
    let y2 = norm_sq(y);
    let a = 1.0 + 2.0 * xy / c2 + y2 / c2;
    let b = 1.0 - x2 / c2;
    let den = 1.0 + 2.0 * xy / c2 + x2 * y2 / (c2 * c2);
    axpby(a / den, x, b / den, y)
}

/// `tanh`-rescaling of a direction: `c·tanh(t)·u/‖u‖`, zero when `u` is zero.
fn along(u: &[f64], t: f64, c: f64) -> Vec<f64> {
    let n = norm(u);
    if n == 0.0 {
        return vec![0.0; u.len()];
    }
    scale(u, c * t.tanh() / n)
}

pub(crate) fn exp0_raw(v: &[f64], c: f64) -> Vec<f64> {
    along(v, norm(v) / c, c)
}

pub(crate) fn log0_raw(y: &[f64], c: f64) -> Vec<f64> {
    let n = norm(y);
    if n == 0.0 {
        return vec![0.0; y.len()];
    }
    scale(y, c * (n / c).atanh() / n)
}

/// Möbius addition `x ⊕_c y`.
pub fn mobius_add(x: &PoincarePoint, y: &PoincarePoint) -> Result<PoincarePoint> {
    check_pair(x, y)?;
    Ok(PoincarePoint::projected(
        mobius_add_raw(x.coords(), y.coords(), x.c()),
        x.c(),
    ))
}

/// The gyrogroup inverse `⊖x`, which is plain coordinate negation.
pub fn mobius_neg(x: &PoincarePoint) -> PoincarePoint {
    PoincarePoint::projected(scale(x.coords(), -1.0), x.c())
}

/// `gyr[a,b]v = ⊖(a ⊕ b) ⊕ (a ⊕ (b ⊕ v))`.
pub fn gyration(a: &PoincarePoint, b: &PoincarePoint, v: &PoincarePoint) -> Result<PoincarePoint> {
    check_pair(a, b)?;
    check_pair(a, v)?;
    let ab = mobius_add(a, b)?;
    let abv = mobius_add(a, &mobius_add(b, v)?)?;
    mobius_add(&mobius_neg(&ab), &abv)
}

/// Möbius scalar multiplication `r ⊗_c x`.
pub fn mobius_scalar_mul(r: f64, x: &PoincarePoint) -> PoincarePoint {
    let c = x.c();
    let n = x.norm();
    if n == 0.0 {
        return PoincarePoint::origin(x.dim(), c);
    }
    PoincarePoint::projected(along(x.coords(), r * (n / c).atanh(), c), c)
}

/// Conformal factor `λ_x = 2 / (1 − ‖x‖²/c²)`.
pub fn conformal_factor(x: &PoincarePoint) -> f64 {
    let c = x.c();
    2.0 / (1.0 - norm_sq(x.coords()) / (c * c))
}

pub fn exp_map_poincare(x: &PoincarePoint, v: &[f64]) -> Result<PoincarePoint> {
    check_len(x.dim(), v.len())?;
    let c = x.c();
    let nv = norm(v);
    if nv == 0.0 {
        return Ok(x.clone());
    }
    let step = along(v, conformal_factor(x) * nv / (2.0 * c), c);
    Ok(PoincarePoint::projected(
        mobius_add_raw(x.coords(), &step, c),
        c,
    ))
}

pub fn log_map_poincare(x: &PoincarePoint, y: &PoincarePoint) -> Result<TangentVector<PoincarePoint>> {
    check_pair(x, y)?;
    let c = x.c();
    let z = mobius_add_raw(&scale(x.coords(), -1.0), y.coords(), c);
    let nz = norm(&z);
    let vec = if nz == 0.0 || x == y {
        vec![0.0; z.len()]
    } else {
        let k = 2.0 * c / conformal_factor(x) * (nz / c).atanh() / nz;
        scale(&z, k)
    };
    Ok(TangentVector::new_unchecked(x.clone(), vec))
}

/// Geodesic distance `2c·atanh(‖⊖x ⊕ y‖/c)`.
pub fn poincare_distance(x: &PoincarePoint, y: &PoincarePoint) -> Result<f64> {
    check_pair(x, y)?;
    let c = x.c();
    let z = mobius_add_raw(&scale(x.coords(), -1.0), y.coords(), c);
    Ok(2.0 * c * (norm(&z) / c).atanh())
}

/// Parallel transport of `v ∈ T_0` to `T_x`, i.e. `(λ_0/λ_x)·v`.
pub fn transport_from_origin_poincare(x: &PoincarePoint, v: &[f64]) -> Result<TangentVector<PoincarePoint>> {
    check_len(x.dim(), v.len())?;
    let k = 2.0 / conformal_factor(x);
    Ok(TangentVector::new_unchecked(x.clone(), scale(v, k)))
}

/// Möbius matrix-vector product `M ⊗_c x` for an `m × n` matrix.
pub fn mobius_matvec(m: &Tensor, x: &PoincarePoint) -> Result<PoincarePoint> {
    check_len(m.cols(), x.dim())?;
    let c = x.c();
    let mx = m.matvec(x.coords());
    let nx = x.norm();
    let nmx = norm(&mx);
    if nmx == 0.0 || nx == 0.0 {
        return Ok(PoincarePoint::origin(m.rows(), c));
    }
    let t = nmx / nx * (nx / c).atanh();
    Ok(PoincarePoint::projected(along(&mx, t, c), c))
}

/// Bias translation through the tangent space: `exp_x(P_{0→x}(log_0 b))`.
///
/// Agrees with `mobius_add(x, b)`; kept as a separate route so the two can be
/// checked against each other.
pub fn bias_translate(x: &PoincarePoint, b: &PoincarePoint) -> Result<PoincarePoint> {
    check_pair(x, b)?;
    let origin = PoincarePoint::origin(x.dim(), x.c());
    let tb = log_map_poincare(&origin, b)?;
    let moved = transport_from_origin_poincare(x, tb.vec())?;
    exp_map_poincare(x, moved.vec())
}

/// Lifts a Euclidean map through the origin: `exp_0(f(log_0 x))`.
pub fn lift_map<F>(f: F, x: &PoincarePoint) -> PoincarePoint
where
    F: FnOnce(&[f64]) -> Vec<f64>,
{
    let c = x.c();
    let out = f(&log0_raw(x.coords(), c));
    PoincarePoint::projected(exp0_raw(&out, c), c)
}
