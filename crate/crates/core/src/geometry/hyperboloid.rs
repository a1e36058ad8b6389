use super::point::{HyperboloidPoint, PoincarePoint, TangentVector};
use super::vecops::{axpby, norm_sq, scale};
use super::{GeometryError, Result};

#[inline]
pub(crate) fn lorentz(u: &[f64], v: &[f64]) -> f64 {
    let n = u.len() - 1;
    let spatial: f64 = u[..n].iter().zip(&v[..n]).map(|(a, b)| a * b).sum();
    spatial - u[n] * v[n]
}

/// `⟨u,v⟩_L = Σ_{i≤n} u_i v_i − u_{n+1} v_{n+1}`.
pub fn lorentz_inner(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(GeometryError::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    if u.is_empty() {
        return Err(GeometryError::Empty);
    }
    Ok(lorentz(u, v))
}

fn check_dims(a: &HyperboloidPoint, b: &HyperboloidPoint) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

/// `acosh(−⟨u,v⟩_L)`, with the argument clamped to at least 1.
pub fn hyperboloid_distance(u: &HyperboloidPoint, v: &HyperboloidPoint) -> Result<f64> {
    check_dims(u, v)?;
    Ok((-lorentz(u.coords(), v.coords())).max(1.0).acosh())
}

/// Projects an ambient vector onto `T_x`: `v + ⟨x,v⟩_L·x`.
pub fn tangent_project(x: &HyperboloidPoint, v: &[f64]) -> Result<TangentVector<HyperboloidPoint>> {
    let k = lorentz_inner(x.coords(), v)?;
    Ok(TangentVector::new_unchecked(
        x.clone(),
        axpby(1.0, v, k, x.coords()),
    ))
}

fn lorentz_norm(v: &[f64]) -> f64 {
    lorentz(v, v).max(0.0).sqrt()
}

/// Geodesic flow `cosh(‖v‖_L)·x + sinh(‖v‖_L)·v/‖v‖_L`.
pub fn exp_map_hyperboloid(x: &HyperboloidPoint, v: &[f64]) -> Result<HyperboloidPoint> {
    if v.len() != x.coords().len() {
        return Err(GeometryError::DimensionMismatch {
            expected: x.coords().len(),
            actual: v.len(),
        });
    }
    let nv = lorentz_norm(v);
    if nv == 0.0 {
        return Ok(x.clone());
    }
    let y = axpby(nv.cosh(), x.coords(), nv.sinh() / nv, v);
    HyperboloidPoint::renormalize(&y)
}

/// Inverse of [`exp_map_hyperboloid`]: the tangent vector at `x` pointing to
/// `y` with Lorentzian length `d(x, y)`.
pub fn log_map_hyperboloid(x: &HyperboloidPoint, y: &HyperboloidPoint) -> Result<TangentVector<HyperboloidPoint>> {
    check_dims(x, y)?;
    let xy = lorentz(x.coords(), y.coords());
    let dist = (-xy).max(1.0).acosh();
    let u = axpby(1.0, y.coords(), xy, x.coords());
    let nu = lorentz_norm(&u);
    let vec = if nu == 0.0 || dist == 0.0 {
        vec![0.0; u.len()]
    } else {
        scale(&u, dist / nu)
    };
    Ok(TangentVector::new_unchecked(x.clone(), vec))
}

/// Parallel transport of `w ∈ T_x` along the geodesic from `x` to `y`.
pub fn hyperboloid_parallel_transport(
    x: &HyperboloidPoint,
    y: &HyperboloidPoint,
    w: &TangentVector<HyperboloidPoint>,
) -> Result<TangentVector<HyperboloidPoint>> {
    check_dims(x, y)?;
    if w.vec().len() != x.coords().len() {
        return Err(GeometryError::DimensionMismatch {
            expected: x.coords().len(),
            actual: w.vec().len(),
        });
    }
    let v = log_map_hyperboloid(x, y)?;
    let len = lorentz_norm(v.vec());
    if len == 0.0 {
        return Ok(TangentVector::new_unchecked(y.clone(), w.vec().to_vec()));
    }
    let v_hat = scale(v.vec(), 1.0 / len);
    let k = lorentz(w.vec(), &v_hat);
    let along = axpby(len.sinh(), x.coords(), len.cosh(), &v_hat);
    let perp = axpby(1.0, w.vec(), -k, &v_hat);
    Ok(TangentVector::new_unchecked(y.clone(), axpby(k, &along, 1.0, &perp)))
}

/// Hyperboloid to unit Poincaré ball: `(x_1..x_n)/(x_{n+1} + 1)`.
pub fn to_poincare(x: &HyperboloidPoint) -> PoincarePoint {
    let n = x.dim();
    let t = x.coords()[n];
    PoincarePoint::projected(scale(&x.coords()[..n], 1.0 / (t + 1.0)), 1.0)
}

/// Denominator used by the ball-to-hyperboloid map.
///
/// `Squared` is the correct inverse of [`to_poincare`]; `Linear` uses
/// `1 − ‖y‖` and exists only so the invariant suites can demonstrate that
/// they catch it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InverseProjection {
    #[default]
    Squared,
    Linear,
}

/// Unit Poincaré ball to hyperboloid: `(2y, 1 + ‖y‖²)/(1 − ‖y‖²)`.
pub fn to_hyperboloid(y: &PoincarePoint) -> Result<HyperboloidPoint> {
    to_hyperboloid_with(y, InverseProjection::Squared)
}

pub fn to_hyperboloid_with(y: &PoincarePoint, denominator: InverseProjection) -> Result<HyperboloidPoint> {
    if y.c() != 1.0 {
        return Err(GeometryError::UnsupportedRadius(y.c()));
    }
    let y2 = norm_sq(y.coords());
    let den = match denominator {
        InverseProjection::Squared => 1.0 - y2,
        InverseProjection::Linear => 1.0 - y2.sqrt(),
    };
    let mut coords = scale(y.coords(), 2.0 / den);
    coords.push((1.0 + y2) / den);
    // Built directly: the linear variant is deliberately off the manifold.
    Ok(HyperboloidPoint::from_raw(coords))
}
