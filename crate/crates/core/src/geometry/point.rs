use super::vecops::{dot, norm, scale};
use super::{GeometryError, Result};

/// Relative margin kept between any Poincaré point and the ball boundary.
///
/// Points with `‖x‖ ≥ c·(1 − EPS_BOUNDARY)` are radially pulled back onto that
/// sphere, which keeps `atanh(‖x‖/c)` finite.
pub const EPS_BOUNDARY: f64 = 1e-5;

const HYPERBOLOID_TOL: f64 = 1e-9;

fn check_finite(coords: &[f64]) -> Result<()> {
    match coords.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(GeometryError::NonFinite(i)),
        None => Ok(()),
    }
}

fn check_radius(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(GeometryError::InvalidRadius(c))
    }
}

/// A point strictly inside the Poincaré ball of radius `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoincarePoint {
    coords: Vec<f64>,
    c: f64,
}

impl PoincarePoint {
    /// Validates `coords` against the open ball. Points that are inside the
    /// ball but within the boundary margin are pulled back to it.
    pub fn new(coords: Vec<f64>, c: f64) -> Result<Self> {
        check_radius(c)?;
        check_finite(&coords)?;
        if coords.is_empty() {
            return Err(GeometryError::Empty);
        }
        let n = norm(&coords);
        if n >= c {
            return Err(GeometryError::OutsideBall { norm: n, radius: c });
        }
        Ok(Self::projected(coords, c))
    }

    /// Builds a point from arbitrary finite coordinates, rescaling anything on
    /// or beyond the boundary margin onto it.
    pub fn projected(coords: Vec<f64>, c: f64) -> Self {
        debug_assert!(c > 0.0);
        let max_norm = c * (1.0 - EPS_BOUNDARY);
        let n = norm(&coords);
        let coords = if n >= max_norm { scale(&coords, max_norm / n) } else { coords };
        Self { coords, c }
    }

    pub fn origin(dim: usize, c: f64) -> Self {
        Self { coords: vec![0.0; dim], c }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords)
    }

    pub fn is_origin(&self) -> bool {
        self.coords.iter().all(|&v| v == 0.0)
    }
}

/// A point on the upper sheet of the hyperboloid `⟨x,x⟩_L = −1`, stored as
/// `n + 1` Minkowski coordinates with the time-like one last.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperboloidPoint {
    coords: Vec<f64>,
}

impl HyperboloidPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        check_finite(&coords)?;
        if coords.len() < 2 {
            return Err(GeometryError::Empty);
        }
        let n = coords.len() - 1;
        let time = coords[n];
        let inner = dot(&coords[..n], &coords[..n]) - time * time;
        if time <= 0.0 || (inner + 1.0).abs() > HYPERBOLOID_TOL * time.max(1.0).powi(2) {
            return Err(GeometryError::OffHyperboloid { inner, time });
        }
        Ok(Self { coords })
    }

    /// Lifts the spatial part of `coords` back onto the hyperboloid by
    /// recomputing the time-like coordinate.
    pub fn renormalize(coords: &[f64]) -> Result<Self> {
        check_finite(coords)?;
        if coords.len() < 2 {
            return Err(GeometryError::Empty);
        }
        let n = coords.len() - 1;
        Ok(Self::from_spatial(&coords[..n]))
    }

    /// The unique hyperboloid point with the given spatial coordinates.
    pub fn from_spatial(spatial: &[f64]) -> Self {
        let mut coords = spatial.to_vec();
        coords.push((1.0 + dot(spatial, spatial)).sqrt());
        Self { coords }
    }

    /// Wraps coordinates without validation. Only the conversion routines use
    /// this, since one of them deliberately produces off-manifold output.
    pub(crate) fn from_raw(coords: Vec<f64>) -> Self {
        Self { coords }
    }

    /// The apex `(0, …, 0, 1)` of the hyperboloid of dimension `n`.
    pub fn origin(n: usize) -> Self {
        let mut coords = vec![0.0; n + 1];
        coords[n] = 1.0;
        Self { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// Manifold dimension `n` (one less than the number of coordinates).
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }
}

/// Base points that carry a tangent space.
pub trait Manifold: Clone {
    /// Number of coordinates a tangent vector at this point has.
    fn tangent_len(&self) -> usize;
    fn validate_tangent(&self, vec: &[f64]) -> Result<()>;
}

impl Manifold for PoincarePoint {
    fn tangent_len(&self) -> usize {
        self.dim()
    }

    fn validate_tangent(&self, _vec: &[f64]) -> Result<()> {
        Ok(())
    }
}

impl Manifold for HyperboloidPoint {
    fn tangent_len(&self) -> usize {
        self.coords.len()
    }

    fn validate_tangent(&self, vec: &[f64]) -> Result<()> {
        let inner = super::hyperboloid::lorentz(&self.coords, vec);
        let scale = 1.0 + norm(&self.coords) * norm(vec);
        if inner.abs() > HYPERBOLOID_TOL * scale {
            return Err(GeometryError::NotTangent(inner));
        }
        Ok(())
    }
}

/// A vector in the tangent space at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector<B> {
    base: B,
    vec: Vec<f64>,
}

impl<B: Manifold> TangentVector<B> {
    pub fn new(base: B, vec: Vec<f64>) -> Result<Self> {
        if vec.len() != base.tangent_len() {
            return Err(GeometryError::DimensionMismatch {
                expected: base.tangent_len(),
                actual: vec.len(),
            });
        }
        check_finite(&vec)?;
        base.validate_tangent(&vec)?;
        Ok(Self { base, vec })
    }

    pub(crate) fn new_unchecked(base: B, vec: Vec<f64>) -> Self {
        Self { base, vec }
    }

    pub fn base(&self) -> &B {
        &self.base
    }

    pub fn vec(&self) -> &[f64] {
        &self.vec
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.vec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_points_outside_ball() {
        assert!(matches!(
            PoincarePoint::new(vec![0.8, 0.7], 1.0),
            Err(GeometryError::OutsideBall { .. })
        ));
        assert!(PoincarePoint::new(vec![0.3, 0.4], 0.0).is_err());
        assert!(PoincarePoint::new(vec![f64::NAN], 1.0).is_err());
    }

    #[test]
    fn clamps_into_boundary_margin() {
        let p = PoincarePoint::new(vec![1.0 - 1e-7, 0.0], 1.0).unwrap();
        assert!((p.norm() - (1.0 - EPS_BOUNDARY)).abs() < 1e-15);
        let q = PoincarePoint::projected(vec![3.0, 4.0], 2.0);
        assert!((q.norm() - 2.0 * (1.0 - EPS_BOUNDARY)).abs() < 1e-12);
    }

    #[test]
    fn hyperboloid_validation() {
        let s1 = 1f64.sinh();
        let c1 = 1f64.cosh();
        assert!(HyperboloidPoint::new(vec![s1, 0.0, c1]).is_ok());
        assert!(HyperboloidPoint::new(vec![s1, 0.0, -c1]).is_err());
        assert!(HyperboloidPoint::new(vec![1.0, 0.0, 1.0]).is_err());
        let r = HyperboloidPoint::renormalize(&[0.3, -0.2, 7.0]).unwrap();
        let inner = super::super::lorentz_inner(r.coords(), r.coords()).unwrap();
        assert!((inner + 1.0).abs() < 1e-12);
    }

    #[test]
    fn tangent_vectors_are_checked() {
        let o = HyperboloidPoint::origin(2);
        assert!(TangentVector::new(o.clone(), vec![1.0, 2.0, 0.0]).is_ok());
        assert!(matches!(
            TangentVector::new(o.clone(), vec![1.0, 2.0, 3.0]),
            Err(GeometryError::NotTangent(_))
        ));
        assert!(TangentVector::new(o, vec![1.0]).is_err());
    }
}
