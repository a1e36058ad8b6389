//! Randomised invariant suites over the geometry kernels.
//!
//! Each suite draws its samples from a seeded generator and reports the
//! largest violation it saw, so the same options always give the same report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::vecops::{max_abs_diff, norm, scale};
use super::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    /// Passes when the measured value is strictly below the threshold.
    Below,
    /// Passes when the measured value is strictly above the threshold.
    Above,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub comparison: Comparison,
    pub samples: usize,
    pub passed: bool,
}

impl SuiteReport {
    fn new(name: &'static str, value: f64, threshold: f64, comparison: Comparison, samples: usize) -> Self {
        let passed = match comparison {
            Comparison::Below => value < threshold,
            Comparison::Above => value > threshold,
        };
        Self { name, value, threshold, comparison, samples, passed }
    }
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let op = match self.comparison {
            Comparison::Below => "<",
            Comparison::Above => ">",
        };
        write!(
            f,
            "{:<22} {} value={:.3e} (need {} {:.0e}, n={})",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.value,
            op,
            self.threshold,
            self.samples
        )
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    pub dim: usize,
    /// Ball-to-hyperboloid map exercised by the isometry suite.
    pub inverse: InverseProjection,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { seed: 0x6779_726f, dim: 5, inverse: InverseProjection::Squared }
    }
}

pub const SUITE_NAMES: [&str; 8] = [
    "gyro_axioms",
    "non_commutativity",
    "scalar_distributivity",
    "exp_log_poincare",
    "exp_log_hyperboloid",
    "bias_translation",
    "isometry",
    "parallel_transport",
];

pub fn run_all(opts: &SuiteOptions) -> Vec<SuiteReport> {
    vec![
        gyro_axioms(opts, 10_000),
        non_commutativity(opts, 100),
        scalar_distributivity(opts, 1_000),
        exp_log_poincare(opts, 1_000),
        exp_log_hyperboloid(opts, 1_000),
        bias_translation(opts, 1_000),
        isometry(opts, 1_000),
        parallel_transport(opts, 1_000),
    ]
}

fn rng_for(opts: &SuiteOptions, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(opts.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn direction(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let nv = norm(&v);
        if nv > 1e-6 {
            return scale(&v, 1.0 / nv);
        }
    }
}

/// Unit-ball point with radius uniform in `[0, max_r]`.
pub fn random_ball_point(rng: &mut impl Rng, n: usize, max_r: f64) -> PoincarePoint {
    let r = rng.random_range(0.0..max_r);
    PoincarePoint::new(scale(&direction(rng, n), r), 1.0).expect("inside the ball")
}

/// Hyperboloid point at geodesic distance uniform in `[0, max_d]` from the apex.
pub fn random_hyperboloid_point(rng: &mut impl Rng, n: usize, max_d: f64) -> HyperboloidPoint {
    let d = rng.random_range(0.0..max_d);
    HyperboloidPoint::from_spatial(&scale(&direction(rng, n), d.sinh()))
}

/// Tangent vector at `x` with Lorentzian length uniform in `[0, max_len]`.
fn random_hyperboloid_tangent(rng: &mut impl Rng, x: &HyperboloidPoint, max_len: f64) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..x.coords().len()).map(|_| rng.sample(StandardNormal)).collect();
        let t = tangent_project(x, &raw).expect("matching length").into_vec();
        let ln = lorentz_inner(&t, &t).expect("matching length").max(0.0).sqrt();
        if ln > 1e-6 {
            return scale(&t, rng.random_range(0.0..max_len) / ln);
        }
    }
}

/// Left identity, left inverse, gyroassociativity and gyration isometry.
pub fn gyro_axioms(opts: &SuiteOptions, samples: usize) -> SuiteReport {
    let mut rng = rng_for(opts, 1);
    let origin = PoincarePoint::origin(opts.dim, 1.0);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let a = random_ball_point(&mut rng, opts.dim, 0.9);
        let b = random_ball_point(&mut rng, opts.dim, 0.9);
        let v = random_ball_point(&mut rng, opts.dim, 0.9);
        let id = mobius_add(&origin, &a).unwrap();
        worst = worst.max(max_abs_diff(id.coords(), a.coords()));
        let inv = mobius_add(&mobius_neg(&a), &a).unwrap();
        worst = worst.max(inv.norm());
        let lhs = mobius_add(&a, &mobius_add(&b, &v).unwrap()).unwrap();
        let g = gyration(&a, &b, &v).unwrap();
        let rhs = mobius_add(&mobius_add(&a, &b).unwrap(), &g).unwrap();
        worst = worst.max(max_abs_diff(lhs.coords(), rhs.coords()));
        worst = worst.max((g.norm() - v.norm()).abs());
    }
    SuiteReport::new("gyro_axioms", worst, 1e-8, Comparison::Below, samples)
}

/// Largest `‖a⊕b − b⊕a‖` found; must clear 1e−3.
pub fn non_commutativity(opts: &SuiteOptions, samples: usize) -> SuiteReport {
    let mut rng = rng_for(opts, 2);
    let mut best = 0.0f64;
    for _ in 0..samples {
        let a = random_ball_point(&mut rng, opts.dim, 0.9);
        let b = random_ball_point(&mut rng, opts.dim, 0.9);
        let ab = mobius_add(&a, &b).unwrap();
        let ba = mobius_add(&b, &a).unwrap();
        best = best.max(norm(&super::vecops::sub(ab.coords(), ba.coords())));
    }
    SuiteReport::new("non_commutativity", best, 1e-3, Comparison::Above, samples)
}

/// `k ⊗ x = x ⊕ … ⊕ x` (left-associated) for `k = 1..=5`.
pub fn scalar_distributivity(opts: &SuiteOptions, samples: usize) -> SuiteReport {
    let mut rng = rng_for(opts, 3);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        // keep 5⊗x away from the boundary margin
        let x = random_ball_point(&mut rng, opts.dim, 0.75);
        let mut acc = x.clone();
        for k in 1..=5 {
            if k > 1 {
                acc = mobius_add(&acc, &x).unwrap();
            }
            let direct = mobius_scalar_mul(k as f64, &x);
            worst = worst.max(max_abs_diff(acc.coords(), direct.coords()));
        }
    }
    SuiteReport::new("scalar_distributivity", worst, 1e-7, Comparison::Below, samples)
}

/// `log_x ∘ exp_x` and `exp_x ∘ log_x` on the ball. Tangent vectors have
/// metric length at most 2, i.e. Euclidean length at most `2/λ_x`.
pub fn exp_log_poincare(opts: &SuiteOptions, samples: usize) -> SuiteReport {
    let mut rng = rng_for(opts, 4);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let x = random_ball_point(&mut rng, opts.dim, 0.9);
        let len = rng.random_range(0.0..2.0) / conformal_factor(&x);
        let v = scale(&direction(&mut rng, opts.dim), len);
        let y = exp_map_poincare(&x, &v).unwrap();
        let back = log_map_poincare(&x, &y).unwrap();
        worst = worst.max(max_abs_diff(back.vec(), &v));
        let z = random_ball_point(&mut rng, opts.dim, 0.9);
        let w = log_map_poincare(&x, &z).unwrap();
        let again = exp_map_poincare(&x, w.vec()).unwrap();
        worst = worst.max(max_abs_diff(again.coords(), z.coords()));
    }
    SuiteReport::new("exp_log_poincare", worst, 1e-8, Comparison::Below, samples)
}

/// `log_x ∘ exp_x` on the hyperboloid, tangent length at most 2, and the
/// carrier invariant of every `exp_x` output.
pub fn exp_log_hyperboloid(opts: &SuiteOptions, samples: usize) -> SuiteReport {
    let mut rng = rng_for(opts, 5);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let x = random_hyperboloid_point(&mut rng, opts.dim, 2.0);
        let v = random_hyperboloid_tangent(&mut rng, &x, 2.0);
        let y = exp_map_hyperboloid(&x, &v).unwrap();
        worst = worst.max((lorentz_inner(y.coords(), y.coords()).unwrap() + 1.0).abs());
        let back = log_map_hyperboloid(&x, &y).unwrap();
        worst = worst.max(max_abs_diff(back.vec(), &v));
    }
    SuiteReport::new("exp_log_hyperboloid", worst, 1e-8, Comparison::Below, samples)
}

pub fn bias_translation(opts: &SuiteOptions, samples: usize) -> SuiteReport {
    let mut rng = rng_for(opts, 6);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let x = random_ball_point(&mut rng, opts.dim, 0.9);
        let b = random_ball_point(&mut rng, opts.dim, 0.9);
        let t = bias_translate(&x, &b).unwrap();
        let m = mobius_add(&x, &b).unwrap();
        worst = worst.max(max_abs_diff(t.coords(), m.coords()));
    }
    SuiteReport::new("bias_translation", worst, 1e-8, Comparison::Below, samples)
}

/// Distances survive conversion in both directions and conversions invert
/// each other. Distance errors are held to 1e−6 and round-trip drift to
/// 1e−9; the report is normalised so that both share the threshold 1.
pub fn isometry(opts: &SuiteOptions, samples: usize) -> SuiteReport {
    let mut rng = rng_for(opts, 7);
    let mut dist_err = 0.0f64;
    let mut drift = 0.0f64;
    let lift = |p: &PoincarePoint| to_hyperboloid_with(p, opts.inverse).unwrap();
    for _ in 0..samples {
        let u = random_hyperboloid_point(&mut rng, opts.dim, 3.0);
        let v = random_hyperboloid_point(&mut rng, opts.dim, 3.0);
        let dh = hyperboloid_distance(&u, &v).unwrap();
        let dp = poincare_distance(&to_poincare(&u), &to_poincare(&v)).unwrap();
        dist_err = dist_err.max((dh - dp).abs());

        let a = random_ball_point(&mut rng, opts.dim, 0.9);
        let b = random_ball_point(&mut rng, opts.dim, 0.9);
        let dp = poincare_distance(&a, &b).unwrap();
        let dh = hyperboloid_distance(&lift(&a), &lift(&b)).unwrap();
        dist_err = dist_err.max((dh - dp).abs());

        drift = drift.max(max_abs_diff(to_poincare(&lift(&a)).coords(), a.coords()));
        drift = drift.max(max_abs_diff(lift(&to_poincare(&u)).coords(), u.coords()));
    }
    let value = (dist_err / 1e-6).max(drift / 1e-9);
    SuiteReport::new("isometry", value, 1.0, Comparison::Below, samples)
}

/// Transported vectors are tangent at the target and keep their length.
pub fn parallel_transport(opts: &SuiteOptions, samples: usize) -> SuiteReport {
    let mut rng = rng_for(opts, 8);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let x = random_hyperboloid_point(&mut rng, opts.dim, 1.5);
        let y = random_hyperboloid_point(&mut rng, opts.dim, 1.5);
        let w = TangentVector::new(x.clone(), random_hyperboloid_tangent(&mut rng, &x, 1.0))
            .expect("projected vector is tangent");
        let out = hyperboloid_parallel_transport(&x, &y, &w).unwrap();
        worst = worst.max(lorentz_inner(y.coords(), out.vec()).unwrap().abs());
        let before = lorentz_inner(w.vec(), w.vec()).unwrap();
        let after = lorentz_inner(out.vec(), out.vec()).unwrap();
        worst = worst.max((before - after).abs());
    }
    SuiteReport::new("parallel_transport", worst, 1e-8, Comparison::Below, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes_and_is_named_once() {
        let reports = run_all(&SuiteOptions::default());
        let names: Vec<_> = reports.iter().map(|r| r.name).collect();
        assert_eq!(names, SUITE_NAMES);
        for r in &reports {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn linear_inverse_breaks_isometry() {
        let opts = SuiteOptions { inverse: InverseProjection::Linear, ..Default::default() };
        assert!(!isometry(&opts, 100).passed);
    }

    #[test]
    fn reports_are_reproducible() {
        let o = SuiteOptions::default();
        assert_eq!(gyro_axioms(&o, 200), gyro_axioms(&o, 200));
    }
}
