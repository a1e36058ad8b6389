use std::collections::BTreeMap;

use super::{DiffError, Tape, Tensor, Var};

/// Denominator floor of [`relative_error`], so coordinates whose true
/// derivative is zero compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

const LOSS: &str = "__gradcheck_loss";

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
    /// `(leaf name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Central differences of a plain function.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Vec<f64>, DiffError> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(DiffError::NonFiniteFunction);
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Compares the reverse-mode gradient of `loss` against central differences
/// for every named trainable leaf, re-evaluating by tape replay.
pub fn check_tape(tape: &mut Tape, loss: Var, h: f64, tol: f64) -> Result<GradCheckReport, DiffError> {
    let grads = tape.backward(loss)?;
    tape.name_output(LOSS, loss);
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut coordinates = 0;
    for (name, var) in tape.trainable() {
        let base = tape.value(var).clone();
        let analytic = grads
            .get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(base.rows(), base.cols()));
        for i in 0..base.len() {
            let mut eval = |delta: f64| -> Result<f64, DiffError> {
                let mut t = base.clone();
                t.data_mut()[i] += delta;
                let mut bind = BTreeMap::new();
                bind.insert(name.clone(), t);
                let out = tape.forward(&bind)?;
                Ok(out[LOSS].item())
            };
            let up = eval(h)?;
            let down = eval(-h)?;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic.data()[i], numeric);
            if err > max_rel || worst.is_none() {
                max_rel = max_rel.max(err);
                worst = Some((name.clone(), i));
            }
            coordinates += 1;
        }
        let mut restore = BTreeMap::new();
        restore.insert(name.clone(), base);
        tape.forward(&restore)?;
    }
    Ok(GradCheckReport { max_rel_error: max_rel, tol, passed: max_rel <= tol, worst, coordinates })
}

/// Builds `f` on a fresh tape at `point` and checks its gradient.
pub fn check_gradient(
    f: impl Fn(&mut Tape, Var) -> Var,
    point: &Tensor,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, DiffError> {
    let mut tape = Tape::new();
    let x = tape.param("x", point.clone());
    let y = f(&mut tape, x);
    if !tape.value(y).is_finite() {
        return Err(DiffError::NonFiniteFunction);
    }
    check_tape(&mut tape, y, h, tol)
}

#[cfg(test)]
mod tests {
    use super::super::Reduce;
    use super::*;

    #[test]
    fn squared_norm_passes_tightly() {
        let r = check_gradient(
            |t, x| {
                let d = t.dot(x, x);
                t.sum(d, Reduce::All)
            },
            &Tensor::row(&[0.3, -0.7, 1.2]),
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.coordinates, 3);
    }

    #[test]
    fn constant_has_zero_gradients() {
        let mut t = Tape::new();
        let x = t.param("x", Tensor::row(&[1.0, 2.0]));
        let k = t.scalar(4.0);
        let z = t.scale(x, 0.0);
        let s = t.sum(z, Reduce::All);
        let y = t.add(s, k);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0]);
        let r = check_tape(&mut t, y, 1e-5, 1e-6).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu has a kink at 0; the one-sided analytic value disagrees with
        // the symmetric difference
        let r = check_gradient(
            |t, x| {
                let y = t.relu(x);
                t.sum(y, Reduce::All)
            },
            &Tensor::row(&[0.0]),
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn plain_numeric_gradient() {
        let g = numeric_gradient(|x| x[0] * x[0] * x[1], &[2.0, 3.0], 1e-5).unwrap();
        assert!((g[0] - 12.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        assert!(numeric_gradient(|x| x[0].ln(), &[0.0], 1e-5).is_err());
    }
}
