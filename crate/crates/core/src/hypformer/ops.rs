//! Point-wise reference implementations of the Transformer building blocks,
//! written directly against the geometry kernels. The trainable model in
//! `model.rs` builds the same computations on a tape.

use rand::Rng;

use super::{HypformerError, Result};
use crate::diffcore::Tensor;
use crate::geometry::{
    conformal_factor, exp_map_poincare, lift_map, log_map_poincare, mobius_add, mobius_matvec, mobius_neg,
    PoincarePoint,
};

/// Logit added to masked attention keys.
pub const MASK_LOGIT: f64 = -1e9;

/// Sinusoidal encoding: `sin(pos/10000^{2i/d})` at even and the matching
/// cosine at odd coordinates.
pub fn positional_encoding(pos: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let i2 = (j - j % 2) as f64;
            let angle = pos as f64 / 10000f64.powf(i2 / d as f64);
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

fn origin_like(x: &PoincarePoint) -> PoincarePoint {
    PoincarePoint::origin(x.dim(), x.c())
}

fn exp0(v: &[f64], c: f64) -> PoincarePoint {
    exp_map_poincare(&PoincarePoint::origin(v.len(), c), v).expect("matching length")
}

fn log0(x: &PoincarePoint) -> Vec<f64> {
    log_map_poincare(&origin_like(x), x).expect("matching length").into_vec()
}

/// `x ⊕ exp_0(pe)`.
pub fn attach_positions(x: &PoincarePoint, pe: &[f64]) -> Result<PoincarePoint> {
    let p = exp_map_poincare(&origin_like(x), pe)?;
    Ok(mobius_add(x, &p)?)
}

/// `softmax(QKᵀ/√d_k + mask)·V`, rows of `q`, `k`, `v` are positions.
/// `mask[j] == false` hides key `j`.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let dk = q.cols();
    if dk == 0 {
        return Err(HypformerError::Config("attention width must be positive".into()));
    }
    let scale = 1.0 / (dk as f64).sqrt();
    let mut out = Tensor::zeros(q.rows(), v.cols());
    for i in 0..q.rows() {
        let logits: Vec<f64> = (0..k.rows())
            .map(|j| {
                let s: f64 = q.row_slice(i).iter().zip(k.row_slice(j)).map(|(a, b)| a * b).sum();
                s * scale + if mask[j] { 0.0 } else { MASK_LOGIT }
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for (j, w) in e.iter().enumerate() {
            for (o, vv) in out.row_slice_mut(i).iter_mut().zip(v.row_slice(j)) {
                *o += w / z * vv;
            }
        }
    }
    Ok(out)
}

fn stack_log0(points: &[PoincarePoint]) -> Tensor {
    Tensor::from_rows(&points.iter().map(log0).collect::<Vec<_>>()).expect("equal dimensions")
}

/// Attention in the tangent space at the origin:
/// `exp_0(attention(log_0 Q, log_0 K, log_0 V))`.
pub fn hyperbolic_attention(
    q: &[PoincarePoint],
    k: &[PoincarePoint],
    v: &[PoincarePoint],
    mask: &[bool],
) -> Result<Vec<PoincarePoint>> {
    let c = q[0].c();
    let out = scaled_dot_attention(&stack_log0(q), &stack_log0(k), &stack_log0(v), mask)?;
    Ok((0..out.rows()).map(|r| exp0(out.row_slice(r), c)).collect())
}

/// `W ⊗ x` cut into `heads` equal coordinate blocks, each pulled back inside
/// the boundary margin.
pub fn split_heads(w: &Tensor, x: &PoincarePoint, heads: usize) -> Result<Vec<PoincarePoint>> {
    if heads == 0 || !w.rows().is_multiple_of(heads) {
        return Err(HypformerError::Config(format!("{} rows cannot be split into {heads} heads", w.rows())));
    }
    let y = mobius_matvec(w, x)?;
    let h = w.rows() / heads;
    Ok(y.coords().chunks(h).map(|s| PoincarePoint::projected(s.to_vec(), x.c())).collect())
}

/// `(M_1 ⊗ h_1) ⊕ (M_2 ⊗ h_2) ⊕ …`, left-associated in head order.
pub fn merge_heads(heads: &[PoincarePoint], m: &[Tensor]) -> Result<PoincarePoint> {
    if heads.len() != m.len() || heads.is_empty() {
        return Err(HypformerError::Config("one output matrix per head required".into()));
    }
    let mut acc = mobius_matvec(&m[0], &heads[0])?;
    for (h, mi) in heads.iter().zip(m).skip(1) {
        acc = mobius_add(&acc, &mobius_matvec(mi, h)?)?;
    }
    Ok(acc)
}

/// `M₂ ⊗ f⊗(M₁ ⊗ x ⊕ b₁) ⊕ b₂`, with `f` applied through the origin.
pub fn hyperbolic_ffn(
    x: &PoincarePoint,
    m1: &Tensor,
    b1: &PoincarePoint,
    m2: &Tensor,
    b2: &PoincarePoint,
    f: impl Fn(f64) -> f64,
) -> Result<PoincarePoint> {
    let h = mobius_add(&mobius_matvec(m1, x)?, b1)?;
    let h = lift_map(|v| v.iter().map(|&t| f(t)).collect(), &h);
    Ok(mobius_add(&mobius_matvec(m2, &h)?, b2)?)
}

/// Coordinate-wise max of `log_0` over unmasked points, mapped back.
pub fn hyperbolic_pool(points: &[PoincarePoint], mask: &[bool]) -> Result<PoincarePoint> {
    let mut best: Option<Vec<f64>> = None;
    for (p, keep) in points.iter().zip(mask) {
        if !keep {
            continue;
        }
        let l = log0(p);
        best = Some(match best {
            None => l,
            Some(b) => b.iter().zip(&l).map(|(a, c)| a.max(*c)).collect(),
        });
    }
    let best = best.ok_or(HypformerError::AllMasked)?;
    Ok(exp0(&best, points[0].c()))
}

/// Hyperbolic multiclass logistic regression scores
/// `c·λ_{p_k}·‖a_k‖·asinh(2⟨z,a_k⟩ / (c(1 − ‖z‖²/c²)‖a_k‖))`, `z = ⊖p_k ⊕ x`.
pub fn hyperbolic_mlr(x: &PoincarePoint, a: &Tensor, p: &[PoincarePoint]) -> Result<Vec<f64>> {
    let c = x.c();
    let mut out = Vec::with_capacity(p.len());
    for (k, pk) in p.iter().enumerate() {
        let ak = a.row_slice(k);
        let an = ak.iter().map(|v| v * v).sum::<f64>().sqrt();
        if an == 0.0 {
            return Err(HypformerError::ZeroNormal(k));
        }
        let z = mobius_add(&mobius_neg(pk), x)?;
        let za: f64 = z.coords().iter().zip(ak).map(|(u, v)| u * v).sum();
        let z2 = z.norm() * z.norm();
        let arg = 2.0 * za / (c * (1.0 - z2 / (c * c)) * an);
        out.push(c * conformal_factor(pk) * an * arg.asinh());
    }
    Ok(out)
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Drops tangent coordinates at the origin with probability `rate` and
/// rescales survivors; the identity outside training.
pub fn tangent_dropout(x: &PoincarePoint, rate: f64, rng: &mut impl Rng, training: bool) -> PoincarePoint {
    if !training || rate == 0.0 {
        return x.clone();
    }
    let keep = 1.0 / (1.0 - rate);
    lift_map(
        |v| v.iter().map(|t| if rng.random::<f64>() < rate { 0.0 } else { t * keep }).collect(),
        x,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::check::random_ball_point;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pt(v: &[f64]) -> PoincarePoint {
        PoincarePoint::new(v.to_vec(), 1.0).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn positional_examples() {
        assert_eq!(positional_encoding(0, 6), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((positional_encoding(1, 4)[0] - 0.8415).abs() < 1e-4);
        let p = positional_encoding(1, 4);
        assert!((p[2] - 0.01f64.sin()).abs() < 1e-15);
        assert!((p[2] - 0.0100).abs() < 1e-4);
    }

    #[test]
    fn attach_examples() {
        let x = pt(&[0.3, -0.2]);
        assert!(close(attach_positions(&x, &[0.0, 0.0]).unwrap().coords(), x.coords(), 1e-15));
        let pe = [0.4, 0.1];
        let o = pt(&[0.0, 0.0]);
        assert!(close(attach_positions(&o, &pe).unwrap().coords(), exp0(&pe, 1.0).coords(), 1e-15));
        let r = attach_positions(&pt(&[0.5, 0.0]), &[0.5f64.atanh(), 0.0]).unwrap();
        assert!(close(r.coords(), &[0.8, 0.0], 1e-12));
    }

    #[test]
    fn attention_examples() {
        let v = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let q = Tensor::from_rows(&[vec![0.3, 0.7]]).unwrap();
        assert_eq!(scaled_dot_attention(&q, &q, &v, &[true]).unwrap(), v);

        let k = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let v = Tensor::from_rows(&[vec![1.0, 0.0], vec![3.0, 2.0]]).unwrap();
        let out = scaled_dot_attention(&k, &k, &v, &[true, true]).unwrap();
        assert!(close(out.row_slice(0), &[2.0, 1.0], 1e-15));

        // Q = K = s·I₂
        let s = 2.0;
        let qk = Tensor::from_rows(&[vec![s, 0.0], vec![0.0, s]]).unwrap();
        let out = scaled_dot_attention(&qk, &qk, &v, &[true, true]).unwrap();
        let hi = (s * s / 2f64.sqrt()).exp();
        let w0 = hi / (hi + 1.0);
        let expect0 = [w0 * 1.0 + (1.0 - w0) * 3.0, (1.0 - w0) * 2.0];
        assert!(close(out.row_slice(0), &expect0, 1e-14));

        let masked = scaled_dot_attention(&qk, &qk, &v, &[true, false]).unwrap();
        assert!(close(masked.row_slice(1), &[1.0, 0.0], 1e-15));
        assert!(scaled_dot_attention(&Tensor::zeros(1, 0), &Tensor::zeros(1, 0), &v, &[true]).is_err());
    }

    #[test]
    fn hyperbolic_attention_examples() {
        let o = vec![pt(&[0.0, 0.0]); 3];
        let out = hyperbolic_attention(&o, &o, &o, &[true; 3]).unwrap();
        assert!(out.iter().all(|p| p.is_origin()));
        let q = vec![pt(&[0.1, 0.2])];
        let v = vec![pt(&[-0.4, 0.3])];
        let out = hyperbolic_attention(&q, &q, &v, &[true]).unwrap();
        assert!(close(out[0].coords(), v[0].coords(), 1e-14));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<PoincarePoint> = (0..3).map(|_| random_ball_point(&mut rng, 4, 0.8)).collect();
        let out = hyperbolic_attention(&pts, &pts, &pts, &[true; 3]).unwrap();
        let lq: Vec<Vec<f64>> = pts.iter().map(log0).collect();
        for i in 0..3 {
            let logits: Vec<f64> = (0..3)
                .map(|j| lq[i].iter().zip(&lq[j]).map(|(a, b)| a * b).sum::<f64>() / 2.0)
                .collect();
            let w = softmax(&logits);
            let mix: Vec<f64> = (0..4).map(|d| (0..3).map(|j| w[j] * lq[j][d]).sum()).collect();
            assert!(close(out[i].coords(), exp0(&mix, 1.0).coords(), 1e-14));
        }
    }

    #[test]
    fn head_examples() {
        let x = pt(&[0.3, -0.5, 0.1]);
        let heads = split_heads(&Tensor::eye(3), &x, 1).unwrap();
        assert!(close(heads[0].coords(), x.coords(), 1e-15));
        let w = Tensor::from_rows(&[vec![1.0, 0.5, 0.0], vec![0.0, 1.0, 1.0], vec![2.0, 0.0, 0.3], vec![0.1, 0.1, 0.1]]).unwrap();
        let zero = split_heads(&w, &pt(&[0.0, 0.0, 0.0]), 2).unwrap();
        assert!(zero.iter().all(PoincarePoint::is_origin));
        let parts = split_heads(&w, &x, 2).unwrap();
        let joined: Vec<f64> = parts.iter().flat_map(|p| p.coords().to_vec()).collect();
        assert_eq!(joined, mobius_matvec(&w, &x).unwrap().coords());
        assert!(split_heads(&w, &x, 3).is_err());

        let h1 = pt(&[0.2, 0.1]);
        let merged = merge_heads(std::slice::from_ref(&h1), &[Tensor::eye(2)]).unwrap();
        assert!(close(merged.coords(), h1.coords(), 1e-15));
        let o = pt(&[0.0, 0.0]);
        assert!(merge_heads(&[o.clone(), o.clone()], &[Tensor::eye(2), Tensor::eye(2)]).unwrap().is_origin());
        let m1 = Tensor::from_rows(&[vec![1.0, 0.2], vec![-0.3, 0.8]]).unwrap();
        let m2 = Tensor::from_rows(&[vec![0.5, 0.5], vec![1.0, -1.0]]).unwrap();
        let h2 = pt(&[-0.3, 0.4]);
        let got = merge_heads(&[h1.clone(), h2.clone()], &[m1.clone(), m2.clone()]).unwrap();
        let expect = mobius_add(&mobius_matvec(&m1, &h1).unwrap(), &mobius_matvec(&m2, &h2).unwrap()).unwrap();
        assert_eq!(got, expect);
        let swapped = merge_heads(&[h2, h1], &[m2, m1]).unwrap();
        assert!(crate::geometry::poincare_distance(&got, &swapped).unwrap() > 1e-6);
    }

    #[test]
    fn ffn_examples() {
        let x = pt(&[0.3, -0.2]);
        let o = pt(&[0.0, 0.0]);
        let id = hyperbolic_ffn(&x, &Tensor::eye(2), &o, &Tensor::eye(2), &o, |t| t).unwrap();
        assert!(close(id.coords(), x.coords(), 1e-14));
        let m = Tensor::from_rows(&[vec![0.4, 1.0], vec![-2.0, 0.3]]).unwrap();
        assert!(hyperbolic_ffn(&o, &m, &o, &m, &o, |t| t.max(0.0)).unwrap().is_origin());
        let b1 = pt(&[0.1, -0.1]);
        let b2 = pt(&[0.0, 0.2]);
        let got = hyperbolic_ffn(&x, &m, &b1, &m, &b2, |t| t.max(0.0)).unwrap();
        let h = mobius_add(&mobius_matvec(&m, &x).unwrap(), &b1).unwrap();
        let l = log0(&h);
        let h = exp0(&l.iter().map(|v| v.max(0.0)).collect::<Vec<_>>(), 1.0);
        let expect = mobius_add(&mobius_matvec(&m, &h).unwrap(), &b2).unwrap();
        assert!(close(got.coords(), expect.coords(), 1e-15));
    }

    #[test]
    fn pool_examples() {
        let x = pt(&[0.3, -0.2]);
        assert!(close(hyperbolic_pool(std::slice::from_ref(&x), &[true]).unwrap().coords(), x.coords(), 1e-15));
        assert!(close(hyperbolic_pool(&[x.clone(), x.clone()], &[true, true]).unwrap().coords(), x.coords(), 1e-15));
        let got = hyperbolic_pool(&[pt(&[0.5, 0.0]), pt(&[0.0, 0.5])], &[true, true]).unwrap();
        let a = 0.5f64.atanh();
        assert!(close(got.coords(), exp0(&[a, a], 1.0).coords(), 1e-15));
        assert!(matches!(hyperbolic_pool(&[x], &[false]), Err(HypformerError::AllMasked)));
    }

    #[test]
    fn mlr_examples() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.3, -0.7]]).unwrap();
        let o = pt(&[0.0, 0.0]);
        let s = hyperbolic_mlr(&o, &a, &[o.clone(), o.clone()]).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
        assert_eq!(softmax(&s), vec![0.5, 0.5]);

        let x = pt(&[0.2, 0.5]);
        let ak = [0.3, -0.7];
        let an = (0.09f64 + 0.49).sqrt();
        for t in [0.5, 2.0, 7.0] {
            let at = Tensor::row(&[t * ak[0], t * ak[1]]);
            let got = hyperbolic_mlr(&x, &at, &[o.clone()]).unwrap()[0];
            let xa = 0.2 * ak[0] + 0.5 * ak[1];
            let expect = 2.0 * t * an * (2.0 * xa / ((1.0 - 0.29) * an)).asinh();
            assert!((got - expect).abs() < 1e-13);
        }
        let zero = Tensor::row(&[0.0, 0.0]);
        assert!(matches!(hyperbolic_mlr(&x, &zero, &[o]), Err(HypformerError::ZeroNormal(0))));
    }

    #[test]
    fn mlr_brute_force_two_class() {
        // every quantity written out by hand in coordinates
        let x = [0.25, -0.4];
        let ps = [[0.1, 0.3], [-0.35, 0.05]];
        let az = [[0.8, -0.1], [-0.2, 0.6]];
        let a = Tensor::from_rows(&[az[0].to_vec(), az[1].to_vec()]).unwrap();
        let got = hyperbolic_mlr(&pt(&x), &a, &[pt(&ps[0]), pt(&ps[1])]).unwrap();
        for k in 0..2 {
            let (u, v) = ([-ps[k][0], -ps[k][1]], x);
            let uv = u[0] * v[0] + u[1] * v[1];
            let uu = u[0] * u[0] + u[1] * u[1];
            let vv = v[0] * v[0] + v[1] * v[1];
            let den = 1.0 + 2.0 * uv + uu * vv;
            let z = [
                ((1.0 + 2.0 * uv + vv) * u[0] + (1.0 - uu) * v[0]) / den,
                ((1.0 + 2.0 * uv + vv) * u[1] + (1.0 - uu) * v[1]) / den,
            ];
            let an = (az[k][0] * az[k][0] + az[k][1] * az[k][1]).sqrt();
            let lam = 2.0 / (1.0 - (ps[k][0] * ps[k][0] + ps[k][1] * ps[k][1]));
            let za = z[0] * az[k][0] + z[1] * az[k][1];
            let zz = z[0] * z[0] + z[1] * z[1];
            let expect = lam * an * (2.0 * za / ((1.0 - zz) * an)).asinh();
            assert!((got[k] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn dropout_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = pt(&[0.3, -0.2, 0.4]);
        assert_eq!(tangent_dropout(&x, 0.0, &mut rng, true), x);
        assert_eq!(tangent_dropout(&x, 0.7, &mut rng, false), x);
        let n = 10_000;
        let mut mean = vec![0.0; 3];
        for _ in 0..n {
            let l = log0(&tangent_dropout(&x, 0.3, &mut rng, true));
            for (m, v) in mean.iter_mut().zip(l) {
                *m += v / n as f64;
            }
        }
        let target = log0(&x);
        for (m, t) in mean.iter().zip(&target) {
            assert!(((m - t) / t).abs() < 0.05, "{m} vs {t}");
        }
    }
}
