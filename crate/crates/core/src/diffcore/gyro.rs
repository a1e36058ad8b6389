//! Gyrovector operations composed from tape primitives so gradients flow
//! through them. Points are stored one per row; `c` is the ball radius.

use super::{Axis, Reduce, Tape, Var};
use crate::geometry::EPS_BOUNDARY;

fn rows_like(t: &mut Tape, a: Var, b: Var) -> (Var, Var) {
    let (ra, rb) = (t.shape(a)[0], t.shape(b)[0]);
    if ra == rb {
        (a, b)
    } else if ra == 1 {
        (t.broadcast_as(a, b), b)
    } else {
        (a, t.broadcast_as(b, a))
    }
}

/// Pulls rows back inside the boundary margin.
pub fn project(t: &mut Tape, x: Var, c: f64) -> Var {
    t.clamp_norm(x, c * (1.0 - EPS_BOUNDARY))
}

/// `coef ⊙ v` with a `[r,1]` coefficient.
fn scale_rows(t: &mut Tape, coef: Var, v: Var) -> Var {
    let b = t.broadcast_as(coef, v);
    t.mul(b, v)
}

/// Row-wise Möbius addition. A single-row operand is broadcast.
pub fn mobius_add(t: &mut Tape, x: Var, y: Var, c: f64) -> Var {
    let (x, y) = rows_like(t, x, y);
    let inv_c2 = 1.0 / (c * c);
    let xy = t.dot(x, y);
    let x2 = t.dot(x, x);
    let y2 = t.dot(y, y);
    let two_xy = t.scale(xy, 2.0 * inv_c2);
    let y2c = t.scale(y2, inv_c2);
    let s = t.add(two_xy, y2c);
    let cx = t.shift(s, 1.0);
    let x2c = t.scale(x2, -inv_c2);
    let cy = t.shift(x2c, 1.0);
    let x2y2 = t.mul(x2, y2);
    let q = t.scale(x2y2, inv_c2 * inv_c2);
    let d0 = t.add(two_xy, q);
    let den = t.shift(d0, 1.0);
    let a = scale_rows(t, cx, x);
    let b = scale_rows(t, cy, y);
    let num = t.add(a, b);
    let denb = t.broadcast_as(den, num);
    let out = t.div(num, denb);
    project(t, out, c)
}

/// `λ_x = 2 / (1 − ‖x‖²/c²)`, shape `[r,1]`.
pub fn conformal_factor(t: &mut Tape, x: Var, c: f64) -> Var {
    let x2 = t.dot(x, x);
    let s = t.scale(x2, -1.0 / (c * c));
    let d = t.shift(s, 1.0);
    let two = t.scalar(2.0);
    let two = t.broadcast_as(two, d);
    t.div(two, d)
}

/// `c·tanh(k·‖v‖/c)·v/‖v‖` with `k` a per-row factor (`None` means 1).
fn along(t: &mut Tape, v: Var, k: Option<Var>, c: f64) -> Var {
    let n = t.norm(v);
    let arg = match k {
        Some(k) => t.mul(k, n),
        None => n,
    };
    let arg = t.scale(arg, 1.0 / c);
    let th = t.tanh(arg);
    let th = t.scale(th, c);
    let coef = t.div(th, n);
    scale_rows(t, coef, v)
}

pub fn exp0(t: &mut Tape, v: Var, c: f64) -> Var {
    let out = along(t, v, None, c);
    project(t, out, c)
}

pub fn log0(t: &mut Tape, y: Var, c: f64) -> Var {
    let n = t.norm(y);
    let r = t.scale(n, 1.0 / c);
    let at = t.atanh(r);
    let at = t.scale(at, c);
    let coef = t.div(at, n);
    scale_rows(t, coef, y)
}

pub fn exp_map(t: &mut Tape, x: Var, v: Var, c: f64) -> Var {
    let (x, v) = rows_like(t, x, v);
    let lam = conformal_factor(t, x, c);
    let half = t.scale(lam, 0.5);
    let step = along(t, v, Some(half), c);
    mobius_add(t, x, step, c)
}

pub fn log_map(t: &mut Tape, x: Var, y: Var, c: f64) -> Var {
    let (x, y) = rows_like(t, x, y);
    let nx = t.neg(x);
    let d = mobius_add(t, nx, y, c);
    let lam = conformal_factor(t, x, c);
    let n = t.norm(d);
    let r = t.scale(n, 1.0 / c);
    let at = t.atanh(r);
    let at = t.scale(at, 2.0 * c);
    let k = t.mul(lam, n);
    let coef = t.div(at, k);
    scale_rows(t, coef, d)
}

/// Möbius matrix-vector product `M ⊗ x` for each row of `x`, with `M` of
/// shape `[m, n]`.
pub fn mobius_matvec(t: &mut Tape, m: Var, x: Var, c: f64) -> Var {
    let mx = t.matmul_t(x, m);
    let xn = t.norm(x);
    let mxn = t.norm(mx);
    let r = t.scale(xn, 1.0 / c);
    let at = t.atanh(r);
    let ratio = t.div(mxn, xn);
    let arg = t.mul(ratio, at);
    let th = t.tanh(arg);
    let th = t.scale(th, c);
    let coef = t.div(th, mxn);
    let out = scale_rows(t, coef, mx);
    project(t, out, c)
}

/// Hyperbolic MLR scores `[r, K]` for points `x: [r, n]`, normals
/// `a: [K, n]` and offsets `p: [K, n]`.
pub fn mlr_logits(t: &mut Tape, x: Var, a: Var, p: Var, c: f64) -> Var {
    let k_count = t.shape(a)[0];
    let mut cols = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let pk = t.slice(p, Axis::Rows, k, 1);
        let ak = t.slice(a, Axis::Rows, k, 1);
        let np = t.neg(pk);
        let z = mobius_add(t, np, x, c);
        let lam_p = conformal_factor(t, pk, c);
        let an = t.norm(ak);
        let akb = t.broadcast_as(ak, z);
        let za = t.dot(z, akb);
        let z2 = t.dot(z, z);
        let s = t.scale(z2, -1.0 / (c * c));
        let w = t.shift(s, 1.0);
        let anb = t.broadcast_as(an, w);
        let den = t.mul(w, anb);
        let den = t.scale(den, c);
        let num = t.scale(za, 2.0);
        let arg = t.div(num, den);
        let ash = t.asinh(arg);
        let la = t.mul(lam_p, an);
        let la = t.scale(la, c);
        let lab = t.broadcast_as(la, ash);
        cols.push(t.mul(lab, ash));
    }
    t.concat(&cols, Axis::Cols)
}

/// Row-wise Lorentzian product of `[r, n+1]` tensors.
pub fn lorentz_inner(t: &mut Tape, u: Var, v: Var) -> Var {
    let n = t.shape(u)[1] - 1;
    let us = t.slice(u, Axis::Cols, 0, n);
    let vs = t.slice(v, Axis::Cols, 0, n);
    let ut = t.slice(u, Axis::Cols, n, 1);
    let vt = t.slice(v, Axis::Cols, n, 1);
    let space = t.dot(us, vs);
    let time = t.mul(ut, vt);
    t.sub(space, time)
}

/// Sum of all entries, a convenience for building scalar losses.
pub fn total(t: &mut Tape, x: Var) -> Var {
    t.sum(x, Reduce::All)
}
