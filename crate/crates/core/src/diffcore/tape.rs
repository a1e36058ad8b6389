use std::collections::BTreeMap;

use super::tensor::{matmul, Tensor};
use super::DiffError;

/// Floor added under the square root of [`Tape::norm`], so the norm stays
/// differentiable at the zero vector.
pub const NORM_FLOOR: f64 = 1e-15;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which extent a reduction collapses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    /// One value per row: `[r, c] -> [r, 1]`.
    PerRow,
    /// One value per column: `[r, c] -> [1, c]`.
    PerCol,
    /// `[r, c] -> [1, 1]`.
    All,
}

/// Axis for concatenation and slicing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Stack vertically / take a range of rows.
    Rows,
    /// Place side by side / take a range of columns.
    Cols,
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Neg,
    Exp,
    Log,
    Tanh,
    Atanh,
    Sinh,
    Asinh,
    Cosh,
    Sqrt,
    Sigmoid,
    Relu,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Tanh => "tanh",
            Unary::Atanh => "atanh",
            Unary::Sinh => "sinh",
            Unary::Asinh => "asinh",
            Unary::Cosh => "cosh",
            Unary::Sqrt => "sqrt",
            Unary::Sigmoid => "sigmoid",
            Unary::Relu => "relu",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Atanh => x.atanh(),
            Unary::Sinh => x.sinh(),
            Unary::Asinh => x.asinh(),
            Unary::Cosh => x.cosh(),
            Unary::Sqrt => x.sqrt(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Tanh => 1.0 - y * y,
            Unary::Atanh => 1.0 / (1.0 - x * x),
            Unary::Sinh => x.cosh(),
            Unary::Asinh => 1.0 / (1.0 + x * x).sqrt(),
            Unary::Cosh => x.sinh(),
            Unary::Sqrt => 0.5 / y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { name: Option<String> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    Shift(Var, f64),
    MatMul { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Sum(Var, Reduce),
    Max(Var, Reduce),
    Softmax(Var),
    Dot(Var, Var),
    Norm(Var),
    Concat(Vec<Var>, Axis),
    Slice { a: Var, axis: Axis, start: usize, len: usize },
    Broadcast { a: Var, rows: usize, cols: usize },
    ClampNorm { a: Var, max_norm: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Append-only record of primitive operations, evaluated eagerly as it is
/// built and replayable with new leaf bindings.
///
/// Graph construction panics on shape errors (they are programming errors in
/// the model code); [`Tape::forward`] reports them as [`DiffError`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    outputs: BTreeMap<String, Var>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> DiffError {
    DiffError::ShapeMismatch { op, left: a.shape(), right: b.shape() }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), DiffError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(mismatch(op, a, b))
    }
}

/// Index of the maximum within each reduction group (first on ties).
fn argmax_groups(x: &Tensor, reduce: Reduce) -> Vec<usize> {
    let [r, c] = x.shape();
    let pick = |idx: &mut dyn Iterator<Item = usize>| {
        let mut best = usize::MAX;
        let mut best_v = f64::NEG_INFINITY;
        for i in idx {
            let v = x.data()[i];
            if best == usize::MAX || v > best_v {
                best = i;
                best_v = v;
            }
        }
        best
    };
    match reduce {
        Reduce::PerRow => (0..r).map(|i| pick(&mut (i * c..(i + 1) * c))).collect(),
        Reduce::PerCol => (0..c).map(|j| pick(&mut (0..r).map(|i| i * c + j))).collect(),
        Reduce::All => vec![pick(&mut (0..r * c))],
    }
}

fn reduced_shape(shape: [usize; 2], reduce: Reduce) -> [usize; 2] {
    match reduce {
        Reduce::PerRow => [shape[0], 1],
        Reduce::PerCol => [1, shape[1]],
        Reduce::All => [1, 1],
    }
}

fn sum_reduce(x: &Tensor, reduce: Reduce) -> Tensor {
    let [r, c] = x.shape();
    let d = x.data();
    match reduce {
        Reduce::PerRow => {
            Tensor::from_parts(r, 1, (0..r).map(|i| d[i * c..(i + 1) * c].iter().sum()).collect())
        }
        Reduce::PerCol => {
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (o, v) in out.iter_mut().zip(&d[i * c..(i + 1) * c]) {
                    *o += v;
                }
            }
            Tensor::from_parts(1, c, out)
        }
        Reduce::All => Tensor::scalar(d.iter().sum()),
    }
}

/// Expands `g` (of a reduced shape) back to `shape`.
fn expand(g: &Tensor, shape: [usize; 2]) -> Tensor {
    let [r, c] = shape;
    let [gr, gc] = g.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(g.get(if gr == 1 { 0 } else { i }, if gc == 1 { 0 } else { j }));
        }
    }
    Tensor::from_parts(r, c, out)
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let [r, c] = x.shape();
    let mut out = x.data().to_vec();
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Tensor::from_parts(r, c, out)
}

fn row_dot(a: &Tensor, b: &Tensor) -> Tensor {
    let [r, c] = a.shape();
    Tensor::from_parts(
        r,
        1,
        (0..r)
            .map(|i| {
                a.data()[i * c..(i + 1) * c]
                    .iter()
                    .zip(&b.data()[i * c..(i + 1) * c])
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect(),
    )
}

fn row_norms(a: &Tensor) -> Tensor {
    row_dot(a, a).map(|s| (s + NORM_FLOOR * NORM_FLOOR).sqrt())
}

fn exact_row_norms(a: &Tensor) -> Vec<f64> {
    row_dot(a, a).data().iter().map(|s| s.sqrt()).collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn leaf(&mut self, name: Option<String>, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node { op: Op::Leaf { name }, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Named input that can be rebound in [`Tape::forward`]. Gradients are
    /// tracked when `requires_grad` is set.
    pub fn input(&mut self, name: impl Into<String>, value: Tensor, requires_grad: bool) -> Var {
        self.leaf(Some(name.into()), value, requires_grad)
    }

    /// Trainable named leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.input(name, value, true)
    }

    /// Anonymous constant leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(None, value, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Registers `v` as a named output returned by [`Tape::forward`].
    pub fn name_output(&mut self, name: impl Into<String>, v: Var) {
        self.outputs.insert(name.into(), v);
    }

    fn push(&mut self, op: Op) -> Var {
        let value = match self.eval(&op) {
            Ok(v) => v,
            Err(e) => panic!("invalid graph construction at node {}: {e}", self.nodes.len()),
        };
        let needs_grad = self.inputs_of(&op).iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn inputs_of(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf { .. } => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Dot(a, b) => {
                vec![*a, *b]
            }
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Unary(_, a)
            | Op::Scale(a, _)
            | Op::Shift(a, _)
            | Op::Transpose(a)
            | Op::Sum(a, _)
            | Op::Max(a, _)
            | Op::Softmax(a)
            | Op::Norm(a) => vec![*a],
            Op::Slice { a, .. } | Op::Broadcast { a, .. } | Op::ClampNorm { a, .. } => vec![*a],
            Op::Concat(vs, _) => vs.clone(),
        }
    }

    fn eval(&self, op: &Op) -> Result<Tensor, DiffError> {
        let val = |v: &Var| &self.nodes[v.0].value;
        Ok(match op {
            Op::Leaf { .. } => unreachable!("leaves are not evaluated"),
            Op::Add(a, b) => {
                same_shape("add", val(a), val(b))?;
                val(a).zip(val(b), |x, y| x + y)
            }
            Op::Sub(a, b) => {
                same_shape("sub", val(a), val(b))?;
                val(a).zip(val(b), |x, y| x - y)
            }
            Op::Mul(a, b) => {
                same_shape("mul", val(a), val(b))?;
                val(a).zip(val(b), |x, y| x * y)
            }
            Op::Div(a, b) => {
                same_shape("div", val(a), val(b))?;
                val(a).zip(val(b), |x, y| x / y)
            }
            Op::Unary(u, a) => val(a).map(|x| u.apply(x)),
            Op::Scale(a, k) => val(a).map(|x| x * k),
            Op::Shift(a, k) => val(a).map(|x| x + k),
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (val(a), val(b));
                let inner = if *trans_b { tb.cols() } else { tb.rows() };
                if ta.cols() != inner {
                    return Err(mismatch("matmul", ta, tb));
                }
                matmul(ta, tb, *trans_b)
            }
            Op::Transpose(a) => val(a).transpose(),
            Op::Sum(a, r) => sum_reduce(val(a), *r),
            Op::Max(a, r) => {
                let x = val(a);
                if x.is_empty() {
                    return Err(DiffError::Empty("max"));
                }
                let idx = argmax_groups(x, *r);
                let [rr, rc] = reduced_shape(x.shape(), *r);
                Tensor::from_parts(rr, rc, idx.iter().map(|&i| x.data()[i]).collect())
            }
            Op::Softmax(a) => softmax_rows(val(a)),
            Op::Dot(a, b) => {
                same_shape("dot", val(a), val(b))?;
                row_dot(val(a), val(b))
            }
            Op::Norm(a) => row_norms(val(a)),
            Op::Concat(vs, axis) => {
                let first = val(&vs[0]);
                let mut data = Vec::new();
                match axis {
                    Axis::Rows => {
                        let mut rows = 0;
                        for v in vs {
                            if val(v).cols() != first.cols() {
                                return Err(mismatch("concat", first, val(v)));
                            }
                            rows += val(v).rows();
                            data.extend_from_slice(val(v).data());
                        }
                        Tensor::from_parts(rows, first.cols(), data)
                    }
                    Axis::Cols => {
                        let mut cols = 0;
                        for v in vs {
                            if val(v).rows() != first.rows() {
                                return Err(mismatch("concat", first, val(v)));
                            }
                            cols += val(v).cols();
                        }
                        for r in 0..first.rows() {
                            for v in vs {
                                data.extend_from_slice(val(v).row_slice(r));
                            }
                        }
                        Tensor::from_parts(first.rows(), cols, data)
                    }
                }
            }
            Op::Slice { a, axis, start, len } => {
                let x = val(a);
                let extent = match axis {
                    Axis::Rows => x.rows(),
                    Axis::Cols => x.cols(),
                };
                if start + len > extent || *len == 0 {
                    return Err(DiffError::SliceOutOfRange { start: *start, len: *len, extent });
                }
                match axis {
                    Axis::Rows => Tensor::from_parts(
                        *len,
                        x.cols(),
                        x.data()[start * x.cols()..(start + len) * x.cols()].to_vec(),
                    ),
                    Axis::Cols => {
                        let mut data = Vec::with_capacity(x.rows() * len);
                        for r in 0..x.rows() {
                            data.extend_from_slice(&x.row_slice(r)[*start..start + len]);
                        }
                        Tensor::from_parts(x.rows(), *len, data)
                    }
                }
            }
            Op::Broadcast { a, rows, cols } => {
                let x = val(a);
                let ok_r = x.rows() == *rows || x.rows() == 1;
                let ok_c = x.cols() == *cols || x.cols() == 1;
                if !ok_r || !ok_c {
                    return Err(DiffError::ShapeMismatch {
                        op: "broadcast",
                        left: x.shape(),
                        right: [*rows, *cols],
                    });
                }
                expand(x, [*rows, *cols])
            }
            Op::ClampNorm { a, max_norm } => {
                let x = val(a);
                let norms = exact_row_norms(x);
                let mut out = x.clone();
                for (r, n) in norms.iter().enumerate() {
                    if *n >= *max_norm {
                        let k = max_norm / n;
                        out.row_slice_mut(r).iter_mut().for_each(|v| *v *= k);
                    }
                }
                out
            }
        })
    }

    // ---- primitive builders ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.push(Op::Unary(Unary::Neg, a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.push(Op::Unary(Unary::Exp, a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.push(Op::Unary(Unary::Log, a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Unary(Unary::Tanh, a))
    }

    pub fn atanh(&mut self, a: Var) -> Var {
        self.push(Op::Unary(Unary::Atanh, a))
    }

    pub fn sinh(&mut self, a: Var) -> Var {
        self.push(Op::Unary(Unary::Sinh, a))
    }

    pub fn asinh(&mut self, a: Var) -> Var {
        self.push(Op::Unary(Unary::Asinh, a))
    }

    pub fn cosh(&mut self, a: Var) -> Var {
        self.push(Op::Unary(Unary::Cosh, a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.push(Op::Unary(Unary::Sqrt, a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.push(Op::Unary(Unary::Sigmoid, a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.push(Op::Unary(Unary::Relu, a))
    }

    /// `k·a` for a constant `k`.
    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.push(Op::Scale(a, k))
    }

    /// `a + k` for a constant `k`.
    pub fn shift(&mut self, a: Var, k: f64) -> Var {
        self.push(Op::Shift(a, k))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::MatMul { a, b, trans_b: false })
    }

    /// `a·bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::MatMul { a, b, trans_b: true })
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        self.push(Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var, reduce: Reduce) -> Var {
        self.push(Op::Sum(a, reduce))
    }

    pub fn max(&mut self, a: Var, reduce: Reduce) -> Var {
        self.push(Op::Max(a, reduce))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        self.push(Op::Softmax(a))
    }

    /// Row-wise inner product: `[r, c] × [r, c] -> [r, 1]`.
    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Dot(a, b))
    }

    /// Row-wise Euclidean norm `sqrt(Σx² + NORM_FLOOR²)`.
    pub fn norm(&mut self, a: Var) -> Var {
        self.push(Op::Norm(a))
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        self.push(Op::Concat(parts.to_vec(), axis))
    }

    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, len: usize) -> Var {
        self.push(Op::Slice { a, axis, start, len })
    }

    /// Repeats a `[1,1]`, `[r,1]` or `[1,c]` tensor up to `[rows, cols]`.
    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        if self.shape(a) == [rows, cols] {
            return a;
        }
        self.push(Op::Broadcast { a, rows, cols })
    }

    /// Broadcasts `a` to the shape of `like`.
    pub fn broadcast_as(&mut self, a: Var, like: Var) -> Var {
        let [r, c] = self.shape(like);
        self.broadcast(a, r, c)
    }

    /// Rescales rows whose norm reaches `max_norm` back onto that sphere.
    /// Gradient is the identity for untouched rows and zero for clamped ones.
    pub fn clamp_norm(&mut self, a: Var, max_norm: f64) -> Var {
        self.push(Op::ClampNorm { a, max_norm })
    }

    // ---- evaluation ----

    /// Re-evaluates the whole tape after rebinding named inputs. Returns the
    /// named outputs.
    pub fn forward(&mut self, inputs: &BTreeMap<String, Tensor>) -> Result<BTreeMap<String, Tensor>, DiffError> {
        for name in inputs.keys() {
            let known = self
                .nodes
                .iter()
                .any(|n| matches!(&n.op, Op::Leaf { name: Some(x) } if x == name));
            if !known {
                return Err(DiffError::UnknownInput(name.clone()));
            }
        }
        for i in 0..self.nodes.len() {
            let op = self.nodes[i].op.clone();
            if let Op::Leaf { name } = &op {
                if let Some(t) = name.as_ref().and_then(|n| inputs.get(n)) {
                    if t.shape() != self.nodes[i].value.shape() {
                        return Err(DiffError::ShapeMismatch {
                            op: "bind",
                            left: self.nodes[i].value.shape(),
                            right: t.shape(),
                        });
                    }
                    self.nodes[i].value = t.clone();
                }
                continue;
            }
            let v = self.eval(&op)?;
            if !v.is_finite() {
                return Err(DiffError::NonFinite { node: i });
            }
            self.nodes[i].value = v;
        }
        Ok(self
            .outputs
            .iter()
            .map(|(k, v)| (k.clone(), self.nodes[v.0].value.clone()))
            .collect())
    }

    /// Named leaves that track gradients, in creation order.
    pub fn trainable(&self) -> Vec<(String, Var)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match &n.op {
                Op::Leaf { name: Some(name) } if n.needs_grad => Some((name.clone(), Var(i))),
                _ => None,
            })
            .collect()
    }

    /// First node holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.nodes.iter().position(|n| !n.value.is_finite())
    }

    /// Reverse accumulation from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients, DiffError> {
        let out_shape = self.shape(output);
        if out_shape != [1, 1] {
            return Err(DiffError::NotScalar(out_shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::scalar(1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf { .. } = node.op {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        let mut named = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate().take(output.0 + 1) {
            if let Op::Leaf { name: Some(name) } = &n.op {
                if n.needs_grad {
                    named.insert(name.clone(), Var(i));
                }
            }
        }
        grads.truncate(output.0 + 1);
        Ok(Gradients { grads, named })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    acc(*a, g.zip(val(*b), |x, y| x * y));
                }
                if needs(*b) {
                    acc(*b, g.zip(val(*a), |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                if needs(*a) {
                    acc(*a, g.zip(val(*b), |x, y| x / y));
                }
                if needs(*b) {
                    // d(a/b)/db = −(a/b)/b = −y/b
                    let yb = node.value.zip(val(*b), |y, bv| y / bv);
                    acc(*b, g.zip(&yb, |x, y| -x * y));
                }
            }
            Op::Unary(u, a) => {
                let x = val(*a);
                let d = Tensor::from_parts(
                    x.rows(),
                    x.cols(),
                    x.data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(&xv, &yv)| u.derivative(xv, yv))
                        .collect(),
                );
                acc(*a, g.zip(&d, |p, q| p * q));
            }
            Op::Scale(a, k) => acc(*a, g.map(|x| x * k)),
            Op::Shift(a, _) => acc(*a, g.clone()),
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (val(*a), val(*b));
                if needs(*a) {
                    // out = a·b → ga = g·bᵀ ; out = a·bᵀ → ga = g·b
                    acc(*a, if *trans_b { matmul(g, tb, false) } else { matmul(g, tb, true) });
                }
                if needs(*b) {
                    let gt = g.transpose();
                    // out = a·b → gb = aᵀ·g ; out = a·bᵀ → gb = gᵀ·a
                    acc(*b, if *trans_b { matmul(&gt, ta, false) } else { matmul(&ta.transpose(), g, false) });
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Sum(a, _) => acc(*a, expand(g, val(*a).shape())),
            Op::Max(a, r) => {
                let x = val(*a);
                let idx = argmax_groups(x, *r);
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for (k, &flat) in idx.iter().enumerate() {
                    ga.data_mut()[flat] += g.data()[k];
                }
                acc(*a, ga);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let [r, c] = y.shape();
                let mut ga = vec![0.0; r * c];
                for row in 0..r {
                    let ys = y.row_slice(row);
                    let gs = g.row_slice(row);
                    let s: f64 = ys.iter().zip(gs).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        ga[row * c + j] = ys[j] * (gs[j] - s);
                    }
                }
                acc(*a, Tensor::from_parts(r, c, ga));
            }
            Op::Dot(a, b) => {
                let ge = expand(g, val(*a).shape());
                if needs(*a) {
                    acc(*a, ge.zip(val(*b), |x, y| x * y));
                }
                if needs(*b) {
                    acc(*b, ge.zip(val(*a), |x, y| x * y));
                }
            }
            Op::Norm(a) => {
                let x = val(*a);
                let scale = g.zip(&node.value, |gv, n| gv / n);
                acc(*a, expand(&scale, x.shape()).zip(x, |s, xv| s * xv));
            }
            Op::Concat(vs, axis) => {
                let mut offset = 0;
                for v in vs {
                    let [r, c] = val(*v).shape();
                    let part = match axis {
                        Axis::Rows => {
                            let t = Tensor::from_parts(
                                r,
                                c,
                                g.data()[offset * c..(offset + r) * c].to_vec(),
                            );
                            offset += r;
                            t
                        }
                        Axis::Cols => {
                            let mut d = Vec::with_capacity(r * c);
                            for row in 0..r {
                                d.extend_from_slice(&g.row_slice(row)[offset..offset + c]);
                            }
                            offset += c;
                            Tensor::from_parts(r, c, d)
                        }
                    };
                    acc(*v, part);
                }
            }
            Op::Slice { a, axis, start, len } => {
                let x = val(*a);
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                match axis {
                    Axis::Rows => {
                        let c = x.cols();
                        ga.data_mut()[start * c..(start + len) * c].copy_from_slice(g.data());
                    }
                    Axis::Cols => {
                        for r in 0..x.rows() {
                            ga.row_slice_mut(r)[*start..start + len].copy_from_slice(g.row_slice(r));
                        }
                    }
                }
                acc(*a, ga);
            }
            Op::Broadcast { a, .. } => {
                let x = val(*a);
                let reduced = match (x.rows() == 1, x.cols() == 1) {
                    (true, true) => sum_reduce(g, Reduce::All),
                    (true, false) => sum_reduce(g, Reduce::PerCol),
                    (false, true) => sum_reduce(g, Reduce::PerRow),
                    (false, false) => g.clone(),
                };
                acc(*a, reduced);
            }
            Op::ClampNorm { a, max_norm } => {
                let x = val(*a);
                let norms = exact_row_norms(x);
                let mut ga = g.clone();
                for (r, n) in norms.iter().enumerate() {
                    if *n >= *max_norm {
                        ga.row_slice_mut(r).iter_mut().for_each(|v| *v = 0.0);
                    }
                }
                acc(*a, ga);
            }
        }
    }

    /// Short name of the primitive at a node, for diagnostics.
    pub fn op_name(&self, v: Var) -> &'static str {
        match &self.nodes[v.0].op {
            Op::Leaf { .. } => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Unary(u, _) => u.name(),
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::MatMul { .. } => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Sum(..) => "sum",
            Op::Max(..) => "max",
            Op::Softmax(_) => "softmax",
            Op::Dot(..) => "dot",
            Op::Norm(_) => "norm",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Broadcast { .. } => "broadcast",
            Op::ClampNorm { .. } => "clamp_norm",
        }
    }
}

/// Gradients of a scalar with respect to every node that required them.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    named: BTreeMap<String, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.named.get(name).and_then(|v| self.get(*v))
    }

    /// Named trainable leaves reachable from the output, with their gradients
    /// (zero when the output does not depend on them).
    pub fn named(&self) -> impl Iterator<Item = (&str, Option<&Tensor>)> {
        self.named.iter().map(|(k, v)| (k.as_str(), self.get(*v)))
    }
}
