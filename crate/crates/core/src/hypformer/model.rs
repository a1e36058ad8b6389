use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{positional_encoding, MASK_LOGIT};
use super::{HypformerError, Result, TransformerConfig};
use crate::diffcore::gyro;
use crate::diffcore::{Axis, Reduce, Tape, Tensor, Var};
use crate::geometry::{exp_map_poincare, PoincarePoint};
use crate::optim::{ParamKind, ParamSet};
use crate::GeometryTag;

/// One input position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Token(usize),
    /// Outside the embedding vocabulary; mapped to the trainable UNK vector.
    Unknown,
    /// Masked padding.
    Pad,
}

/// Sequences of slots with one label each. Padding is carried in the
/// sequences themselves, so lengths and masks always agree.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceBatch {
    pub sequences: Vec<Vec<Slot>>,
    pub labels: Vec<usize>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn mask(&self, i: usize) -> Vec<bool> {
        self.sequences[i].iter().map(|s| *s != Slot::Pad).collect()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.sequences.iter().map(|s| s.iter().filter(|x| **x != Slot::Pad).count()).collect()
    }

    /// Pads every sequence to the longest one.
    pub fn padded(&self) -> Self {
        let width = self.sequences.iter().map(Vec::len).max().unwrap_or(0);
        let sequences = self
            .sequences
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.resize(width, Slot::Pad);
                s
            })
            .collect();
        Self { sequences, labels: self.labels.clone() }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            sequences: idx.iter().map(|&i| self.sequences[i].clone()).collect(),
            labels: idx.iter().filter_map(|&i| self.labels.get(i).copied()).collect(),
        }
    }
}

/// Frozen input embeddings, rows in the model geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Tensor,
}

impl TokenTable {
    pub fn new(tokens: Vec<String>, vectors: Tensor) -> Result<Self> {
        if tokens.len() != vectors.rows() {
            return Err(HypformerError::Config(format!(
                "{} tokens but {} embedding rows",
                tokens.len(),
                vectors.rows()
            )));
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self { tokens, index, vectors })
    }

    /// Random vectors with coordinates `N(0, scale²/dim)`, pulled into the
    /// ball for Poincaré models.
    pub fn random(tokens: Vec<String>, dim: usize, scale: f64, geometry: GeometryTag, c: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, scale / (dim as f64).sqrt()).expect("finite scale");
        let mut vectors = Tensor::zeros(tokens.len(), dim);
        for r in 0..tokens.len() {
            let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
            let v = if geometry == GeometryTag::Poincare { PoincarePoint::projected(v, c).into_coords() } else { v };
            vectors.row_slice_mut(r).copy_from_slice(&v);
        }
        Self::new(tokens, vectors).expect("matching rows")
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Maps tokens to slots, truncating to `max_len`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], max_len: usize) -> Vec<Slot> {
        tokens
            .iter()
            .take(max_len)
            .map(|t| self.id(t.as_ref()).map_or(Slot::Unknown, Slot::Token))
            .collect()
    }
}

/// Parameters plus frozen embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub config: TransformerConfig,
    pub table: TokenTable,
    pub params: ParamSet,
}

fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::new(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect()).expect("sized")
}

pub(crate) fn layer_name(l: usize, p: &str) -> String {
    format!("layer{l}.{p}")
}

/// Ball parameters: FFN biases, MLR offsets and the UNK vector of a Poincaré
/// model. Everything else is a plain matrix.
pub(crate) fn param_kind(config: &TransformerConfig, name: &str) -> ParamKind {
    let ball = name == "unk" || name == "head.p" || name.ends_with(".b1") || name.ends_with(".b2");
    if ball && config.geometry == GeometryTag::Poincare {
        ParamKind::Poincare { c: config.c }
    } else {
        ParamKind::Euclidean
    }
}

/// Names and shapes of every parameter of `config`.
fn param_shapes(config: &TransformerConfig) -> Vec<(String, [usize; 2])> {
    let (n, h, m, f, k) = (config.model_dim, config.head_dim, config.heads, config.ffn_dim, config.num_classes);
    let mut out = Vec::new();
    for l in 0..config.layers {
        for w in ["wq", "wk", "wv"] {
            out.push((layer_name(l, w), [m * h, n]));
        }
        out.push((layer_name(l, "wo"), [m * n, h]));
        out.push((layer_name(l, "w1"), [f, n]));
        out.push((layer_name(l, "b1"), [1, f]));
        out.push((layer_name(l, "w2"), [n, f]));
        out.push((layer_name(l, "b2"), [1, n]));
    }
    if config.geometry == GeometryTag::Poincare {
        out.push(("head.a".into(), [k, n]));
        out.push(("head.p".into(), [k, n]));
    } else {
        out.push(("head.w".into(), [k, n]));
        out.push(("head.b".into(), [1, k]));
    }
    out.push(("unk".into(), [1, n]));
    out
}

struct Ctx<'a> {
    cfg: &'a TransformerConfig,
    vars: BTreeMap<String, Var>,
}

impl Ctx<'_> {
    fn v(&self, name: &str) -> Var {
        self.vars[name]
    }

    fn hyperbolic(&self) -> bool {
        self.cfg.geometry == GeometryTag::Poincare
    }
}

/// Row offsets and masks of a batch stacked into one matrix.
struct Layout {
    offsets: Vec<usize>,
    masks: Vec<Vec<bool>>,
    total: usize,
}

impl Layout {
    fn new(batch: &SequenceBatch) -> Result<Self> {
        let mut offsets = Vec::with_capacity(batch.len());
        let mut masks = Vec::with_capacity(batch.len());
        let mut total = 0;
        for i in 0..batch.len() {
            let m = batch.mask(i);
            if !m.iter().any(|&b| b) {
                return Err(HypformerError::AllMasked);
            }
            offsets.push(total);
            total += m.len();
            masks.push(m);
        }
        Ok(Self { offsets, masks, total })
    }

    /// Block-diagonal key mask: a query only sees unmasked keys of its own
    /// sequence.
    fn attention_bias(&self) -> Tensor {
        let mut b = Tensor::filled(self.total, self.total, MASK_LOGIT);
        for (off, m) in self.offsets.iter().zip(&self.masks) {
            for i in 0..m.len() {
                for (j, keep) in m.iter().enumerate() {
                    if *keep {
                        b.set(off + i, off + j, 0.0);
                    }
                }
            }
        }
        b
    }
}

impl Classifier {
    /// Fresh parameters for `config` on top of `table`.
    pub fn new(config: TransformerConfig, table: TokenTable, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if table.dim() != config.model_dim {
            return Err(HypformerError::Config(format!(
                "embedding dimension {} differs from model_dim {}",
                table.dim(),
                config.model_dim
            )));
        }
        let mut params = ParamSet::new();
        for (name, [r, c]) in param_shapes(&config) {
            let value = match name.rsplit('.').next() {
                Some("b1" | "b2" | "p" | "b") => Tensor::zeros(r, c),
                Some("unk") => {
                    let normal = Normal::new(0.0, 1e-3).expect("finite");
                    Tensor::new(r, c, (0..r * c).map(|_| normal.sample(rng)).collect()).expect("sized")
                }
                Some("wo") => {
                    // one independently scaled block per head
                    let (n, h) = (config.model_dim, config.head_dim);
                    let mut wo = Tensor::zeros(r, c);
                    for i in 0..config.heads {
                        let mi = xavier(n, h, rng);
                        for row in 0..n {
                            wo.row_slice_mut(i * n + row).copy_from_slice(mi.row_slice(row));
                        }
                    }
                    wo
                }
                _ => xavier(r, c, rng),
            };
            params.insert(name.as_str(), param_kind(&config, &name), value);
        }
        Ok(Self { config, table, params })
    }

    /// Every expected parameter is present with the right shape, and ball
    /// parameters lie inside the ball.
    pub fn check_params(&self) -> Result<()> {
        let expected = param_shapes(&self.config);
        if expected.len() != self.params.len() {
            return Err(HypformerError::Config(format!(
                "expected {} parameters, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        for (name, shape) in expected {
            let p = self.params.get(&name).ok_or_else(|| HypformerError::Config(format!("missing parameter {name}")))?;
            if p.value.shape() != shape {
                return Err(HypformerError::Config(format!("parameter {name} has shape {:?}, expected {shape:?}", p.value.shape())));
            }
            if !p.value.is_finite() {
                return Err(HypformerError::Config(format!("parameter {name} has non-finite entries")));
            }
            if let ParamKind::Poincare { c } = p.kind {
                if !inside_ball(&p.value, c) {
                    return Err(HypformerError::Config(format!("parameter {name} leaves the ball")));
                }
            }
        }
        Ok(())
    }

    fn leaves(&self, tape: &mut Tape) -> BTreeMap<String, Var> {
        self.params.iter().map(|(name, p)| (name.to_string(), tape.param(name, p.value.clone()))).collect()
    }

    fn inputs(&self, tape: &mut Tape, ctx: &Ctx, batch: &SequenceBatch, layout: &Layout) -> Var {
        let n = self.config.model_dim;
        let c = self.config.c;
        let mut known = Tensor::zeros(layout.total, n);
        let mut unk_rows = Tensor::zeros(layout.total, 1);
        let mut any_unk = false;
        let mut pe = Tensor::zeros(layout.total, n);
        for (seq, off) in batch.sequences.iter().zip(&layout.offsets) {
            for (pos, slot) in seq.iter().enumerate() {
                let r = off + pos;
                match slot {
                    Slot::Token(id) => known.row_slice_mut(r).copy_from_slice(self.table.vectors.row_slice(*id)),
                    Slot::Unknown => {
                        unk_rows.set(r, 0, 1.0);
                        any_unk = true;
                    }
                    Slot::Pad => {}
                }
                let v: Vec<f64> = positional_encoding(pos, n).iter().map(|x| x * self.config.pe_scale).collect();
                let v = if ctx.hyperbolic() {
                    exp_map_poincare(&PoincarePoint::origin(n, c), &v).expect("sized").into_coords()
                } else {
                    v
                };
                pe.row_slice_mut(r).copy_from_slice(&v);
            }
        }
        let mut x = tape.constant(known);
        if any_unk {
            let ind = tape.constant(unk_rows);
            let u = tape.matmul(ind, ctx.v("unk"));
            x = tape.add(x, u);
        }
        let pe = tape.constant(pe);
        if ctx.hyperbolic() {
            gyro::mobius_add(tape, x, pe, c)
        } else {
            tape.add(x, pe)
        }
    }

    fn dropout<R: rand::RngCore + ?Sized>(&self, tape: &mut Tape, ctx: &Ctx, x: Var, rng: Option<&mut R>) -> Var {
        let rate = self.config.dropout;
        let Some(rng) = rng else { return x };
        if rate == 0.0 {
            return x;
        }
        let [r, cols] = tape.shape(x);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..r * cols).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let mask = tape.constant(Tensor::new(r, cols, mask).expect("sized"));
        if ctx.hyperbolic() {
            let c = self.config.c;
            let l = gyro::log0(tape, x, c);
            let d = tape.mul(l, mask);
            gyro::exp0(tape, d, c)
        } else {
            tape.mul(x, mask)
        }
    }

    fn attention(&self, tape: &mut Tape, ctx: &Ctx, l: usize, x: Var, bias: Var) -> Var {
        let cfg = &self.config;
        let (h, n, c) = (cfg.head_dim, cfg.model_dim, cfg.c);
        let hyp = ctx.hyperbolic();
        let project = |tape: &mut Tape, w: &str| {
            let w = ctx.v(&layer_name(l, w));
            if hyp {
                gyro::mobius_matvec(tape, w, x, c)
            } else {
                tape.matmul_t(x, w)
            }
        };
        let (q, k, v) = (project(tape, "wq"), project(tape, "wk"), project(tape, "wv"));
        let wo = ctx.v(&layer_name(l, "wo"));
        let mut acc: Option<Var> = None;
        for i in 0..cfg.heads {
            let mut parts = [q, k, v].map(|t| tape.slice(t, Axis::Cols, i * h, h));
            if hyp {
                parts = parts.map(|p| {
                    let p = gyro::project(tape, p, c);
                    gyro::log0(tape, p, c)
                });
            }
            let [qi, ki, vi] = parts;
            let s = tape.matmul_t(qi, ki);
            let s = tape.scale(s, 1.0 / (h as f64).sqrt());
            let s = tape.add(s, bias);
            let w = tape.softmax(s);
            let mut head = tape.matmul(w, vi);
            let mi = tape.slice(wo, Axis::Rows, i * n, n);
            let out = if hyp {
                head = gyro::exp0(tape, head, c);
                gyro::mobius_matvec(tape, mi, head, c)
            } else {
                tape.matmul_t(head, mi)
            };
            acc = Some(match acc {
                None => out,
                Some(a) if hyp => gyro::mobius_add(tape, a, out, c),
                Some(a) => tape.add(a, out),
            });
        }
        acc.expect("at least one head")
    }

    fn ffn(&self, tape: &mut Tape, ctx: &Ctx, l: usize, x: Var) -> Var {
        let c = self.config.c;
        let [w1, b1, w2, b2] = ["w1", "b1", "w2", "b2"].map(|p| ctx.v(&layer_name(l, p)));
        if ctx.hyperbolic() {
            let h = gyro::mobius_matvec(tape, w1, x, c);
            let h = gyro::mobius_add(tape, h, b1, c);
            let t = gyro::log0(tape, h, c);
            let t = tape.relu(t);
            let h = gyro::exp0(tape, t, c);
            let y = gyro::mobius_matvec(tape, w2, h, c);
            gyro::mobius_add(tape, y, b2, c)
        } else {
            let h = tape.matmul_t(x, w1);
            let b1 = tape.broadcast_as(b1, h);
            let h = tape.add(h, b1);
            let h = tape.relu(h);
            let y = tape.matmul_t(h, w2);
            let b2 = tape.broadcast_as(b2, y);
            tape.add(y, b2)
        }
    }

    fn residual(&self, tape: &mut Tape, ctx: &Ctx, x: Var, y: Var) -> Var {
        match (self.config.residual, ctx.hyperbolic()) {
            (false, _) => y,
            (true, true) => gyro::mobius_add(tape, x, y, self.config.c),
            (true, false) => tape.add(x, y),
        }
    }

    /// Pooled sequence representations `[B, n]`; points of the ball in the
    /// hyperbolic model.
    fn encode_on(
        &self,
        tape: &mut Tape,
        ctx: &Ctx,
        batch: &SequenceBatch,
        mut rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(HypformerError::EmptyBatch);
        }
        let layout = Layout::new(batch)?;
        let c = self.config.c;
        let bias = tape.constant(layout.attention_bias());
        let mut x = self.inputs(tape, ctx, batch, &layout);
        for l in 0..self.config.layers {
            let a = self.attention(tape, ctx, l, x, bias);
            let a = self.dropout(tape, ctx, a, rng.as_deref_mut());
            let a = self.residual(tape, ctx, x, a);
            let f = self.ffn(tape, ctx, l, a);
            let f = self.dropout(tape, ctx, f, rng.as_deref_mut());
            x = self.residual(tape, ctx, a, f);
            debug_assert!(!ctx.hyperbolic() || inside_ball(tape.value(x), c));
        }
        let t = if ctx.hyperbolic() { gyro::log0(tape, x, c) } else { x };
        let mut pool_bias = Tensor::zeros(layout.total, self.config.model_dim);
        for (off, m) in layout.offsets.iter().zip(&layout.masks) {
            for (i, keep) in m.iter().enumerate() {
                if !keep {
                    pool_bias.row_slice_mut(off + i).fill(MASK_LOGIT);
                }
            }
        }
        let pb = tape.constant(pool_bias);
        let t = tape.add(t, pb);
        let rows: Vec<Var> = layout
            .offsets
            .iter()
            .zip(&layout.masks)
            .map(|(&off, m)| {
                let s = tape.slice(t, Axis::Rows, off, m.len());
                tape.max(s, Reduce::PerCol)
            })
            .collect();
        let pooled = if rows.len() == 1 { rows[0] } else { tape.concat(&rows, Axis::Rows) };
        Ok(if ctx.hyperbolic() { gyro::exp0(tape, pooled, c) } else { pooled })
    }

    fn logits_on(&self, tape: &mut Tape, ctx: &Ctx, pooled: Var) -> Var {
        if ctx.hyperbolic() {
            gyro::mlr_logits(tape, pooled, ctx.v("head.a"), ctx.v("head.p"), self.config.c)
        } else {
            let s = tape.matmul_t(pooled, ctx.v("head.w"));
            let b = tape.broadcast_as(ctx.v("head.b"), s);
            tape.add(s, b)
        }
    }

    fn check_labels(&self, batch: &SequenceBatch) -> Result<()> {
        if batch.labels.len() != batch.len() {
            return Err(HypformerError::Config("one label per sequence required".into()));
        }
        let k = self.config.num_classes;
        match batch.labels.iter().find(|&&y| y >= k) {
            Some(&label) => Err(HypformerError::LabelOutOfRange { label, classes: k }),
            None => Ok(()),
        }
    }

    /// Builds the mean cross-entropy of `batch` on a fresh tape. Parameters
    /// are named leaves, so the tape can be replayed for gradient checks.
    /// Passing an rng switches dropout on.
    pub fn loss_tape(&self, batch: &SequenceBatch, rng: Option<&mut dyn rand::RngCore>) -> Result<(Tape, Var, Var)> {
        self.check_labels(batch)?;
        let mut tape = Tape::new();
        let ctx = Ctx { cfg: &self.config, vars: self.leaves(&mut tape) };
        let pooled = self.encode_on(&mut tape, &ctx, batch, rng)?;
        let logits = self.logits_on(&mut tape, &ctx, pooled);
        let loss = cross_entropy(&mut tape, logits, &batch.labels, self.config.num_classes);
        Ok((tape, loss, logits))
    }

    /// Class scores `[B, K]` in evaluation mode.
    pub fn logits(&self, batch: &SequenceBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let ctx = Ctx { cfg: &self.config, vars: self.leaves(&mut tape) };
        let pooled = self.encode_on(&mut tape, &ctx, batch, None)?;
        let logits = self.logits_on(&mut tape, &ctx, pooled);
        Ok(tape.value(logits).clone())
    }

    /// Pooled representations `[B, n]` in evaluation mode.
    pub fn encode(&self, batch: &SequenceBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let ctx = Ctx { cfg: &self.config, vars: self.leaves(&mut tape) };
        let pooled = self.encode_on(&mut tape, &ctx, batch, None)?;
        Ok(tape.value(pooled).clone())
    }

    /// Class probabilities per sequence.
    pub fn classifier_forward(&self, batch: &SequenceBatch) -> Result<Tensor> {
        let logits = self.logits(batch)?;
        let mut out = Tensor::zeros(logits.rows(), logits.cols());
        for r in 0..logits.rows() {
            out.row_slice_mut(r).copy_from_slice(&super::ops::softmax(logits.row_slice(r)));
        }
        Ok(out)
    }
}

fn inside_ball(x: &Tensor, c: f64) -> bool {
    (0..x.rows()).all(|r| x.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt() < c)
}

/// Mean of `logsumexp(z) − z_y` over rows.
fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize], k: usize) -> Var {
    let b = labels.len();
    let mut onehot = Tensor::zeros(b, k);
    for (r, &y) in labels.iter().enumerate() {
        onehot.set(r, y, 1.0);
    }
    let m = tape.max(logits, Reduce::PerRow);
    let mb = tape.broadcast_as(m, logits);
    let z = tape.sub(logits, mb);
    let e = tape.exp(z);
    let s = tape.sum(e, Reduce::PerRow);
    let ls = tape.log(s);
    let lse = tape.add(ls, m);
    let oh = tape.constant(onehot);
    let picked = tape.mul(logits, oh);
    let picked = tape.sum(picked, Reduce::PerRow);
    let ce = tape.sub(lse, picked);
    let total = tape.sum(ce, Reduce::All);
    tape.scale(total, 1.0 / b as f64)
}

#[cfg(test)]
mod tests {
    use super::super::ops;
    use super::*;
    use crate::diffcore::check_tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(geometry: GeometryTag) -> TransformerConfig {
        TransformerConfig {
            layers: 1,
            heads: 2,
            model_dim: 8,
            head_dim: 4,
            ffn_dim: 8,
            dropout: 0.0,
            geometry,
            max_seq_len: 16,
            num_classes: 3,
            c: 1.0,
            residual: false,
            pe_scale: 1.0,
        }
    }

    fn model(cfg: TransformerConfig, seed: u64) -> Classifier {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let table = TokenTable::random(tokens, cfg.model_dim, 0.5, cfg.geometry, cfg.c, &mut rng);
        Classifier::new(cfg, table, &mut rng).unwrap()
    }

    fn batch() -> SequenceBatch {
        use Slot::*;
        SequenceBatch {
            sequences: vec![vec![Token(0), Token(1), Token(2)], vec![Token(3), Unknown], vec![Token(2)]],
            labels: vec![0, 2, 1],
        }
    }

    #[test]
    fn probabilities_are_distributions() {
        for g in [GeometryTag::Poincare, GeometryTag::Euclidean] {
            let m = model(tiny(g), 1);
            let p = m.classifier_forward(&batch()).unwrap();
            for r in 0..p.rows() {
                assert!((p.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let one = model(TransformerConfig { num_classes: 1, ..tiny(g) }, 2);
            let p = one.classifier_forward(&SequenceBatch { labels: vec![0; 3], ..batch() }).unwrap();
            assert!(p.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn batching_matches_single_sequences() {
        let m = model(tiny(GeometryTag::Poincare), 3);
        let b = batch();
        let all = m.logits(&b).unwrap();
        for i in 0..b.len() {
            let one = m.logits(&b.subset(&[i])).unwrap();
            let diff: f64 = one.row_slice(0).iter().zip(all.row_slice(i)).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12, "{diff}");
        }
    }

    #[test]
    fn padding_is_invisible() {
        for g in [GeometryTag::Poincare, GeometryTag::Euclidean] {
            let m = model(tiny(g), 4);
            let b = batch();
            let p = m.classifier_forward(&b).unwrap();
            let mut padded = b.padded();
            for s in &mut padded.sequences {
                s.extend([Slot::Pad; 3]);
            }
            let q = m.classifier_forward(&padded).unwrap();
            assert!(p.max_abs_diff(&q) < 1e-10);
        }
    }

    #[test]
    fn all_masked_sequence_is_rejected() {
        let m = model(tiny(GeometryTag::Poincare), 5);
        let b = SequenceBatch { sequences: vec![vec![Slot::Pad]], labels: vec![0] };
        assert!(matches!(m.logits(&b), Err(HypformerError::AllMasked)));
        let b = SequenceBatch { sequences: vec![vec![Slot::Token(0)]], labels: vec![7] };
        assert!(matches!(m.loss_tape(&b, None), Err(HypformerError::LabelOutOfRange { .. })));
    }

    /// The tape model against the point-wise reference ops for one sequence.
    #[test]
    fn tape_matches_reference_ops() {
        let cfg = tiny(GeometryTag::Poincare);
        let m = model(cfg.clone(), 6);
        let seq = [0usize, 1, 2];
        let c = cfg.c;
        let n = cfg.model_dim;
        let p = |name: &str| m.params.value(name).clone();
        let mut xs: Vec<PoincarePoint> = seq
            .iter()
            .enumerate()
            .map(|(pos, &id)| {
                let x = PoincarePoint::projected(m.table.vectors.row_slice(id).to_vec(), c);
                ops::attach_positions(&x, &positional_encoding(pos, n)).unwrap()
            })
            .collect();
        let split = |w: &Tensor, xs: &[PoincarePoint]| -> Vec<Vec<PoincarePoint>> {
            xs.iter().map(|x| ops::split_heads(w, x, cfg.heads).unwrap()).collect()
        };
        let (q, k, v) = (split(&p("layer0.wq"), &xs), split(&p("layer0.wk"), &xs), split(&p("layer0.wv"), &xs));
        let mask = vec![true; seq.len()];
        let per_head: Vec<Vec<PoincarePoint>> = (0..cfg.heads)
            .map(|i| {
                let col = |s: &Vec<Vec<PoincarePoint>>| s.iter().map(|r| r[i].clone()).collect::<Vec<_>>();
                ops::hyperbolic_attention(&col(&q), &col(&k), &col(&v), &mask).unwrap()
            })
            .collect();
        let wo = p("layer0.wo");
        let ms: Vec<Tensor> = (0..cfg.heads)
            .map(|i| Tensor::from_rows(&wo.to_rows()[i * n..(i + 1) * n]).unwrap())
            .collect();
        xs = (0..seq.len())
            .map(|t| {
                let heads: Vec<PoincarePoint> = per_head.iter().map(|hd| hd[t].clone()).collect();
                let merged = ops::merge_heads(&heads, &ms).unwrap();
                let b1 = PoincarePoint::projected(p("layer0.b1").into_data(), c);
                let b2 = PoincarePoint::projected(p("layer0.b2").into_data(), c);
                ops::hyperbolic_ffn(&merged, &p("layer0.w1"), &b1, &p("layer0.w2"), &b2, |z| z.max(0.0)).unwrap()
            })
            .collect();
        let pooled = ops::hyperbolic_pool(&xs, &mask).unwrap();
        let pk: Vec<PoincarePoint> =
            p("head.p").to_rows().into_iter().map(|r| PoincarePoint::projected(r, c)).collect();
        let expect = ops::hyperbolic_mlr(&pooled, &p("head.a"), &pk).unwrap();
        let b = SequenceBatch { sequences: vec![seq.iter().map(|&i| Slot::Token(i)).collect()], labels: vec![0] };
        let got = m.logits(&b).unwrap();
        for (g, e) in got.row_slice(0).iter().zip(&expect) {
            assert!((g - e).abs() < 1e-10, "{g} vs {e}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for g in [GeometryTag::Poincare, GeometryTag::Euclidean] {
            let m = model(tiny(g), 7);
            let (mut tape, loss, _) = m.loss_tape(&batch(), None).unwrap();
            let report = check_tape(&mut tape, loss, 1e-5, 1e-4).unwrap();
            assert!(report.passed, "{g}: {report:?}");
        }
    }

    #[test]
    fn flat_limit_matches_euclidean_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ecfg = TransformerConfig { pe_scale: 0.0, layers: 2, ..tiny(GeometryTag::Euclidean) };
        let tokens: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        // expected norm 0.005
        let table = TokenTable::random(tokens, 8, 0.005, GeometryTag::Euclidean, 1.0, &mut rng);
        assert!(table.vectors().to_rows().iter().all(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-2));
        let flat = Classifier::new(ecfg.clone(), table.clone(), &mut rng).unwrap();
        let hcfg = TransformerConfig { geometry: GeometryTag::Poincare, ..ecfg };
        let mut hyp = Classifier::new(hcfg, table, &mut rng).unwrap();
        for (name, p) in flat.params.iter() {
            if !name.starts_with("head") {
                *hyp.params.value_mut(name) = p.value.clone();
            }
        }
        let b = batch();
        let e = flat.encode(&b).unwrap();
        let h = hyp.encode(&b).unwrap();
        let scale = e.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(scale > 1e-4, "degenerate comparison");
        assert!(e.max_abs_diff(&h) < 1e-3, "{}", e.max_abs_diff(&h));
    }

    #[test]
    fn dropout_only_in_training() {
        let m = model(TransformerConfig { dropout: 0.5, ..tiny(GeometryTag::Poincare) }, 8);
        let b = batch();
        let (t0, l0, _) = m.loss_tape(&b, None).unwrap();
        let (t1, l1, _) = m.loss_tape(&b, None).unwrap();
        assert_eq!(t0.value(l0), t1.value(l1));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (t2, l2, _) = m.loss_tape(&b, Some(&mut rng)).unwrap();
        assert_ne!(t0.value(l0), t2.value(l2));
    }
}
