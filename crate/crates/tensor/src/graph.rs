//! Tape-based reverse-mode autodiff.
//!
//! Every node holds a 2-D value (`rows x cols`). Word-sequence nodes are
//! ragged: their rows are the word positions of all batch samples laid end
//! to end, and `segments` holds the per-sample row offsets.

use std::rc::Rc;

use crate::error::{shape_err, Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::sparse::{SeqBatch, SparseBatch, SparseVec};
use crate::tensor::Tensor;

/// Lower/upper clamp applied to probabilities inside cross-entropy.
pub const CE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch-norm normalizes with batch statistics and updates running averages.
    Train,
    /// Batch-norm uses its frozen running averages.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Params<'a> {
    Shared(&'a ParamStore),
    Exclusive(&'a mut ParamStore),
}

impl Params<'_> {
    fn get(&self, id: ParamId) -> &Tensor {
        match self {
            Params::Shared(s) => s.get(id),
            Params::Exclusive(s) => s.get(id),
        }
    }

    fn store_mut(&mut self) -> Result<&mut ParamStore> {
        match self {
            Params::Shared(_) => Err(TensorError::ReadOnlyParams),
            Params::Exclusive(s) => Ok(s),
        }
    }
}

struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

enum Op {
    Leaf,
    Dense { x: Var, w: ParamId, b: ParamId },
    EmbeddingSum { rows: SparseBatch, w: ParamId, b: Option<ParamId> },
    ConvWords { words: Vec<SparseVec>, w: ParamId, b: ParamId },
    MaxPool { x: Var, argmax: Vec<usize> },
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    BatchNorm { x: Var, gamma: ParamId, beta: ParamId, cache: BnCache },
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    L2Normalize { x: Var, norms: Vec<f64> },
    RowDot(Var, Var),
    Affine { x: Var, scale: f64 },
    Sum(Var),
    CrossEntropy { p: Var, targets: Vec<f64>, sample_w: Vec<f64>, task_w: Vec<f64> },
    WeightedMse { pred: Var, targets: Vec<f64>, weights: Vec<f64> },
}

struct Node {
    value: Tensor,
    segments: Option<Rc<Vec<usize>>>,
    needs_grad: bool,
    op: Op,
}

/// One forward pass worth of recorded operations.
pub struct Graph<'a> {
    params: Params<'a>,
    mode: Mode,
    nodes: Vec<Node>,
}

impl<'a> Graph<'a> {
    /// Graph with write access to the store; required for `backward` and
    /// for train-mode batch-norm.
    pub fn new(store: &'a mut ParamStore, mode: Mode) -> Self {
        Self { params: Params::Exclusive(store), mode, nodes: Vec::new() }
    }

    /// Read-only eval-mode graph; safe to build concurrently over one store.
    pub fn inference(store: &'a ParamStore) -> Self {
        Self { params: Params::Shared(store), mode: Mode::Eval, nodes: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated into a node by the last `backward`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Row offsets of a ragged sequence node.
    pub fn segments(&self, v: Var) -> Option<&[usize]> {
        self.nodes[v.0].segments.as_deref().map(Vec::as_slice)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        value.ensure_finite(name)?;
        self.nodes.push(Node { value, segments: None, needs_grad, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_seq(&mut self, value: Tensor, segments: Rc<Vec<usize>>, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        let v = self.push(value, op, needs_grad, name)?;
        self.nodes[v.0].segments = Some(segments);
        Ok(v)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf; its gradient is readable after `backward`.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, true, "input")
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// `x · W + b` with `W: [in, out]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let (n, din) = self.dims(x);
        let wt = self.params.get(w);
        let (win, dout) = (wt.rows(), wt.cols());
        if win != din || self.params.get(b).len() != dout {
            return Err(shape_err("dense", format!("input width {din}, weight {win}x{dout}")));
        }
        let xs = self.nodes[x.0].value.data();
        let ws = wt.data();
        let bs = self.params.get(b).data();
        let mut out = vec![0.0; n * dout];
        for i in 0..n {
            let orow = &mut out[i * dout..(i + 1) * dout];
            orow.copy_from_slice(bs);
            let xrow = &xs[i * din..(i + 1) * din];
            for (k, &xv) in xrow.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wrow = &ws[k * dout..(k + 1) * dout];
                for (o, &wv) in orow.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
        let value = Tensor::matrix(n, dout, out)?;
        let segs = self.nodes[x.0].segments.clone();
        let v = self.push(value, Op::Dense { x, w, b }, true, "dense")?;
        self.nodes[v.0].segments = segs;
        Ok(v)
    }

    /// Row `i` = `Σ_j rows[i]_j · W[j] (+ b)` for sparse bags; `W: [vocab, dim]`.
    pub fn embedding_sum(&mut self, rows: &SparseBatch, w: ParamId, b: Option<ParamId>) -> Result<Var> {
        let wt = self.params.get(w);
        let (vocab, dim) = (wt.rows(), wt.cols());
        let ws = wt.data();
        let mut out = vec![0.0; rows.len() * dim];
        for (i, bag) in rows.iter().enumerate() {
            let orow = &mut out[i * dim..(i + 1) * dim];
            if let Some(b) = b {
                orow.copy_from_slice(self.params.get(b).data());
            }
            for (idx, cnt) in bag.iter() {
                let idx = idx as usize;
                if idx >= vocab {
                    return Err(shape_err("embedding_sum", format!("index {idx} >= vocab {vocab}")));
                }
                for (o, &wv) in orow.iter_mut().zip(&ws[idx * dim..(idx + 1) * dim]) {
                    *o += cnt * wv;
                }
            }
        }
        let value = Tensor::matrix(rows.len(), dim, out)?;
        self.push(value, Op::EmbeddingSum { rows: rows.clone(), w, b }, true, "embedding_sum")
    }

    /// Width-3 convolution over word positions with zero padding at both
    /// sequence edges. `W: [3, vocab, channels]`, `b: [channels]`; returns a
    /// ragged node with one row per word.
    pub fn conv_words(&mut self, seqs: &SeqBatch, w: ParamId, b: ParamId) -> Result<Var> {
        let wt = self.params.get(w);
        if wt.shape().len() != 3 || wt.shape()[0] != 3 {
            return Err(shape_err("conv_words", format!("weight shape {:?}", wt.shape())));
        }
        let (vocab, ch) = (wt.shape()[1], wt.shape()[2]);
        let ws = wt.data();
        let bs = self.params.get(b).data();
        if bs.len() != ch {
            return Err(shape_err("conv_words", "bias width"));
        }
        let mut segments = Vec::with_capacity(seqs.len() + 1);
        segments.push(0);
        for s in seqs {
            if s.is_empty() {
                return Err(TensorError::EmptySequence("conv_words"));
            }
            segments.push(segments.last().unwrap() + s.len());
        }
        let total = *segments.last().unwrap();
        let mut out = vec![0.0; total * ch];
        for (si, seq) in seqs.iter().enumerate() {
            let base = segments[si];
            for t in 0..seq.len() {
                let orow = &mut out[(base + t) * ch..(base + t + 1) * ch];
                orow.copy_from_slice(bs);
                for k in 0..3 {
                    let Some(src) = (t + k).checked_sub(1).filter(|s| *s < seq.len()) else {
                        continue;
                    };
                    for (idx, cnt) in seq[src].iter() {
                        let idx = idx as usize;
                        if idx >= vocab {
                            return Err(shape_err("conv_words", format!("index {idx} >= vocab {vocab}")));
                        }
                        let off = (k * vocab + idx) * ch;
                        for (o, &wv) in orow.iter_mut().zip(&ws[off..off + ch]) {
                            *o += cnt * wv;
                        }
                    }
                }
            }
        }
        let words: Vec<SparseVec> = seqs.iter().flatten().cloned().collect();
        let value = Tensor::matrix(total, ch, out)?;
        self.push_seq(value, Rc::new(segments), Op::ConvWords { words, w, b }, true, "conv_words")
    }

    /// Per-sample channel-wise max over the word positions of a ragged node.
    pub fn max_pool_words(&mut self, x: Var) -> Result<Var> {
        let segs = self.nodes[x.0]
            .segments
            .clone()
            .ok_or_else(|| shape_err("max_pool_words", "input is not a word sequence"))?;
        let xt = &self.nodes[x.0].value;
        let ch = xt.cols();
        let xs = xt.data();
        let batch = segs.len() - 1;
        let mut out = vec![0.0; batch * ch];
        let mut argmax = vec![0usize; batch * ch];
        for b in 0..batch {
            let (lo, hi) = (segs[b], segs[b + 1]);
            if lo == hi {
                return Err(TensorError::EmptySequence("max_pool_words"));
            }
            for c in 0..ch {
                let mut best = lo;
                for r in lo + 1..hi {
                    if xs[r * ch + c] > xs[best * ch + c] {
                        best = r;
                    }
                }
                out[b * ch + c] = xs[best * ch + c];
                argmax[b * ch + c] = best;
            }
        }
        let value = Tensor::matrix(batch, ch, out)?;
        let ng = self.needs(x);
        self.push(value, Op::MaxPool { x, argmax }, ng, "max_pool_words")
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op, name: &'static str) -> Result<Var> {
        let xt = &self.nodes[x.0].value;
        let data = xt.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(xt.shape().to_vec(), data)?;
        let segs = self.nodes[x.0].segments.clone();
        let ng = self.needs(x);
        let v = self.push(value, op, ng, name)?;
        self.nodes[v.0].segments = segs;
        Ok(v)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::tanh, Op::Tanh(x), "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.max(0.0), Op::Relu(x), "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid(x), "sigmoid")
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.unary(x, |v| scale * v + shift, Op::Affine { x, scale }, "affine")
    }

    /// Per-column batch normalization. `running` holds `(mean, var)` ids.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        running: (ParamId, ParamId),
        momentum: f64,
        eps: f64,
    ) -> Result<Var> {
        let (n, d) = self.dims(x);
        if self.params.get(gamma).len() != d {
            return Err(shape_err("batch_norm", format!("gamma width {} vs {d}", self.params.get(gamma).len())));
        }
        let batch_stats = self.mode == Mode::Train;
        let (mean, var) = if batch_stats {
            let xs = self.nodes[x.0].value.data();
            let mut mean = vec![0.0; d];
            for i in 0..n {
                for (m, &v) in mean.iter_mut().zip(&xs[i * d..(i + 1) * d]) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; d];
            for i in 0..n {
                for ((s, &v), m) in var.iter_mut().zip(&xs[i * d..(i + 1) * d]).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            (mean, var)
        } else {
            (self.params.get(running.0).data().to_vec(), self.params.get(running.1).data().to_vec())
        };
        if batch_stats {
            let store = self.params.store_mut()?;
            let unbias = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
            for (r, m) in store.get_mut(running.0).data_mut().iter_mut().zip(&mean) {
                *r = momentum * *r + (1.0 - momentum) * m;
            }
            for (r, v) in store.get_mut(running.1).data_mut().iter_mut().zip(&var) {
                *r = momentum * *r + (1.0 - momentum) * v * unbias;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xs = self.nodes[x.0].value.data();
        let g = self.params.get(gamma).data();
        let bt = self.params.get(beta).data();
        let mut xhat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for c in 0..d {
                let h = (xs[i * d + c] - mean[c]) * inv_std[c];
                xhat[i * d + c] = h;
                out[i * d + c] = g[c] * h + bt[c];
            }
        }
        let value = Tensor::matrix(n, d, out)?;
        let cache = BnCache { xhat, inv_std, batch_stats };
        self.push(value, Op::BatchNorm { x, gamma, beta, cache }, true, "batch_norm")
    }

    fn binary_same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng, "add")
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), ng, "mul")
    }

    /// Column-wise concatenation of equally tall matrices.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat", "no inputs"));
        };
        let n = self.dims(first).0;
        if parts.iter().any(|p| self.dims(*p).0 != n) {
            return Err(shape_err("concat", "row counts differ"));
        }
        let width: usize = parts.iter().map(|p| self.dims(*p).1).sum();
        let mut out = Vec::with_capacity(n * width);
        for i in 0..n {
            for p in parts {
                out.extend_from_slice(self.nodes[p.0].value.row(i));
            }
        }
        let value = Tensor::matrix(n, width, out)?;
        let ng = parts.iter().any(|p| self.needs(*p));
        self.push(value, Op::Concat(parts.to_vec()), ng, "concat")
    }

    /// Scales every row to unit L2 norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims(x);
        let xs = self.nodes[x.0].value.data();
        let mut norms = Vec::with_capacity(n);
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = &xs[i * d..(i + 1) * d];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for (o, v) in out[i * d..(i + 1) * d].iter_mut().zip(row) {
                *o = v / norm;
            }
            norms.push(norm);
        }
        let value = Tensor::matrix(n, d, out)?;
        let ng = self.needs(x);
        self.push(value, Op::L2Normalize { x, norms }, ng, "l2_normalize")
    }

    /// Row-wise inner products, `n x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "row_dot")?;
        let (n, d) = self.dims(a);
        let (xa, xb) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
        let out = (0..n).map(|i| dot(&xa[i * d..(i + 1) * d], &xb[i * d..(i + 1) * d])).collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(Tensor::column(out), Op::RowDot(a, b), ng, "row_dot")
    }

    /// Sum of all entries, `1 x 1`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.nodes[x.0].value.data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng, "sum")
    }

    /// Weighted binary cross-entropy over an `n x T` probability matrix:
    /// `Σ_t task_w[t] · mean_i sample_w[i] · CE(p[i,t], targets[i,t])`.
    /// Probabilities are clamped to `[1e-7, 1 - 1e-7]`.
    pub fn cross_entropy(&mut self, p: Var, targets: &[f64], sample_w: &[f64], task_w: &[f64]) -> Result<Var> {
        let (n, t) = self.dims(p);
        if targets.len() != n * t || sample_w.len() != n || task_w.len() != t {
            return Err(shape_err(
                "cross_entropy",
                format!("p {n}x{t}, targets {}, sample weights {}, task weights {}", targets.len(), sample_w.len(), task_w.len()),
            ));
        }
        let ps = self.nodes[p.0].value.data();
        let mut loss = 0.0;
        for i in 0..n {
            for j in 0..t {
                let pc = ps[i * t + j].clamp(CE_CLAMP, 1.0 - CE_CLAMP);
                let y = targets[i * t + j];
                loss -= task_w[j] * sample_w[i] * (y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
            }
        }
        loss /= n.max(1) as f64;
        let op = Op::CrossEntropy { p, targets: targets.to_vec(), sample_w: sample_w.to_vec(), task_w: task_w.to_vec() };
        let ng = self.needs(p);
        self.push(Tensor::scalar(loss), op, ng, "cross_entropy")
    }

    /// `mean_i weights[i] · (targets[i] − pred[i])²` over all entries of `pred`.
    pub fn weighted_mse(&mut self, pred: Var, targets: &[f64], weights: &[f64]) -> Result<Var> {
        let ps = self.nodes[pred.0].value.data();
        if targets.len() != ps.len() || weights.len() != ps.len() {
            return Err(shape_err("weighted_mse", format!("pred {}, targets {}, weights {}", ps.len(), targets.len(), weights.len())));
        }
        let n = ps.len().max(1) as f64;
        let loss = ps.iter().zip(targets).zip(weights).map(|((p, y), w)| w * (y - p) * (y - p)).sum::<f64>() / n;
        let op = Op::WeightedMse { pred, targets: targets.to_vec(), weights: weights.to_vec() };
        let ng = self.needs(pred);
        self.push(Tensor::scalar(loss), op, ng, "weighted_mse")
    }

    /// Back-propagates from `loss`, seeding its gradient with ones.
    /// Parameter gradients accumulate into the store; calling twice without
    /// zeroing doubles them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::BackwardBeforeForward);
        }
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
        let n = self.nodes[loss.0].value.len();
        self.nodes[loss.0].value.set_grad(Some(vec![1.0; n]));
        let store = self.params.store_mut()?;
        let mut pass = PassGrads { bufs: vec![None; store.len()] };
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            let Some(gy) = node.value.take_grad() else { continue };
            backprop_node(node, &gy, before, store, &mut pass)?;
            node.value.set_grad(Some(gy));
        }
        // Each pass is summed separately, then added, so repeated passes
        // accumulate exactly.
        for id in store.ids().collect::<Vec<_>>() {
            if let Some(buf) = pass.bufs[id.index()].take() {
                add_into(store.get_mut(id).grad_mut(), &buf);
            }
        }
        Ok(())
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct PassGrads {
    bufs: Vec<Option<Vec<f64>>>,
}

impl PassGrads {
    fn buf(&mut self, id: ParamId, store: &ParamStore) -> &mut [f64] {
        let n = store.get(id).len();
        self.bufs[id.index()].get_or_insert_with(|| vec![0.0; n])
    }
}

fn accumulate(node: &mut Node, contrib: impl IntoIterator<Item = f64>) {
    if !node.needs_grad {
        return;
    }
    for (g, c) in node.value.grad_mut().iter_mut().zip(contrib) {
        *g += c;
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn backprop_node(node: &mut Node, gy: &[f64], before: &mut [Node], store: &ParamStore, pass: &mut PassGrads) -> Result<()> {
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Dense { x, w, b } => {
            let xn = &before[x.0];
            let (n, din) = (xn.value.rows(), xn.value.cols());
            let dout = store.get(*w).cols();
            {
                let xs = xn.value.data();
                let gw = pass.buf(*w, store);
                for i in 0..n {
                    let grow = &gy[i * dout..(i + 1) * dout];
                    for (k, &xv) in xs[i * din..(i + 1) * din].iter().enumerate() {
                        if xv != 0.0 {
                            for (g, &d) in gw[k * dout..(k + 1) * dout].iter_mut().zip(grow) {
                                *g += xv * d;
                            }
                        }
                    }
                }
            }
            {
                let gb = pass.buf(*b, store);
                for i in 0..n {
                    add_into(gb, &gy[i * dout..(i + 1) * dout]);
                }
            }
            if xn.needs_grad {
                let ws = store.get(*w).data();
                let gx = before[x.0].value.grad_mut();
                for i in 0..n {
                    let grow = &gy[i * dout..(i + 1) * dout];
                    for k in 0..din {
                        gx[i * din + k] += dot(&ws[k * dout..(k + 1) * dout], grow);
                    }
                }
            }
        }
        Op::EmbeddingSum { rows, w, b } => {
            let dim = store.get(*w).cols();
            {
                let gw = pass.buf(*w, store);
                for (i, bag) in rows.iter().enumerate() {
                    let grow = &gy[i * dim..(i + 1) * dim];
                    for (idx, cnt) in bag.iter() {
                        let idx = idx as usize;
                        for (g, &d) in gw[idx * dim..(idx + 1) * dim].iter_mut().zip(grow) {
                            *g += cnt * d;
                        }
                    }
                }
            }
            if let Some(b) = b {
                let gb = pass.buf(*b, store);
                for i in 0..rows.len() {
                    add_into(gb, &gy[i * dim..(i + 1) * dim]);
                }
            }
        }
        Op::ConvWords { words, w, b } => {
            let segs = node.segments.as_ref().expect("conv output is ragged");
            let shape = store.get(*w).shape().to_vec();
            let (vocab, ch) = (shape[1], shape[2]);
            {
                let gw = pass.buf(*w, store);
                for s in 0..segs.len() - 1 {
                    let (lo, hi) = (segs[s], segs[s + 1]);
                    let len = hi - lo;
                    for t in 0..len {
                        let grow = &gy[(lo + t) * ch..(lo + t + 1) * ch];
                        for k in 0..3 {
                            let Some(src) = (t + k).checked_sub(1).filter(|s| *s < len) else {
                                continue;
                            };
                            for (idx, cnt) in words[lo + src].iter() {
                                let off = (k * vocab + idx as usize) * ch;
                                for (g, &d) in gw[off..off + ch].iter_mut().zip(grow) {
                                    *g += cnt * d;
                                }
                            }
                        }
                    }
                }
            }
            let gb = pass.buf(*b, store);
            for r in 0..words.len() {
                add_into(gb, &gy[r * ch..(r + 1) * ch]);
            }
        }
        Op::MaxPool { x, argmax } => {
            let ch = before[x.0].value.cols();
            if before[x.0].needs_grad {
                let gx = before[x.0].value.grad_mut();
                for (j, &src) in argmax.iter().enumerate() {
                    gx[src * ch + j % ch] += gy[j];
                }
            }
        }
        Op::Tanh(x) => accumulate(&mut before[x.0], gy.iter().zip(out).map(|(g, y)| g * (1.0 - y * y))),
        Op::Sigmoid(x) => accumulate(&mut before[x.0], gy.iter().zip(out).map(|(g, y)| g * y * (1.0 - y))),
        Op::Relu(x) => {
            let xn = &mut before[x.0];
            if xn.needs_grad {
                let mask: Vec<f64> = xn.value.data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
                accumulate(xn, gy.iter().zip(mask).map(|(g, m)| g * m));
            }
        }
        Op::Affine { x, scale } => accumulate(&mut before[x.0], gy.iter().map(|g| g * scale)),
        Op::BatchNorm { x, gamma, beta, cache } => {
            let d = cache.inv_std.len();
            let n = gy.len() / d;
            let gam = store.get(*gamma).data().to_vec();
            {
                let gg = pass.buf(*gamma, store);
                for i in 0..n {
                    for c in 0..d {
                        gg[c] += gy[i * d + c] * cache.xhat[i * d + c];
                    }
                }
            }
            {
                let gb = pass.buf(*beta, store);
                for i in 0..n {
                    add_into(gb, &gy[i * d..(i + 1) * d]);
                }
            }
            if before[x.0].needs_grad {
                let mut gx = vec![0.0; n * d];
                if cache.batch_stats {
                    let mut sum_dh = vec![0.0; d];
                    let mut sum_dh_h = vec![0.0; d];
                    for i in 0..n {
                        for c in 0..d {
                            let dh = gy[i * d + c] * gam[c];
                            sum_dh[c] += dh;
                            sum_dh_h[c] += dh * cache.xhat[i * d + c];
                        }
                    }
                    let nf = n as f64;
                    for i in 0..n {
                        for c in 0..d {
                            let dh = gy[i * d + c] * gam[c];
                            gx[i * d + c] =
                                cache.inv_std[c] / nf * (nf * dh - sum_dh[c] - cache.xhat[i * d + c] * sum_dh_h[c]);
                        }
                    }
                } else {
                    for i in 0..n {
                        for c in 0..d {
                            gx[i * d + c] = gy[i * d + c] * gam[c] * cache.inv_std[c];
                        }
                    }
                }
                accumulate(&mut before[x.0], gx);
            }
        }
        Op::Add(a, b) => {
            accumulate(&mut before[a.0], gy.iter().copied());
            accumulate(&mut before[b.0], gy.iter().copied());
        }
        Op::Mul(a, b) => {
            let ga: Vec<f64> = gy.iter().zip(before[b.0].value.data()).map(|(g, v)| g * v).collect();
            let gb: Vec<f64> = gy.iter().zip(before[a.0].value.data()).map(|(g, v)| g * v).collect();
            accumulate(&mut before[a.0], ga);
            accumulate(&mut before[b.0], gb);
        }
        Op::Concat(parts) => {
            let width: usize = parts.iter().map(|p| before[p.0].value.cols()).sum();
            let n = gy.len() / width.max(1);
            let mut offset = 0;
            for p in parts {
                let w = before[p.0].value.cols();
                let contrib: Vec<f64> = (0..n).flat_map(|i| gy[i * width + offset..i * width + offset + w].iter().copied()).collect();
                accumulate(&mut before[p.0], contrib);
                offset += w;
            }
        }
        Op::L2Normalize { x, norms } => {
            let d = gy.len() / norms.len().max(1);
            let mut gx = vec![0.0; gy.len()];
            for (i, norm) in norms.iter().enumerate() {
                let yrow = &out[i * d..(i + 1) * d];
                let grow = &gy[i * d..(i + 1) * d];
                let proj = dot(yrow, grow);
                for c in 0..d {
                    gx[i * d + c] = (grow[c] - yrow[c] * proj) / norm;
                }
            }
            accumulate(&mut before[x.0], gx);
        }
        Op::RowDot(a, b) => {
            let d = before[a.0].value.cols();
            let ga: Vec<f64> = before[b.0].value.data().iter().enumerate().map(|(j, v)| gy[j / d] * v).collect();
            let gb: Vec<f64> = before[a.0].value.data().iter().enumerate().map(|(j, v)| gy[j / d] * v).collect();
            accumulate(&mut before[a.0], ga);
            accumulate(&mut before[b.0], gb);
        }
        Op::Sum(x) => {
            let n = before[x.0].value.len();
            accumulate(&mut before[x.0], std::iter::repeat_n(gy[0], n));
        }
        Op::CrossEntropy { p, targets, sample_w, task_w } => {
            let t = task_w.len();
            let n = sample_w.len();
            let ps = before[p.0].value.data();
            let mut gp = vec![0.0; ps.len()];
            for i in 0..n {
                for j in 0..t {
                    let pv = ps[i * t + j];
                    if !(CE_CLAMP..=1.0 - CE_CLAMP).contains(&pv) {
                        continue;
                    }
                    let y = targets[i * t + j];
                    gp[i * t + j] = gy[0] * task_w[j] * sample_w[i] * ((1.0 - y) / (1.0 - pv) - y / pv) / n as f64;
                }
            }
            accumulate(&mut before[p.0], gp);
        }
        Op::WeightedMse { pred, targets, weights } => {
            let ps = before[pred.0].value.data();
            let n = ps.len().max(1) as f64;
            let gp: Vec<f64> = ps
                .iter()
                .zip(targets)
                .zip(weights)
                .map(|((p, y), w)| gy[0] * 2.0 * w * (p - y) / n)
                .collect();
            accumulate(&mut before[pred.0], gp);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Dense, ResidualUnit};

    fn identity_dense(store: &mut ParamStore, n: usize) -> Dense {
        let mut rng = crate::init::rng(0);
        let d = Dense::new(store, "id", n, n, &mut rng);
        let w = store.get_mut(d.w).data_mut();
        w.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        d
    }

    #[test]
    fn dense_with_identity_weights_is_identity() {
        let mut store = ParamStore::new();
        let d = identity_dense(&mut store, 3);
        let mut g = Graph::inference(&store);
        let x = g.constant(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap()).unwrap();
        let y = d.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn maxpool_over_single_word_returns_that_word() {
        let mut store = ParamStore::new();
        let conv = crate::layers::Conv1dWords::new(&mut store, "c", 5, 4, &mut crate::init::rng(1));
        let word = SparseVec::from_pairs(vec![(1, 1.0), (3, 2.0)]);
        let mut g = Graph::inference(&store);
        let h = conv.forward(&mut g, &vec![vec![word]]).unwrap();
        let p = g.max_pool_words(h).unwrap();
        assert_eq!(g.value(p).data(), g.value(h).data());
    }

    #[test]
    fn residual_unit_with_zero_weights_is_identity() {
        let mut store = ParamStore::new();
        let unit = ResidualUnit::new(&mut store, "r", 3, 5, &mut crate::init::rng(2));
        for id in [unit.inner.w, unit.outer.w, unit.inner.b, unit.outer.b] {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::matrix(2, 3, vec![-1.0, 0.5, 2.0, 3.0, -4.0, 0.25]).unwrap();
        let mut g = Graph::new(&mut store, Mode::Train);
        let xv = g.constant(x.clone()).unwrap();
        let y = unit.forward(&mut g, xv).unwrap();
        assert_eq!(g.value(y).data(), x.data());
    }

    #[test]
    fn sum_through_identity_gives_unit_input_grads() {
        let mut store = ParamStore::new();
        let d = identity_dense(&mut store, 4);
        let mut g = Graph::new(&mut store, Mode::Train);
        let x = g.input(Tensor::matrix(3, 4, (0..12).map(f64::from).collect()).unwrap()).unwrap();
        let y = d.forward(&mut g, x).unwrap();
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn second_backward_doubles_parameter_grads() {
        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 3, 2, &mut crate::init::rng(3));
        let x = Tensor::matrix(2, 3, vec![0.3, -0.7, 1.1, 2.0, 0.1, -0.4]).unwrap();
        let (w, b) = (d.w, d.b);
        {
            let mut g = Graph::new(&mut store, Mode::Train);
            let xv = g.constant(x).unwrap();
            let y = d.forward(&mut g, xv).unwrap();
            let y = g.tanh(y).unwrap();
            let loss = g.sum(y).unwrap();
            g.backward(loss).unwrap();
            let once: Vec<f64> = g.params.store_mut().unwrap().get(w).grad().unwrap().to_vec();
            g.backward(loss).unwrap();
            let twice = g.params.store_mut().unwrap().get(w).grad().unwrap().to_vec();
            for (a, b) in once.iter().zip(&twice) {
                assert_eq!(2.0 * a, *b);
            }
        }
        assert!(store.get(b).grad().is_some());
    }

    #[test]
    fn backward_on_empty_graph_is_an_error() {
        let mut store = ParamStore::new();
        let mut g = Graph::new(&mut store, Mode::Train);
        assert!(matches!(g.backward(Var(0)), Err(TensorError::BackwardBeforeForward)));
    }

    #[test]
    fn backward_on_shared_store_is_rejected() {
        let store = ParamStore::new();
        let mut g = Graph::inference(&store);
        let x = g.input(Tensor::scalar(1.0)).unwrap();
        let s = g.sum(x).unwrap();
        assert!(matches!(g.backward(s), Err(TensorError::ReadOnlyParams)));
    }

    #[test]
    fn non_finite_values_trip_an_error() {
        let store = ParamStore::new();
        let mut g = Graph::inference(&store);
        let x = g.constant(Tensor::column(vec![1e308])).unwrap();
        assert!(matches!(g.affine(x, 10.0, 0.0), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn dense_shape_mismatch_is_reported() {
        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 3, 2, &mut crate::init::rng(0));
        let mut g = Graph::inference(&store);
        let x = g.constant(Tensor::matrix(1, 4, vec![0.0; 4]).unwrap()).unwrap();
        assert!(matches!(d.forward(&mut g, x), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn cross_entropy_at_half_is_ln2() {
        let store = ParamStore::new();
        let mut g = Graph::inference(&store);
        let p = g.constant(Tensor::column(vec![0.5])).unwrap();
        let l = g.cross_entropy(p, &[1.0], &[1.0], &[1.0]).unwrap();
        assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_clamps_saturated_probabilities() {
        let store = ParamStore::new();
        let mut g = Graph::inference(&store);
        let p = g.constant(Tensor::column(vec![0.0, 1.0])).unwrap();
        let l = g.cross_entropy(p, &[1.0, 0.0], &[1.0, 1.0], &[1.0]).unwrap();
        let expected = -(CE_CLAMP.ln());
        assert!((g.value(l).data()[0] - expected).abs() < 1e-9);
    }

    #[test]
    fn weighted_mse_matches_direct_evaluation() {
        let store = ParamStore::new();
        let mut g = Graph::inference(&store);
        let p = g.constant(Tensor::column(vec![0.9])).unwrap();
        let l = g.weighted_mse(p, &[0.8], &[1.0]).unwrap();
        assert!((g.value(l).data()[0] - 0.01).abs() < 1e-15);
        let l0 = g.weighted_mse(p, &[0.1], &[0.0]).unwrap();
        assert_eq!(g.value(l0).data()[0], 0.0);
    }
}
