//! Parameterized layers built on [`Graph`] ops.

use std::fmt;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::init::glorot_uniform;
use crate::params::{ParamId, ParamStore};
use crate::sparse::{SeqBatch, SparseBatch};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv1dWords,
    MaxPoolWords,
    Tanh,
    Relu,
    Sigmoid,
    BatchNorm,
    ResidualUnit,
    EmbeddingSum,
}

impl LayerKind {
    pub const ALL: [LayerKind; 9] = [
        LayerKind::Dense,
        LayerKind::Conv1dWords,
        LayerKind::MaxPoolWords,
        LayerKind::Tanh,
        LayerKind::Relu,
        LayerKind::Sigmoid,
        LayerKind::BatchNorm,
        LayerKind::ResidualUnit,
        LayerKind::EmbeddingSum,
    ];

    fn preserves_width(self) -> bool {
        matches!(
            self,
            LayerKind::MaxPoolWords
                | LayerKind::Tanh
                | LayerKind::Relu
                | LayerKind::Sigmoid
                | LayerKind::BatchNorm
                | LayerKind::ResidualUnit
        )
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv1dWords => "conv1d-over-words",
            LayerKind::MaxPoolWords => "maxpool-over-words",
            LayerKind::Tanh => "tanh",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::ResidualUnit => "residual-unit",
            LayerKind::EmbeddingSum => "embedding-sum",
        };
        f.write_str(s)
    }
}

/// Declarative description of one layer in a stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub seed: u64,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, in_dim: usize, out_dim: usize, seed: u64) -> Self {
        Self { kind, in_dim, out_dim, seed }
    }

    /// Checks each layer's own dimensions and that consecutive layers agree.
    pub fn check_chain(specs: &[LayerSpec]) -> Result<()> {
        for s in specs {
            if s.kind.preserves_width() && s.in_dim != s.out_dim {
                return Err(shape_err("layer stack", format!("{} must keep width, got {}->{}", s.kind, s.in_dim, s.out_dim)));
            }
            if s.in_dim == 0 || s.out_dim == 0 {
                return Err(shape_err("layer stack", format!("{} has a zero dimension", s.kind)));
            }
        }
        for pair in specs.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(shape_err(
                    "layer stack",
                    format!("{} outputs {} but {} expects {}", pair[0].kind, pair[0].out_dim, pair[1].kind, pair[1].in_dim),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.w"), glorot_uniform(vec![in_dim, out_dim], in_dim, out_dim, rng), true);
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![out_dim]), true);
        Self { w, b, in_dim, out_dim }
    }

    pub fn attach(store: &ParamStore, name: &str) -> Option<Self> {
        let w = store.find(&format!("{name}.w"))?;
        let b = store.find(&format!("{name}.b"))?;
        let shape = store.get(w).shape();
        Some(Self { w, b, in_dim: shape[0], out_dim: shape[1] })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        g.dense(x, self.w, self.b)
    }
}

/// Sum of sparse-bag rows of a `[vocab, dim]` table plus a bias.
#[derive(Clone, Debug)]
pub struct EmbeddingSum {
    pub w: ParamId,
    pub b: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl EmbeddingSum {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.w"), glorot_uniform(vec![vocab, dim], vocab, dim, rng), true);
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![dim]), true);
        Self { w, b, vocab, dim }
    }

    pub fn attach(store: &ParamStore, name: &str) -> Option<Self> {
        let w = store.find(&format!("{name}.w"))?;
        let b = store.find(&format!("{name}.b"))?;
        let shape = store.get(w).shape();
        Some(Self { w, b, vocab: shape[0], dim: shape[1] })
    }

    pub fn forward(&self, g: &mut Graph<'_>, bags: &SparseBatch) -> Result<Var> {
        g.embedding_sum(bags, self.w, Some(self.b))
    }
}

/// Width-3 convolution over words with zero edge padding.
#[derive(Clone, Debug)]
pub struct Conv1dWords {
    pub w: ParamId,
    pub b: ParamId,
    pub vocab: usize,
    pub channels: usize,
}

impl Conv1dWords {
    pub const WINDOW: usize = 3;

    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, channels: usize, rng: &mut impl Rng) -> Self {
        let fan_in = Self::WINDOW * vocab;
        let w = store.add(
            format!("{name}.w"),
            glorot_uniform(vec![Self::WINDOW, vocab, channels], fan_in, channels, rng),
            true,
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![channels]), true);
        Self { w, b, vocab, channels }
    }

    pub fn attach(store: &ParamStore, name: &str) -> Option<Self> {
        let w = store.find(&format!("{name}.w"))?;
        let b = store.find(&format!("{name}.b"))?;
        let shape = store.get(w).shape();
        Some(Self { w, b, vocab: shape[1], channels: shape[2] })
    }

    pub fn forward(&self, g: &mut Graph<'_>, seqs: &SeqBatch) -> Result<Var> {
        g.conv_words(seqs, self.w, self.b)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub dim: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(vec![dim], 1.0), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![dim]), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(vec![dim]), false),
            running_var: store.add(format!("{name}.running_var"), Tensor::filled(vec![dim], 1.0), false),
            dim,
        }
    }

    pub fn attach(store: &ParamStore, name: &str) -> Option<Self> {
        let gamma = store.find(&format!("{name}.gamma"))?;
        Some(Self {
            gamma,
            beta: store.find(&format!("{name}.beta"))?,
            running_mean: store.find(&format!("{name}.running_mean"))?,
            running_var: store.find(&format!("{name}.running_var"))?,
            dim: store.get(gamma).len(),
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        g.batch_norm(x, self.gamma, self.beta, (self.running_mean, self.running_var), BN_MOMENTUM, BN_EPS)
    }
}

/// `x + W2 · relu(BN(W1 · x + b1)) + b2`.
///
/// With `W2 = 0` and `b2 = 0` the unit is the identity map.
#[derive(Clone, Debug)]
pub struct ResidualUnit {
    pub inner: Dense,
    pub norm: BatchNorm,
    pub outer: Dense,
}

impl ResidualUnit {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            inner: Dense::new(store, &format!("{name}.inner"), width, hidden, rng),
            norm: BatchNorm::new(store, &format!("{name}.bn"), hidden),
            outer: Dense::new(store, &format!("{name}.outer"), hidden, width, rng),
        }
    }

    pub fn attach(store: &ParamStore, name: &str) -> Option<Self> {
        Some(Self {
            inner: Dense::attach(store, &format!("{name}.inner"))?,
            norm: BatchNorm::attach(store, &format!("{name}.bn"))?,
            outer: Dense::attach(store, &format!("{name}.outer"))?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, x)?;
        let h = self.norm.forward(g, h)?;
        let h = g.relu(h)?;
        let h = self.outer.forward(g, h)?;
        g.add(x, h)
    }
}
