//! Gradient-boosted regression trees on the logistic loss.
//!
//! Each tree fits a second-order (Newton) approximation of the loss with
//! L2 leaf regularization `lambda`: a leaf holding gradient sum `G` and
//! hessian sum `H` takes value `-G / (H + lambda)`, and splits maximize
//! `G_L²/(H_L+λ) + G_R²/(H_R+λ) - G²/(H+λ)` over exact thresholds.

use std::fmt::Write as _;
use std::path::Path;

use fastmatch_tensor::graph::sigmoid;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORMAT_HEADER: &str = "fastmatch-gbdt 1";
const PRIOR_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_samples_leaf: usize,
    pub lambda: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self { n_trees: 200, max_depth: 4, shrinkage: 0.1, min_samples_leaf: 20, lambda: 1.0 }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::config("gbdt: max_depth and min_samples_leaf must be > 0"));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::config("gbdt: shrinkage must be in (0, 1]"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("gbdt: lambda must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode {
    /// `x[feature] <= threshold` goes left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf(f64),
}

/// Arena of nodes; the root is node 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GbdtModel {
    pub n_features: usize,
    /// Log-odds before any tree.
    pub base_score: f64,
    pub shrinkage: f64,
    pub trees: Vec<Tree>,
}

fn log_loss(raw: &[f64], y: &[f64]) -> f64 {
    raw.iter()
        .zip(y)
        .map(|(&f, &t)| {
            // log(1 + e^f) - t·f, computed stably
            let softplus = if f > 0.0 { f + (-f).exp().ln_1p() } else { f.exp().ln_1p() };
            softplus - t * f
        })
        .sum::<f64>()
        / raw.len() as f64
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    grad: Vec<f64>,
    hess: Vec<f64>,
    cfg: &'a GbdtConfig,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn leaf_value(&self, idx: &[usize]) -> f64 {
        let g: f64 = idx.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = idx.iter().map(|&i| self.hess[i]).sum();
        -g / (h + self.cfg.lambda)
    }

    /// Best `(gain, feature, threshold)` over all exact split points.
    fn best_split(&self, idx: &[usize]) -> Option<(f64, usize, f64)> {
        let lambda = self.cfg.lambda;
        let min_leaf = self.cfg.min_samples_leaf;
        let g_all: f64 = idx.iter().map(|&i| self.grad[i]).sum();
        let h_all: f64 = idx.iter().map(|&i| self.hess[i]).sum();
        let parent = g_all * g_all / (h_all + lambda);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = idx.to_vec();
        for f in 0..self.x.first().map_or(0, Vec::len) {
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let (mut gl, mut hl) = (0.0, 0.0);
            for k in 0..sorted.len() - 1 {
                let i = sorted[k];
                gl += self.grad[i];
                hl += self.hess[i];
                let (lo, hi) = (self.x[i][f], self.x[sorted[k + 1]][f]);
                if lo == hi || k + 1 < min_leaf || sorted.len() - k - 1 < min_leaf {
                    continue;
                }
                let (gr, hr) = (g_all - gl, h_all - hl);
                let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.0) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some((gain, f, threshold));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf(self.leaf_value(&idx)));
        if depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_samples_leaf {
            return id;
        }
        let Some((_, feature, threshold)) = self.best_split(&idx) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = TreeNode::Split { feature, threshold, left, right };
        id
    }
}

struct Cursor<'a> {
    lines: Vec<&'a str>,
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn error(&self, message: &str) -> Error {
        Error::Format { path: self.path.to_path_buf(), line: self.pos as u64, message: message.into() }
    }

    fn next_line(&mut self) -> Result<Vec<&'a str>> {
        let line = self.lines.get(self.pos).ok_or_else(|| self.error("unexpected end of file"))?;
        self.pos += 1;
        Ok(line.split_whitespace().collect())
    }

    fn expect(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let parts = self.next_line()?;
        if parts.first() != Some(&key) {
            return Err(self.error(&format!("expected {key}")));
        }
        Ok(parts)
    }

    fn value<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let parts = self.expect(key)?;
        parts.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| self.error(&format!("bad {key}")))
    }
}

/// Boosts on binary `labels` (0 or 1). A single-class input yields a
/// constant model predicting the (clamped) prior; see
/// [`GbdtModel::is_constant`].
pub fn gbdt_train(features: &[Vec<f64>], labels: &[u8], cfg: &GbdtConfig) -> Result<GbdtModel> {
    cfg.validate()?;
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Precondition(format!("{} feature rows for {} labels", features.len(), labels.len())));
    }
    let n_features = features[0].len();
    if features.iter().any(|r| r.len() != n_features || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Precondition("feature rows must be finite and equally long".into()));
    }
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l.min(1))).collect();
    let prior = (y.iter().sum::<f64>() / y.len() as f64).clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP);
    let base_score = (prior / (1.0 - prior)).ln();
    let mut model = GbdtModel { n_features, base_score, shrinkage: cfg.shrinkage, trees: Vec::new() };
    if y.iter().all(|&t| t == y[0]) {
        return Ok(model);
    }
    let mut raw = vec![base_score; y.len()];
    for _ in 0..cfg.n_trees {
        let p: Vec<f64> = raw.iter().map(|&f| sigmoid(f)).collect();
        let mut b = Builder {
            x: features,
            grad: p.iter().zip(&y).map(|(p, t)| p - t).collect(),
            hess: p.iter().map(|p| (p * (1.0 - p)).max(1e-16)).collect(),
            cfg,
            nodes: Vec::new(),
        };
        b.grow((0..y.len()).collect(), 0);
        let tree = Tree { nodes: b.nodes };
        for (f, x) in raw.iter_mut().zip(features) {
            *f += cfg.shrinkage * tree.predict(x);
        }
        model.trees.push(tree);
    }
    Ok(model)
}

impl GbdtModel {
    pub fn is_constant(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn raw_score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::Precondition(format!("expected {} features, got {}", self.n_features, x.len())));
        }
        Ok(self.base_score + self.shrinkage * self.trees.iter().map(|t| t.predict(x)).sum::<f64>())
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.raw_score(x).map(sigmoid)
    }

    /// Mean logistic loss over a labeled set.
    pub fn log_loss(&self, features: &[Vec<f64>], labels: &[u8]) -> Result<f64> {
        let raw = features.iter().map(|x| self.raw_score(x)).collect::<Result<Vec<_>>>()?;
        let y: Vec<f64> = labels.iter().map(|&l| f64::from(l.min(1))).collect();
        Ok(log_loss(&raw, &y))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_HEADER}");
        let _ = writeln!(s, "n_features {}", self.n_features);
        let _ = writeln!(s, "base_score {:?}", self.base_score);
        let _ = writeln!(s, "shrinkage {:?}", self.shrinkage);
        let _ = writeln!(s, "trees {}", self.trees.len());
        for (i, t) in self.trees.iter().enumerate() {
            let _ = writeln!(s, "tree {i} {}", t.nodes.len());
            for n in &t.nodes {
                let _ = match *n {
                    TreeNode::Split { feature, threshold, left, right } => {
                        writeln!(s, "split {feature} {threshold:?} {left} {right}")
                    }
                    TreeNode::Leaf(v) => writeln!(s, "leaf {v:?}"),
                };
            }
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut cur = Cursor { lines: text.lines().collect(), pos: 0, path };
        let header = cur.expect("fastmatch-gbdt")?;
        if header.get(1) != Some(&"1") {
            return Err(cur.error("unsupported model version"));
        }
        let n_features: usize = cur.value("n_features")?;
        let base_score: f64 = cur.value("base_score")?;
        let shrinkage: f64 = cur.value("shrinkage")?;
        let n_trees: usize = cur.value("trees")?;
        let mut trees = Vec::with_capacity(n_trees);
        for _ in 0..n_trees {
            let p = cur.expect("tree")?;
            let n_nodes: usize = p.get(2).and_then(|v| v.parse().ok()).ok_or_else(|| cur.error("bad node count"))?;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let p = cur.next_line()?;
                let num = |i: usize| p.get(i).and_then(|v| v.parse::<f64>().ok());
                let idx = |i: usize| p.get(i).and_then(|v| v.parse::<usize>().ok());
                let node = match p.first().copied() {
                    Some("leaf") => num(1).map(TreeNode::Leaf),
                    Some("split") => match (idx(1), num(2), idx(3), idx(4)) {
                        (Some(feature), Some(threshold), Some(left), Some(right))
                            if feature < n_features && left < n_nodes && right < n_nodes =>
                        {
                            Some(TreeNode::Split { feature, threshold, left, right })
                        }
                        _ => None,
                    },
                    _ => None,
                };
                nodes.push(node.ok_or_else(|| cur.error("bad node"))?);
            }
            trees.push(Tree { nodes });
        }
        Ok(Self { n_features, base_score, shrinkage, trees })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}
