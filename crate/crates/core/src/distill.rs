//! Student training on annotator scores and label-aware fine-tuning.

use std::fmt;
use std::str::FromStr;

use fastmatch_tensor::{Graph, Mode, SeqBatch, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::EncodedSet;
use crate::error::{Error, Result};
use crate::eval::roc_auc;
use crate::models::{Cdssm, PairInput};
use crate::seed;
use crate::train::{fit, FitReport, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetFn {
    /// Hard target: 1 if s ≥ 0.5 else 0.
    F1,
    /// Soft target: y = s.
    F2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightFn {
    /// 0 strictly inside (t1, t2), 1 elsewhere.
    G1,
    /// |2s − 1|^p.
    G2,
    /// Constant 1.
    G3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    pub target: TargetFn,
    pub weight: WeightFn,
    pub t1: f64,
    pub t2: f64,
    pub p: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self { target: TargetFn::F2, weight: WeightFn::G3, t1: 0.4, t2: 0.6, p: 2.0 }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.t1 && self.t1 < self.t2 && self.t2 <= 1.0) {
            return Err(Error::config(format!("mapping: need 0 <= t1 < t2 <= 1, got t1={} t2={}", self.t1, self.t2)));
        }
        if !(self.p.is_finite() && self.p > 0.0) {
            return Err(Error::config(format!("mapping: p must be > 0, got {}", self.p)));
        }
        Ok(())
    }
}

/// Parses `f2:g3` style names, keeping default thresholds and exponent.
impl FromStr for MappingConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (f, g) = s.split_once(':').ok_or_else(|| Error::config(format!("mapping {s:?} is not of the form f2:g3")))?;
        let target = match f {
            "f1" => TargetFn::F1,
            "f2" => TargetFn::F2,
            _ => return Err(Error::config(format!("unknown target function {f:?}"))),
        };
        let weight = match g {
            "g1" => WeightFn::G1,
            "g2" => WeightFn::G2,
            "g3" => WeightFn::G3,
            _ => return Err(Error::config(format!("unknown weight function {g:?}"))),
        };
        Ok(Self { target, weight, ..Self::default() })
    }
}

impl fmt::Display for MappingConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = match self.target {
            TargetFn::F1 => "f1",
            TargetFn::F2 => "f2",
        };
        let w = match self.weight {
            WeightFn::G1 => "g1",
            WeightFn::G2 => "g2",
            WeightFn::G3 => "g3",
        };
        write!(f, "{t}:{w}")
    }
}

fn check_score(s: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&s) {
        Ok(s)
    } else {
        Err(Error::Precondition(format!("annotation score {s} outside [0, 1]")))
    }
}

/// Training target y for annotation score `s`. The hard map sends
/// `[0.5, 1]` to 1 and `[0, 0.5)` to 0.
pub fn map_target(s: f64, cfg: &MappingConfig) -> Result<f64> {
    let s = check_score(s)?;
    Ok(match cfg.target {
        TargetFn::F1 => f64::from(u8::from(s >= 0.5)),
        TargetFn::F2 => s,
    })
}

/// Sample weight ω for annotation score `s`.
pub fn map_weight(s: f64, cfg: &MappingConfig) -> Result<f64> {
    let s = check_score(s)?;
    Ok(match cfg.weight {
        WeightFn::G1 => f64::from(u8::from(!(cfg.t1 < s && s < cfg.t2))),
        WeightFn::G2 => (2.0 * s - 1.0).abs().powf(cfg.p),
        WeightFn::G3 => 1.0,
    })
}

/// δ_θ(x): θ for x ≤ 0, 1 otherwise.
pub fn delta(theta: f64, x: f64) -> f64 {
    if x <= 0.0 {
        theta
    } else {
        1.0
    }
}

/// Label-aware weight `δ^ỹ · (θ + 1 − δ)^(1−ỹ)` with `δ = δ_θ(y − ŷ)`.
/// Overshooting the target is discounted to θ for positives, undershooting
/// for negatives; every other case keeps weight 1.
pub fn label_aware_weight(y: f64, y_hat: f64, y_tilde: u8, theta: f64) -> f64 {
    let x = y - y_hat;
    // θ + 1 − δ swaps θ and 1; spelled out so the weight is exactly one of them
    let discounted = if y_tilde == 1 { x <= 0.0 } else { x > 0.0 };
    if discounted {
        theta
    } else {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinetuneMode {
    /// Cross-entropy on ỹ.
    Hard,
    /// Unweighted MSE on y.
    Soft,
    /// MSE on y with label-aware weights.
    LabelAware,
}

impl FromStr for FinetuneMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" | "hard-baseline" => Ok(Self::Hard),
            "soft" | "soft-baseline" => Ok(Self::Soft),
            "label-aware" => Ok(Self::LabelAware),
            other => Err(Error::config(format!("unknown fine-tune mode {other:?} (hard, soft, label-aware)"))),
        }
    }
}

impl fmt::Display for FinetuneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hard => "hard",
            Self::Soft => "soft",
            Self::LabelAware => "label-aware",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub mode: FinetuneMode,
    pub theta: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { mode: FinetuneMode::LabelAware, theta: 0.5 }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::config(format!("finetune: theta {} outside [0, 1]", self.theta)));
        }
        Ok(())
    }
}

/// Distillation loss on a batch of predictions `pred` (`n x 1`) for
/// annotation scores `s`. Hard targets use weighted cross-entropy, soft
/// targets weighted MSE. Returns `None` when every weight is zero.
pub fn student_loss(g: &mut Graph<'_>, pred: Var, s: &[f64], cfg: &MappingConfig) -> Result<Option<Var>> {
    let y = s.iter().map(|&v| map_target(v, cfg)).collect::<Result<Vec<_>>>()?;
    let w = s.iter().map(|&v| map_weight(v, cfg)).collect::<Result<Vec<_>>>()?;
    if w.iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    let loss = match cfg.target {
        TargetFn::F1 => g.cross_entropy(pred, &y, &w, &[1.0])?,
        TargetFn::F2 => g.weighted_mse(pred, &y, &w)?,
    };
    Ok(Some(loss))
}

/// Fine-tuning loss for targets `y` and binary labels `y_tilde`. The
/// label-aware weights are read off the current predictions and held
/// constant for backpropagation.
pub fn finetune_loss(g: &mut Graph<'_>, pred: Var, y: &[f64], y_tilde: &[u8], cfg: &FinetuneConfig) -> Result<Var> {
    let n = y.len();
    if y_tilde.len() != n {
        return Err(Error::Precondition("every fine-tuning sample needs a binary label".into()));
    }
    let loss = match cfg.mode {
        FinetuneMode::Hard => {
            let t: Vec<f64> = y_tilde.iter().map(|&v| f64::from(v)).collect();
            g.cross_entropy(pred, &t, &vec![1.0; n], &[1.0])?
        }
        FinetuneMode::Soft => g.weighted_mse(pred, y, &vec![1.0; n])?,
        FinetuneMode::LabelAware => {
            let y_hat = g.value(pred).data();
            let w: Vec<f64> =
                (0..n).map(|i| label_aware_weight(y[i], y_hat[i], y_tilde[i], cfg.theta)).collect();
            g.weighted_mse(pred, y, &w)?
        }
    };
    Ok(loss)
}

/// Main-task ROC AUC of a student on a labeled set.
pub fn student_auc(model: &Cdssm, set: &EncodedSet) -> Result<f64> {
    let flags = set.binary_flags().ok_or_else(|| Error::Precondition("evaluation set is unlabeled".into()))?;
    roc_auc(&model.score(&set.pairs)?, &flags)
}

fn batch_of<'a>(set: &'a EncodedSet, idx: &[usize]) -> Vec<&'a PairInput> {
    idx.iter().map(|&i| &set.pairs[i]).collect()
}

/// Trains `model` on annotation scores `s` of `data`, early-stopping on
/// ROC AUC over the labeled `val` set.
pub fn train_student(
    model: &mut Cdssm,
    data: &EncodedSet,
    s: &[f64],
    val: &EncodedSet,
    mapping: &MappingConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FitReport> {
    mapping.validate()?;
    if s.len() != data.len() {
        return Err(Error::Precondition(format!("{} scores for {} samples", s.len(), data.len())));
    }
    let weights = s.iter().map(|&v| map_weight(v, mapping)).collect::<Result<Vec<_>>>()?;
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::config(format!("mapping {mapping} gives every sample zero weight: no effective training signal")));
    }
    fit(
        model,
        data.len(),
        cfg,
        seed,
        |m, idx| {
            let batch = batch_of(data, idx);
            let sb: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
            let Cdssm { net, store, .. } = m;
            let mut g = Graph::new(store, Mode::Train);
            let pred = net.score_pairs(&mut g, &batch)?;
            let Some(loss) = student_loss(&mut g, pred, &sb, mapping)? else {
                return Ok(None);
            };
            let value = g.value(loss).data()[0];
            g.backward(loss)?;
            Ok(Some(value))
        },
        |m| student_auc(m, val),
    )
}

/// Fine-tunes on a labeled set with targets `y` (mapped annotation scores;
/// ignored in hard mode).
pub fn finetune(
    model: &mut Cdssm,
    data: &EncodedSet,
    y: &[f64],
    val: &EncodedSet,
    ft: &FinetuneConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FitReport> {
    ft.validate()?;
    let y_tilde = data.binary_labels().ok_or_else(|| Error::Precondition("fine-tuning needs binary labels".into()))?;
    if y.len() != data.len() {
        return Err(Error::Precondition(format!("{} targets for {} samples", y.len(), data.len())));
    }
    fit(
        model,
        data.len(),
        cfg,
        seed,
        |m, idx| {
            let batch = batch_of(data, idx);
            let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let tb: Vec<u8> = idx.iter().map(|&i| y_tilde[i]).collect();
            let Cdssm { net, store, .. } = m;
            let mut g = Graph::new(store, Mode::Train);
            let pred = net.score_pairs(&mut g, &batch)?;
            let loss = finetune_loss(&mut g, pred, &yb, &tb, ft)?;
            let value = g.value(loss).data()[0];
            g.backward(loss)?;
            Ok(Some(value))
        },
        |m| student_auc(m, val),
    )
}

/// Click baseline: clicked pairs as positives, and for each batch every
/// query paired with another row's ad (a random cyclic shift) as negatives.
pub fn train_click_baseline(model: &mut Cdssm, clicked: &EncodedSet, val: &EncodedSet, cfg: &TrainConfig, seed: u64) -> Result<FitReport> {
    let clicks = clicked.clicks.clone().unwrap_or_else(|| vec![true; clicked.len()]);
    let mut rng = seed::rng(seed, "negatives");
    fit(
        model,
        clicked.len(),
        cfg,
        seed,
        |m, idx| {
            let b = idx.len();
            if b < 2 {
                return Ok(None);
            }
            let shift = rng.gen_range(1..b);
            let mut queries: SeqBatch = Vec::with_capacity(2 * b);
            let mut ads: SeqBatch = Vec::with_capacity(2 * b);
            let mut targets = Vec::with_capacity(2 * b);
            for &i in idx {
                queries.push(clicked.pairs[i].query.clone());
                ads.push(clicked.pairs[i].ad.clone());
                targets.push(f64::from(u8::from(clicks[i])));
            }
            for (k, &i) in idx.iter().enumerate() {
                queries.push(clicked.pairs[i].query.clone());
                ads.push(clicked.pairs[idx[(k + shift) % b]].ad.clone());
                targets.push(0.0);
            }
            let Cdssm { net, store, .. } = m;
            let mut g = Graph::new(store, Mode::Train);
            let pred = net.score(&mut g, &queries, &ads)?;
            let loss = g.cross_entropy(pred, &targets, &vec![1.0; 2 * b], &[1.0])?;
            let value = g.value(loss).data()[0];
            g.backward(loss)?;
            Ok(Some(value))
        },
        |m| student_auc(m, val),
    )
}
