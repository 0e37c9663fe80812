//! Annotator training (multi-task Deep Crossing or boosted trees) and
//! dataset scoring.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use fastmatch_tensor::{Checkpoint, Graph, Mode};
use serde::{Deserialize, Serialize};

use crate::corpus::io::{csv_io, finish, pair_fields, tsv_writer, TsvRows, PAIR_COLUMNS};
use crate::corpus::{AdListing, GradedLabel, LabeledSample, UnlabeledPair};
use crate::dataset::{main_label, EncodedSet};
use crate::error::{Error, Result};
use crate::eval::roc_auc;
use crate::gbdt::{gbdt_train, GbdtConfig, GbdtModel};
use crate::models::{DeepCrossing, DeepCrossingConfig, PairInput, Task, TaskSet};
use crate::train::{fit, FitReport, TrainConfig};

/// 0 iff `value` lies in the task's negative prefix.
pub fn binarize(value: u8, task: &Task) -> Result<u8> {
    task.binarize_grade(value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotatorKind {
    Dc,
    Gbdt,
}

impl FromStr for AnnotatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dc" => Ok(Self::Dc),
            "gbdt" | "dt" => Ok(Self::Gbdt),
            other => Err(Error::config(format!("unknown annotator {other:?} (dc, gbdt)"))),
        }
    }
}

impl fmt::Display for AnnotatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dc => "dc",
            Self::Gbdt => "gbdt",
        })
    }
}

/// One annotator variant, written `dc:<task set>`, `dc` (configured task
/// set) or `gbdt`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AnnotatorSpec {
    pub kind: AnnotatorKind,
    pub tasks: Option<String>,
}

impl AnnotatorSpec {
    /// Task set actually used, given the configured default.
    pub fn task_set<'a>(&'a self, default: &'a str) -> Option<&'a str> {
        match self.kind {
            AnnotatorKind::Dc => Some(self.tasks.as_deref().unwrap_or(default)),
            AnnotatorKind::Gbdt => None,
        }
    }

    /// Canonical name with the task set resolved.
    pub fn resolved(&self, default: &str) -> String {
        match self.task_set(default) {
            Some(t) => format!("{}:{t}", self.kind),
            None => self.kind.to_string(),
        }
    }

    /// `+`-separated ensemble, e.g. `dc:joint+gbdt`.
    pub fn parse_ensemble(s: &str) -> Result<Vec<Self>> {
        let specs = s.split('+').map(str::parse).collect::<Result<Vec<Self>>>()?;
        Ok(specs)
    }
}

impl FromStr for AnnotatorSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (kind, tasks) = match s.split_once(':') {
            Some((k, t)) => (k.parse::<AnnotatorKind>()?, Some(t.to_string())),
            None => (s.parse()?, None),
        };
        if let Some(t) = &tasks {
            if kind != AnnotatorKind::Dc {
                return Err(Error::config(format!("annotator {s:?}: only dc takes a task set")));
            }
            TaskSet::by_name(t)?;
        }
        Ok(Self { kind, tasks })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotatorConfig {
    /// `joint`, `ac-only` or `single`.
    pub tasks: String,
    pub dc: DeepCrossingConfig,
    pub train: TrainConfig,
    pub gbdt: GbdtConfig,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        Self {
            tasks: "joint".into(),
            dc: DeepCrossingConfig::default(),
            train: TrainConfig { epochs: 20, batch_size: 64, learning_rate: 0.02, momentum: 0.9, patience: 3, min_steps: 600 },
            gbdt: GbdtConfig::default(),
        }
    }
}

impl AnnotatorConfig {
    pub fn validate(&self) -> Result<()> {
        TaskSet::by_name(&self.tasks)?;
        self.train.validate("annotator.train")?;
        self.gbdt.validate()
    }
}

/// A frozen annotator.
#[derive(Clone, Debug)]
pub enum Annotator {
    Dc(Box<DeepCrossing>),
    Gbdt(GbdtModel),
}

impl Annotator {
    pub fn kind(&self) -> AnnotatorKind {
        match self {
            Self::Dc(_) => AnnotatorKind::Dc,
            Self::Gbdt(_) => AnnotatorKind::Gbdt,
        }
    }

    /// Composite relevance score per row.
    pub fn score(&self, set: &EncodedSet) -> Result<Vec<f64>> {
        match self {
            Self::Dc(m) => m.score(&set.pairs),
            Self::Gbdt(m) => set.lexical.iter().map(|x| m.score(x)).collect(),
        }
    }

    pub fn save(&self, path: &Path, vocab_path: &str, config_hash: &str) -> Result<()> {
        match self {
            Self::Dc(m) => Ok(m.to_checkpoint(vocab_path, config_hash).save(path)?),
            Self::Gbdt(m) => m.save(path),
        }
    }

    pub fn load(path: &Path, kind: AnnotatorKind) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        match kind {
            AnnotatorKind::Dc => Ok(Self::Dc(Box::new(DeepCrossing::from_checkpoint(&Checkpoint::load(path)?)?))),
            AnnotatorKind::Gbdt => Ok(Self::Gbdt(GbdtModel::load(path)?)),
        }
    }
}

fn require_both_classes(set: &EncodedSet) -> Result<Vec<u8>> {
    let y = set.binary_labels().ok_or_else(|| Error::Precondition("annotators need a labeled set".into()))?;
    if y.is_empty() || y.iter().all(|&v| v == y[0]) {
        return Err(Error::Precondition("labeled set must contain both main-task classes".into()));
    }
    Ok(y)
}

/// Main-task ROC AUC of an annotator's composite score.
pub fn validation_auc(annotator: &Annotator, val: &EncodedSet) -> Result<f64> {
    let flags = val.binary_flags().ok_or_else(|| Error::Precondition("validation set is unlabeled".into()))?;
    roc_auc(&annotator.score(val)?, &flags)
}

fn validation_auc_dc(m: &DeepCrossing, val: &EncodedSet) -> Result<f64> {
    let flags = val.binary_flags().ok_or_else(|| Error::Precondition("validation set is unlabeled".into()))?;
    roc_auc(&m.score(&val.pairs)?, &flags)
}

/// Vocabulary width implied by the encoded inputs; models size their
/// trigram tables from the featurizer, so this is only a fallback bound.
fn vocab_of(set: &EncodedSet) -> usize {
    set.pairs
        .iter()
        .flat_map(|p| p.bags.iter().filter_map(|b| b.max_index()))
        .max()
        .map_or(1, |m| m as usize + 1)
}

/// Boosted trees on the main-task label.
pub fn train_gbdt(train: &EncodedSet, cfg: &GbdtConfig) -> Result<GbdtModel> {
    let y = require_both_classes(train)?;
    gbdt_train(&train.lexical, &y, cfg)
}

/// Trains one annotator. `vocab_size` sizes the Deep Crossing tables.
pub fn train_annotator(
    kind: AnnotatorKind,
    vocab_size: usize,
    train: &EncodedSet,
    val: &EncodedSet,
    cfg: &AnnotatorConfig,
    seed: u64,
) -> Result<(Annotator, Option<FitReport>)> {
    match kind {
        AnnotatorKind::Dc => {
            let tasks = TaskSet::by_name(&cfg.tasks)?;
            let (m, rep) = train_dc(vocab_size, train, val, tasks, &cfg.dc, &cfg.train, seed)?;
            Ok((Annotator::Dc(Box::new(m)), Some(rep)))
        }
        AnnotatorKind::Gbdt => Ok((Annotator::Gbdt(train_gbdt(train, &cfg.gbdt)?), None)),
    }
}

/// Multi-task Deep Crossing with early stopping on validation main-task
/// ROC AUC.
pub fn train_dc(
    vocab_size: usize,
    train: &EncodedSet,
    val: &EncodedSet,
    tasks: TaskSet,
    dc: &DeepCrossingConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(DeepCrossing, FitReport)> {
    if vocab_of(train) > vocab_size {
        return Err(Error::Precondition("inputs exceed the vocabulary".into()));
    }
    train_dc_with(DeepCrossing::new(vocab_size, *dc, tasks, seed), train, val, cfg, seed)
}

fn train_dc_with(
    mut model: DeepCrossing,
    train: &EncodedSet,
    val: &EncodedSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(DeepCrossing, FitReport)> {
    require_both_classes(train)?;
    let labels = train.labels.as_ref().expect("checked above");
    let targets = model.tasks.targets(labels.iter().copied());
    let task_w = model.tasks.weights();
    let n_tasks = model.tasks.len();
    let report = fit(
        &mut model,
        train.len(),
        cfg,
        seed,
        |m, idx| {
            let batch: Vec<&PairInput> = idx.iter().map(|&i| &train.pairs[i]).collect();
            let t: Vec<f64> = idx.iter().flat_map(|&i| targets[i * n_tasks..(i + 1) * n_tasks].iter().copied()).collect();
            let DeepCrossing { net, store, .. } = m;
            let mut g = Graph::new(store, Mode::Train);
            let p = net.forward(&mut g, &batch)?;
            let loss = g.cross_entropy(p, &t, &vec![1.0; idx.len()], &task_w)?;
            let value = g.value(loss).data()[0];
            g.backward(loss)?;
            Ok(Some(value))
        },
        |m| validation_auc_dc(m, val),
    )?;
    Ok((model, report))
}

/// Arithmetic mean of the annotators' scores, row by row.
pub fn score_dataset(annotators: &[&Annotator], set: &EncodedSet) -> Result<Vec<f64>> {
    if annotators.is_empty() {
        return Err(Error::Precondition("no annotators to score with".into()));
    }
    let mut sum = vec![0.0; set.len()];
    for a in annotators {
        for (acc, s) in sum.iter_mut().zip(a.score(set)?) {
            *acc += s;
        }
    }
    let k = annotators.len() as f64;
    Ok(sum.into_iter().map(|v| v / k).collect())
}

/// A sample with its annotation score; labeled samples also carry ỹ.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub query: String,
    pub listing: AdListing,
    pub s: f64,
    pub label: Option<GradedLabel>,
    pub y_tilde: Option<u8>,
}

impl ScoredSample {
    pub fn from_labeled(rows: &[LabeledSample], scores: &[f64]) -> Vec<Self> {
        rows.iter()
            .zip(scores)
            .map(|(r, &s)| Self {
                query: r.query.clone(),
                listing: r.listing.clone(),
                s,
                label: Some(r.label),
                y_tilde: Some(main_label(r.label)),
            })
            .collect()
    }

    pub fn from_unlabeled(rows: &[UnlabeledPair], scores: &[f64]) -> Vec<Self> {
        rows.iter()
            .zip(scores)
            .map(|(r, &s)| Self { query: r.query.clone(), listing: r.listing.clone(), s, label: None, y_tilde: None })
            .collect()
    }

    pub fn as_labeled(&self) -> Option<LabeledSample> {
        Some(LabeledSample { query: self.query.clone(), listing: self.listing.clone(), label: self.label? })
    }

    pub fn as_unlabeled(&self) -> UnlabeledPair {
        UnlabeledPair { query: self.query.clone(), listing: self.listing.clone(), clicked: None }
    }
}

fn scored_columns(labeled: bool) -> Vec<&'static str> {
    let mut cols = PAIR_COLUMNS.to_vec();
    if labeled {
        cols.extend(["ac", "lp", "s", "y_tilde"]);
    } else {
        cols.push("s");
    }
    cols
}

/// Writes the dataset columns followed by `s` (and `y_tilde` for labeled
/// rows). Scores are written in shortest round-trip form.
pub fn save_scored(path: &Path, rows: &[ScoredSample]) -> Result<()> {
    let labeled = rows.first().is_some_and(|r| r.label.is_some());
    if rows.iter().any(|r| r.label.is_some() != labeled) {
        return Err(Error::Precondition("mixed labeled and unlabeled scored rows".into()));
    }
    let mut w = tsv_writer(path, &scored_columns(labeled))?;
    for r in rows {
        let [q, k, a, l] = pair_fields(&r.query, &r.listing)?;
        let s = format!("{:?}", r.s);
        let res = match (r.label, r.y_tilde) {
            (Some(lab), Some(yt)) => {
                w.write_record([q, k, a, l, &lab.ac().to_string(), &lab.lp().to_string(), &s, &yt.to_string()])
            }
            _ => w.write_record([q, k, a, l, &s]),
        };
        res.map_err(|e| csv_io(path, e))?;
    }
    finish(path, w)
}

pub fn load_scored(path: &Path, labeled: bool) -> Result<Vec<ScoredSample>> {
    let Some(mut rows) = TsvRows::open(path, &scored_columns(labeled))? else {
        return Ok(Vec::new());
    };
    let mut out = Vec::new();
    while let Some((line, rec)) = rows.next_row()? {
        let (query, listing) = rows.pair(line, &rec)?;
        let s_col = if labeled { 6 } else { 4 };
        let s: f64 = rec[s_col].parse().map_err(|_| rows.error(line, "s: not a number"))?;
        if !(0.0..=1.0).contains(&s) {
            return Err(rows.error(line, format!("s = {s} outside [0, 1]")));
        }
        let (label, y_tilde) = if labeled {
            let label = GradedLabel::new(rows.int(line, &rec, 4, "ac")?, rows.int(line, &rec, 5, "lp")?)
                .map_err(|e| rows.error(line, e.to_string()))?;
            let yt: u8 = rows.int(line, &rec, 7, "y_tilde")?;
            if yt != main_label(label) {
                return Err(rows.error(line, "y_tilde disagrees with the graded label"));
            }
            (Some(label), Some(yt))
        } else {
            (None, None)
        };
        out.push(ScoredSample { query, listing, s, label, y_tilde });
    }
    Ok(out)
}
