//! Binary tasks carved out of graded labels, and their loss weights.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{GradedLabel, AC_MAX, LP_MAX};
use crate::error::{Error, Result};

const WEIGHT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSet {
    Ac,
    Lp,
}

impl LabelSet {
    pub fn max_grade(self) -> u8 {
        match self {
            LabelSet::Ac => AC_MAX,
            LabelSet::Lp => LP_MAX,
        }
    }

    pub fn grade(self, label: GradedLabel) -> u8 {
        match self {
            LabelSet::Ac => label.ac(),
            LabelSet::Lp => label.lp(),
        }
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSet::Ac => "ac",
            LabelSet::Lp => "lp",
        })
    }
}

/// A binary task: grades `0..=max_negative` of `label_set` are negatives.
/// `max_negative == 0` is the main task of that label set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub label_set: LabelSet,
    pub max_negative: u8,
    pub weight: f64,
}

impl Task {
    pub fn is_main(&self) -> bool {
        self.max_negative == 0
    }

    /// 0 iff the grade falls in the negative prefix.
    pub fn binarize_grade(&self, grade: u8) -> Result<u8> {
        if grade > self.label_set.max_grade() {
            return Err(Error::Precondition(format!("{} grade {grade} out of range", self.label_set)));
        }
        Ok(u8::from(grade > self.max_negative))
    }

    pub fn binarize(&self, label: GradedLabel) -> u8 {
        u8::from(self.label_set.grade(label) > self.max_negative)
    }
}

/// Ordered task list; head `i` of a multi-task model predicts task `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Task>", into = "Vec<Task>")]
pub struct TaskSet {
    tasks: Vec<Task>,
}

impl TaskSet {
    /// Checks: at most one main task per label set and at least one overall,
    /// negative sets are proper prefixes, weights are non-negative and sum
    /// to 1. With auxiliary tasks present the mains share 0.5 and the
    /// auxiliaries split the rest evenly.
    pub fn new(tasks: Vec<Task>) -> Result<Self> {
        let err = |m: String| Err(Error::config(format!("task set: {m}")));
        if tasks.is_empty() {
            return err("no tasks".into());
        }
        let mains: Vec<&Task> = tasks.iter().filter(|t| t.is_main()).collect();
        for set in [LabelSet::Ac, LabelSet::Lp] {
            let n = mains.iter().filter(|t| t.label_set == set).count();
            let used = tasks.iter().any(|t| t.label_set == set);
            if used && n != 1 {
                return err(format!("label set {set} needs exactly one main task, found {n}"));
            }
        }
        for (i, t) in tasks.iter().enumerate() {
            if t.max_negative >= t.label_set.max_grade() {
                return err(format!("task {i}: negative set covers every {} grade", t.label_set));
            }
            if !(t.weight.is_finite() && t.weight >= 0.0) {
                return err(format!("task {i}: weight {} is not a non-negative number", t.weight));
            }
            if tasks[..i].iter().any(|u| u.label_set == t.label_set && u.max_negative == t.max_negative) {
                return err(format!("task {i} duplicated"));
            }
        }
        let total: f64 = tasks.iter().map(|t| t.weight).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return err(format!("weights sum to {total}, expected 1"));
        }
        let aux: Vec<f64> = tasks.iter().filter(|t| !t.is_main()).map(|t| t.weight).collect();
        if let Some(&first) = aux.first() {
            let main_total: f64 = mains.iter().map(|t| t.weight).sum();
            if (main_total - 0.5).abs() > WEIGHT_TOL {
                return err(format!("main tasks weigh {main_total}, expected 0.5"));
            }
            if aux.iter().any(|w| (w - first).abs() > WEIGHT_TOL) {
                return err("auxiliary weights differ".into());
            }
        }
        Ok(Self { tasks })
    }

    fn with_aux(mains: &[LabelSet]) -> Vec<Task> {
        let main_w = 0.5 / mains.len() as f64;
        let mut tasks: Vec<Task> = mains.iter().map(|&s| Task { label_set: s, max_negative: 0, weight: main_w }).collect();
        for &s in mains {
            for k in 1..s.max_grade() {
                tasks.push(Task { label_set: s, max_negative: k, weight: 0.0 });
            }
        }
        let n_aux = tasks.len() - mains.len();
        for t in tasks.iter_mut().filter(|t| !t.is_main()) {
            t.weight = 0.5 / n_aux as f64;
        }
        tasks
    }

    /// AC and LP mains (0.25 each) plus all seven auxiliary tasks.
    pub fn joint() -> Self {
        Self::new(Self::with_aux(&[LabelSet::Ac, LabelSet::Lp])).expect("valid by construction")
    }

    /// AC main (0.5) plus the three AC auxiliary tasks.
    pub fn ac_only() -> Self {
        Self::new(Self::with_aux(&[LabelSet::Ac])).expect("valid by construction")
    }

    /// The AC main task alone.
    pub fn single() -> Self {
        Self::new(vec![Task { label_set: LabelSet::Ac, max_negative: 0, weight: 1.0 }]).expect("valid by construction")
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "joint" => Ok(Self::joint()),
            "ac-only" => Ok(Self::ac_only()),
            "single" => Ok(Self::single()),
            other => Err(Error::config(format!("unknown task set {other:?} (joint, ac-only, single)"))),
        }
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.tasks.iter().map(|t| t.weight).collect()
    }

    /// Weighted sum of per-task probabilities.
    pub fn composite(&self, probs: &[f64]) -> f64 {
        self.tasks.iter().zip(probs).map(|(t, p)| t.weight * p).sum()
    }

    /// Row-major `[n, tasks]` binary targets.
    pub fn targets(&self, labels: impl IntoIterator<Item = GradedLabel>) -> Vec<f64> {
        labels.into_iter().flat_map(|l| self.tasks.iter().map(move |t| f64::from(t.binarize(l)))).collect()
    }
}

impl TryFrom<Vec<Task>> for TaskSet {
    type Error = Error;
    fn try_from(tasks: Vec<Task>) -> Result<Self> {
        Self::new(tasks)
    }
}

impl From<TaskSet> for Vec<Task> {
    fn from(t: TaskSet) -> Self {
        t.tasks
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(ac: u8, lp: u8) -> GradedLabel {
        GradedLabel::new(ac, lp).unwrap()
    }

    #[test]
    fn joint_layout() {
        let t = TaskSet::joint();
        assert_eq!(t.len(), 9);
        let mains: f64 = t.tasks().iter().filter(|t| t.is_main()).map(|t| t.weight).sum();
        assert!((mains - 0.5).abs() < 1e-12);
        assert!(t.tasks().iter().filter(|t| !t.is_main()).all(|t| (t.weight - 0.5 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn binarization_cases() {
        let main = Task { label_set: LabelSet::Ac, max_negative: 0, weight: 1.0 };
        assert_eq!(main.binarize_grade(0).unwrap(), 0);
        let aux1 = Task { max_negative: 1, ..main };
        assert_eq!(aux1.binarize_grade(1).unwrap(), 0);
        let lp_aux4 = Task { label_set: LabelSet::Lp, max_negative: 4, weight: 1.0 };
        assert_eq!(lp_aux4.binarize_grade(5).unwrap(), 1);
        assert!(main.binarize_grade(5).is_err());
    }

    #[test]
    fn aux_labels_are_nested() {
        let t = TaskSet::ac_only();
        for ac in 0..=AC_MAX {
            let ys = t.targets([label(ac, 0)]);
            // tasks ordered main, aux1, aux2, aux3: non-increasing
            assert!(ys.windows(2).all(|w| w[0] >= w[1]), "{ys:?}");
        }
    }

    #[test]
    fn composite_arithmetic() {
        let t = TaskSet::ac_only();
        assert!((t.composite(&[0.9, 0.3, 0.3, 0.3]) - 0.6).abs() < 1e-12);
        assert!((TaskSet::joint().composite(&[0.6; 9]) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn invalid_sets_rejected() {
        let main = Task { label_set: LabelSet::Ac, max_negative: 0, weight: 2.0 };
        assert!(TaskSet::new(vec![main]).is_err());
        let doubled: Vec<Task> = TaskSet::ac_only().tasks().iter().map(|t| Task { weight: 2.0 * t.weight, ..*t }).collect();
        assert!(TaskSet::new(doubled).is_err());
        let no_main = vec![Task { label_set: LabelSet::Ac, max_negative: 1, weight: 1.0 }];
        assert!(TaskSet::new(no_main).is_err());
        assert!(TaskSet::by_name("nope").is_err());
    }

    #[test]
    fn serde_round_trip_validates() {
        let json = serde_json::to_string(&TaskSet::joint()).unwrap();
        assert_eq!(serde_json::from_str::<TaskSet>(&json).unwrap(), TaskSet::joint());
        assert!(serde_json::from_str::<TaskSet>(r#"[{"label_set":"ac","max_negative":0,"weight":0.5}]"#).is_err());
    }
}
