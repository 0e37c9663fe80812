//! Datasets converted once into every representation the models consume.

use crate::corpus::{GradedLabel, LabeledSample, QueryListing, UnlabeledPair};
use crate::featurize::lexical_features;
use crate::models::{Featurizer, LabelSet, PairInput, Task};

/// Main-task binarization of the AC grade: the binary label ỹ.
pub fn main_label(label: GradedLabel) -> u8 {
    Task { label_set: LabelSet::Ac, max_negative: 0, weight: 1.0 }.binarize(label)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSet {
    pub pairs: Vec<PairInput>,
    pub lexical: Vec<Vec<f64>>,
    /// Graded labels when the source set is labeled.
    pub labels: Option<Vec<GradedLabel>>,
    /// Click flags when the source set is a click log.
    pub clicks: Option<Vec<bool>>,
}

impl EncodedSet {
    fn encode<T: QueryListing>(rows: &[T], f: &Featurizer) -> (Vec<PairInput>, Vec<Vec<f64>>) {
        rows.iter()
            .map(|r| (f.pair(r.query(), r.listing()), lexical_features(r.query(), r.listing()).to_vec()))
            .unzip()
    }

    pub fn labeled(rows: &[LabeledSample], f: &Featurizer) -> Self {
        let (pairs, lexical) = Self::encode(rows, f);
        Self { pairs, lexical, labels: Some(rows.iter().map(|r| r.label).collect()), clicks: None }
    }

    pub fn unlabeled(rows: &[UnlabeledPair], f: &Featurizer) -> Self {
        let (pairs, lexical) = Self::encode(rows, f);
        let clicks = rows.iter().map(|r| r.clicked).collect::<Option<Vec<bool>>>();
        Self { pairs, lexical, labels: None, clicks }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// ỹ per row, if labeled.
    pub fn binary_labels(&self) -> Option<Vec<u8>> {
        self.labels.as_ref().map(|ls| ls.iter().map(|&l| main_label(l)).collect())
    }

    pub fn binary_flags(&self) -> Option<Vec<bool>> {
        self.labels.as_ref().map(|ls| ls.iter().map(|&l| main_label(l) == 1).collect())
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            pairs: idx.iter().map(|&i| self.pairs[i].clone()).collect(),
            lexical: idx.iter().map(|&i| self.lexical[i].clone()).collect(),
            labels: self.labels.as_ref().map(|ls| idx.iter().map(|&i| ls[i]).collect()),
            clicks: self.clicks.as_ref().map(|cs| idx.iter().map(|&i| cs[i]).collect()),
        }
    }
}
