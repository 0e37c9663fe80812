//! Dataset model, synthetic search-log generation and TSV persistence.

mod generate;
pub(crate) mod io;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use generate::{generate_corpus, grade, Corpus, Intent, Relation};
pub use io::{load_dataset, load_labeled, load_unlabeled, save_labeled, save_unlabeled, DatasetKind, Samples};

pub const AC_MAX: u8 = 4;
pub const LP_MAX: u8 = 5;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AdListing {
    pub keyword: String,
    pub ad_title: String,
    pub lp_title: String,
}

impl AdListing {
    pub fn new(keyword: impl Into<String>, ad_title: impl Into<String>, lp_title: impl Into<String>) -> Self {
        Self { keyword: keyword.into(), ad_title: ad_title.into(), lp_title: lp_title.into() }
    }
}

/// Human relevance grades against ad copy (`ac`, 0..=4) and landing page
/// (`lp`, 0..=5).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GradedLabel {
    ac: u8,
    lp: u8,
}

impl GradedLabel {
    pub fn new(ac: u8, lp: u8) -> Result<Self> {
        if ac > AC_MAX || lp > LP_MAX {
            return Err(Error::Precondition(format!("label out of range: ac={ac} lp={lp}")));
        }
        Ok(Self { ac, lp })
    }

    pub fn ac(self) -> u8 {
        self.ac
    }

    pub fn lp(self) -> u8 {
        self.lp
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub query: String,
    pub listing: AdListing,
    pub label: GradedLabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledPair {
    pub query: String,
    pub listing: AdListing,
    /// Present only for rows of the clicked dataset.
    pub clicked: Option<bool>,
}

/// Anything that carries a query and a listing.
pub trait QueryListing {
    fn query(&self) -> &str;
    fn listing(&self) -> &AdListing;
}

impl QueryListing for LabeledSample {
    fn query(&self) -> &str {
        &self.query
    }
    fn listing(&self) -> &AdListing {
        &self.listing
    }
}

impl QueryListing for UnlabeledPair {
    fn query(&self) -> &str {
        &self.query
    }
    fn listing(&self) -> &AdListing {
        &self.listing
    }
}

impl QueryListing for (String, AdListing) {
    fn query(&self) -> &str {
        &self.0
    }
    fn listing(&self) -> &AdListing {
        &self.1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_intents: usize,
    pub vocab_size: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_clicked: usize,
    /// Held-out labeled pairs for final evaluation.
    #[serde(default)]
    pub n_test: usize,
    /// Fraction of clicked rows that are irrelevant (false-positive clicks).
    pub click_noise_rate: f64,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_intents", self.n_intents),
            ("vocab_size", self.vocab_size),
            ("n_labeled", self.n_labeled),
            ("n_unlabeled", self.n_unlabeled),
            ("n_clicked", self.n_clicked),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("corpus.{name} must be > 0")));
            }
        }
        if self.vocab_size < generate::MIN_VOCAB {
            return Err(Error::config(format!("corpus.vocab_size must be at least {}", generate::MIN_VOCAB)));
        }
        if !(0.0..1.0).contains(&self.click_noise_rate) {
            return Err(Error::config("corpus.click_noise_rate must be in [0, 1)"));
        }
        Ok(())
    }
}

/// The four datasets of a run as they live on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct DataFiles {
    pub labeled: Vec<LabeledSample>,
    pub unlabeled: Vec<UnlabeledPair>,
    pub clicked: Vec<UnlabeledPair>,
    pub test: Vec<LabeledSample>,
}

pub const TEST_FILE: &str = "test.tsv";

impl From<Corpus> for DataFiles {
    fn from(c: Corpus) -> Self {
        Self { labeled: c.labeled, unlabeled: c.unlabeled, clicked: c.clicked, test: c.test }
    }
}

impl DataFiles {
    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        save_labeled(&dir.join(DatasetKind::Labeled.file_name()), &self.labeled)?;
        save_unlabeled(&dir.join(DatasetKind::Unlabeled.file_name()), &self.unlabeled)?;
        save_unlabeled(&dir.join(DatasetKind::Clicked.file_name()), &self.clicked)?;
        save_labeled(&dir.join(TEST_FILE), &self.test)
    }

    /// Loads all four files; a missing one is reported by name.
    pub fn load(dir: &std::path::Path) -> Result<Self> {
        let test = load_labeled(&dir.join(TEST_FILE))?;
        if test.is_empty() {
            return Err(Error::Precondition(format!("{} has no rows; set corpus.n_test", dir.join(TEST_FILE).display())));
        }
        Ok(Self {
            labeled: load_labeled(&dir.join(DatasetKind::Labeled.file_name()))?,
            unlabeled: load_unlabeled(&dir.join(DatasetKind::Unlabeled.file_name()), DatasetKind::Unlabeled)?,
            clicked: load_unlabeled(&dir.join(DatasetKind::Clicked.file_name()), DatasetKind::Clicked)?,
            test,
        })
    }

    /// Trigram vocabulary over the training text: labeled and unlabeled
    /// pairs. Test and click-log text never enter it.
    pub fn vocab(&self) -> crate::featurize::TrigramVocab {
        let rows = self.labeled.iter().map(|s| (&s.query, &s.listing));
        let rows = rows.chain(self.unlabeled.iter().map(|s| (&s.query, &s.listing)));
        crate::featurize::TrigramVocab::build(
            rows.flat_map(|(q, l)| [q.as_str(), l.keyword.as_str(), l.ad_title.as_str(), l.lp_title.as_str()]),
        )
    }
}

/// Shuffled split into `(train, validation)`. The validation part has
/// `floor(fraction · n)` samples; both parts keep the input order.
pub fn split_labeled<T: Clone>(samples: &[T], validation_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::Precondition(format!("validation fraction {validation_fraction} not in (0, 1)")));
    }
    let n_val = (validation_fraction * samples.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut seed::rng(seed, "split"));
    let mut is_val = vec![false; samples.len()];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let mut train = Vec::with_capacity(samples.len() - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (s, v) in samples.iter().zip(is_val) {
        if v {
            val.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    Ok((train, val))
}

/// Random subset of `round(rho · n)` samples in input order. Subsets drawn
/// with one seed are nested: a smaller `rho` always yields a subset of a
/// larger one.
pub fn subsample<T: Clone>(samples: &[T], rho: f64, seed: u64) -> Result<Vec<T>> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Precondition(format!("sampling ratio {rho} not in (0, 1]")));
    }
    let k = (rho * samples.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut seed::rng(seed, "subsample"));
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| samples[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_follow_floor_rule() {
        let xs: Vec<u32> = (0..1000).collect();
        let (train, val) = split_labeled(&xs, 0.1, 3).unwrap();
        assert_eq!((train.len(), val.len()), (900, 100));
        let (t3, v3) = split_labeled(&[1, 2, 3], 0.5, 3).unwrap();
        // floor(1.5) = 1
        assert_eq!((t3.len(), v3.len()), (2, 1));
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_deterministic() {
        let xs: Vec<u32> = (0..257).collect();
        let (a_train, a_val) = split_labeled(&xs, 0.3, 11).unwrap();
        let (b_train, b_val) = split_labeled(&xs, 0.3, 11).unwrap();
        assert_eq!((&a_train, &a_val), (&b_train, &b_val));
        let mut all: Vec<u32> = a_train.iter().chain(&a_val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, xs);
        let (c_train, _) = split_labeled(&xs, 0.3, 12).unwrap();
        assert_ne!(a_train, c_train);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        assert!(split_labeled(&[1, 2], 0.0, 1).is_err());
        assert!(split_labeled(&[1, 2], 1.0, 1).is_err());
    }

    #[test]
    fn subsample_sizes_identity_and_nesting() {
        let xs: Vec<u32> = (0..10_000).collect();
        assert_eq!(subsample(&xs, 1.0, 5).unwrap(), xs);
        assert_eq!(subsample(&xs, 0.2, 5).unwrap().len(), 2000);
        let small = subsample(&xs, 0.1, 5).unwrap();
        let big: std::collections::HashSet<u32> = subsample(&xs, 0.2, 5).unwrap().into_iter().collect();
        assert!(small.iter().all(|x| big.contains(x)));
        assert!(subsample(&xs, 0.0, 5).is_err());
        assert!(subsample(&xs, 1.5, 5).is_err());
    }

    #[test]
    fn graded_label_bounds() {
        assert!(GradedLabel::new(4, 5).is_ok());
        assert!(GradedLabel::new(5, 0).is_err());
        assert!(GradedLabel::new(0, 6).is_err());
    }
}
