//! The CDSSM dual encoder (deployable student) and the Deep Crossing
//! multi-task annotator.

mod cdssm;
mod deep_crossing;
mod tasks;

use fastmatch_tensor::{Checkpoint, ParamStore, SparseVec};
use serde::{Deserialize, Serialize};

use crate::corpus::AdListing;
use crate::error::{Error, Result};
use crate::featurize::{bag, featurize_fields, featurize_query, FieldLimits, FieldSequences, TrigramVocab};

pub use cdssm::{score_vectors, Cdssm, CdssmConfig, Side};
pub use deep_crossing::{DeepCrossing, DeepCrossingConfig};
pub use tasks::{LabelSet, Task, TaskSet};

/// Rows per forward pass when scoring.
pub(crate) const INFERENCE_CHUNK: usize = 512;

/// Model-ready view of one (query, listing) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairInput {
    /// Query words; never empty.
    pub query: Vec<SparseVec>,
    /// keyword, ad_title and lp_title words separated by empty words; never
    /// empty.
    pub ad: Vec<SparseVec>,
    /// Summed trigram counts of query, keyword, ad_title, lp_title.
    pub bags: [SparseVec; 4],
}

fn non_empty(mut words: Vec<SparseVec>) -> Vec<SparseVec> {
    if words.is_empty() {
        words.push(SparseVec::new());
    }
    words
}

/// Ad-tower word sequence for hashed listing fields.
pub fn ad_sequence(keyword: &[SparseVec], ad_title: &[SparseVec], lp_title: &[SparseVec]) -> Vec<SparseVec> {
    if keyword.is_empty() && ad_title.is_empty() && lp_title.is_empty() {
        return vec![SparseVec::new()];
    }
    let mut out = Vec::with_capacity(keyword.len() + ad_title.len() + lp_title.len() + 2);
    out.extend_from_slice(keyword);
    out.push(SparseVec::new());
    out.extend_from_slice(ad_title);
    out.push(SparseVec::new());
    out.extend_from_slice(lp_title);
    out
}

impl PairInput {
    pub fn from_fields(f: &FieldSequences) -> Self {
        Self {
            query: non_empty(f.query.clone()),
            ad: ad_sequence(&f.keyword, &f.ad_title, &f.lp_title),
            bags: [bag(&f.query), bag(&f.keyword), bag(&f.ad_title), bag(&f.lp_title)],
        }
    }
}

/// Frozen vocabulary plus field limits.
#[derive(Clone, Debug, PartialEq)]
pub struct Featurizer {
    pub vocab: TrigramVocab,
    pub limits: FieldLimits,
}

impl Featurizer {
    pub fn new(vocab: TrigramVocab, limits: FieldLimits) -> Self {
        Self { vocab, limits }
    }

    pub fn pair(&self, query: &str, listing: &AdListing) -> PairInput {
        PairInput::from_fields(&featurize_fields(query, listing, &self.vocab, &self.limits))
    }

    pub fn query(&self, query: &str) -> Vec<SparseVec> {
        non_empty(featurize_query(query, &self.vocab, &self.limits))
    }

    pub fn ad(&self, listing: &AdListing) -> Vec<SparseVec> {
        let f = featurize_fields("", listing, &self.vocab, &self.limits);
        ad_sequence(&f.keyword, &f.ad_title, &f.lp_title)
    }
}

/// Self-describing architecture record stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    Cdssm { vocab_size: usize, config: CdssmConfig },
    DeepCrossing { vocab_size: usize, config: DeepCrossingConfig, tasks: TaskSet },
}

impl Architecture {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("architecture serializes")
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        serde_json::from_str(&ckpt.architecture)
            .map_err(|e| Error::Precondition(format!("unreadable architecture descriptor: {e}")))
    }
}

/// Anything trained by gradient descent over a parameter store.
pub trait Trainable {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
}

pub(crate) fn missing(name: &str) -> Error {
    Error::Precondition(format!("checkpoint lacks parameter group {name:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_fields_become_one_pad_word() {
        let f = Featurizer::new(TrigramVocab::build(["abc"]), FieldLimits::default());
        let p = f.pair("", &AdListing::new("", "", ""));
        assert_eq!(p.query, vec![SparseVec::new()]);
        assert_eq!(p.ad, vec![SparseVec::new()]);
        let p = f.pair("abc", &AdListing::new("abc", "", "abc"));
        assert_eq!(p.ad.len(), 4);
        assert_eq!(p.ad, f.ad(&AdListing::new("abc", "", "abc")));
        assert_eq!(p.bags[1].l1_norm(), 3.0);
    }
}
