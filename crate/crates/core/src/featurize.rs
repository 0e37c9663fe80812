//! Text to model inputs: letter-trigram word hashing for the neural models
//! and a small lexical feature vector for the tree ensemble.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use fastmatch_tensor::SparseVec;
use serde::{Deserialize, Serialize};

use crate::corpus::AdListing;
use crate::error::{Error, Result};

pub const N_LEXICAL: usize = 12;

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Contiguous letter trigrams of `#word#`.
pub fn word_trigrams(word: &str) -> Vec<String> {
    let framed: Vec<char> = std::iter::once('#').chain(word.chars()).chain(std::iter::once('#')).collect();
    framed.windows(3).map(|w| w.iter().collect()).collect()
}

/// Frozen trigram index with lexicographic ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrigramVocab {
    terms: Vec<String>,
    index: HashMap<String, u32>,
}

impl TrigramVocab {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set = BTreeSet::new();
        for text in texts {
            for word in tokenize(text) {
                set.extend(word_trigrams(&word));
            }
        }
        Self::from_terms(set.into_iter().collect())
    }

    fn from_terms(terms: Vec<String>) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { terms, index }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn get(&self, trigram: &str) -> Option<u32> {
        self.index.get(trigram).copied()
    }

    /// Trigram count vector of one word; out-of-vocabulary trigrams dropped.
    pub fn hash_word(&self, word: &str) -> SparseVec {
        SparseVec::from_pairs(word_trigrams(word).iter().filter_map(|t| self.get(t)).map(|i| (i, 1.0)).collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.terms.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, msg: &str| Error::Format { path: path.to_path_buf(), line: line as u64 + 1, message: msg.into() };
        let mut terms = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (term, idx) = line.split_once('\t').ok_or_else(|| bad(n, "expected trigram<TAB>index"))?;
            let idx: usize = idx.parse().map_err(|_| bad(n, "index is not an integer"))?;
            if idx != terms.len() {
                return Err(bad(n, "indices must be dense and ascending"));
            }
            terms.push(term.to_string());
        }
        Ok(Self::from_terms(terms))
    }
}

/// Per-field maximum word counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldLimits {
    pub query: usize,
    pub keyword: usize,
    pub ad_title: usize,
    pub lp_title: usize,
}

impl Default for FieldLimits {
    fn default() -> Self {
        Self { query: 20, keyword: 10, ad_title: 20, lp_title: 20 }
    }
}

/// Hashed word sequences of one (query, listing) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSequences {
    pub query: Vec<SparseVec>,
    pub keyword: Vec<SparseVec>,
    pub ad_title: Vec<SparseVec>,
    pub lp_title: Vec<SparseVec>,
}

fn hash_field(text: &str, limit: usize, vocab: &TrigramVocab) -> Vec<SparseVec> {
    tokenize(text).iter().take(limit).map(|w| vocab.hash_word(w)).collect()
}

pub fn featurize_query(query: &str, vocab: &TrigramVocab, limits: &FieldLimits) -> Vec<SparseVec> {
    hash_field(query, limits.query, vocab)
}

pub fn featurize_fields(query: &str, listing: &AdListing, vocab: &TrigramVocab, limits: &FieldLimits) -> FieldSequences {
    FieldSequences {
        query: featurize_query(query, vocab, limits),
        keyword: hash_field(&listing.keyword, limits.keyword, vocab),
        ad_title: hash_field(&listing.ad_title, limits.ad_title, vocab),
        lp_title: hash_field(&listing.lp_title, limits.lp_title, vocab),
    }
}

/// Summed trigram counts of a field.
pub fn bag(words: &[SparseVec]) -> SparseVec {
    SparseVec::sum(words)
}

fn word_jaccard(a: &[String], b: &[String]) -> f64 {
    let a: HashSet<&String> = a.iter().collect();
    let b: HashSet<&String> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

fn trigram_counts(words: &[String]) -> HashMap<String, f64> {
    let mut m = HashMap::new();
    for w in words {
        for t in word_trigrams(w) {
            *m.entry(t).or_insert(0.0) += 1.0;
        }
    }
    m
}

fn cosine(a: &HashMap<String, f64>, b: &HashMap<String, f64>) -> f64 {
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(k, v)| b.get(k).map(|w| v * w)).sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

fn length_ratio(a: usize, b: usize) -> f64 {
    let hi = a.max(b);
    if hi == 0 {
        0.0
    } else {
        a.min(b) as f64 / hi as f64
    }
}

/// Twelve lexical features:
/// `[jaccard, trigram cosine]` for keyword, ad_title, lp_title and the whole
/// listing, then query/field word-count ratios for the three fields, then an
/// exact query == keyword flag.
pub fn lexical_features(query: &str, listing: &AdListing) -> [f64; N_LEXICAL] {
    let q = tokenize(query);
    let fields = [tokenize(&listing.keyword), tokenize(&listing.ad_title), tokenize(&listing.lp_title)];
    let whole: Vec<String> = fields.iter().flatten().cloned().collect();
    let q_tri = trigram_counts(&q);
    let mut out = [0.0; N_LEXICAL];
    for (i, f) in fields.iter().chain(std::iter::once(&whole)).enumerate() {
        out[2 * i] = word_jaccard(&q, f);
        out[2 * i + 1] = cosine(&q_tri, &trigram_counts(f));
    }
    for (i, f) in fields.iter().enumerate() {
        out[8 + i] = length_ratio(q.len(), f.len());
    }
    out[11] = f64::from(!q.is_empty() && q == fields[0]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> TrigramVocab {
        TrigramVocab::build(["cat aa", "dog"])
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("iPhone Cover"), ["iphone", "cover"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("wi-fi 6e"), ["wi", "fi", "6e"]);
    }

    #[test]
    fn hash_word_counts_framed_trigrams() {
        let v = vocab();
        let cat = v.hash_word("cat");
        let expect: Vec<u32> = {
            let mut e: Vec<u32> = ["#ca", "cat", "at#"].iter().map(|t| v.get(t).unwrap()).collect();
            e.sort_unstable();
            e
        };
        assert_eq!(cat.indices, expect);
        assert_eq!(cat.values, [1.0; 3]);
        let aa = v.hash_word("aa");
        assert_eq!(aa.nnz(), 2);
        assert!(v.hash_word("xyz").indices.is_empty());
        // L1 norm equals number of retained trigrams
        assert_eq!(v.hash_word("cats").l1_norm(), 2.0);
    }

    #[test]
    fn repeated_trigrams_accumulate() {
        let v = TrigramVocab::build(["aaaa"]);
        let w = v.hash_word("aaaa");
        assert_eq!(w.values.iter().sum::<f64>(), 4.0);
        assert_eq!(w.nnz(), 3);
    }

    #[test]
    fn vocab_is_lexicographic_and_round_trips() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.tsv");
        v.save(&p).unwrap();
        assert_eq!(TrigramVocab::load(&p).unwrap(), v);
        assert_eq!(TrigramVocab::build(["dog", "cat aa"]), v);
        assert_eq!(v.get("#aa"), Some(0));
        std::fs::write(&p, "abc\t1\n").unwrap();
        assert!(matches!(TrigramVocab::load(&p), Err(Error::Format { line: 1, .. })));
    }

    #[test]
    fn field_truncation_and_empty_fields() {
        let v = vocab();
        let q = vec!["cat"; 40].join(" ");
        let f = featurize_fields(&q, &AdListing::new("dog", "cat", ""), &v, &FieldLimits::default());
        assert_eq!(f.query.len(), 20);
        assert!(f.lp_title.is_empty());
        assert_eq!(f, featurize_fields(&q, &AdListing::new("dog", "cat", ""), &v, &FieldLimits::default()));
    }

    #[test]
    fn lexical_feature_cases() {
        let same = lexical_features("red shoes", &AdListing::new("red shoes", "x", "y"));
        assert_eq!(same[0], 1.0);
        assert_eq!(same[11], 1.0);
        let swapped = lexical_features("red shoes", &AdListing::new("shoes red", "x", "y"));
        assert_eq!(swapped[0], 1.0);
        assert_eq!(swapped[11], 0.0);
        let disjoint = lexical_features("red shoes", &AdListing::new("blue hat", "green coat", "tall boot"));
        assert!(disjoint[..8].iter().all(|&x| x == 0.0));
        assert_eq!(disjoint[11], 0.0);
        for x in lexical_features("a b c", &AdListing::new("", "b", "c d e f")) {
            assert!(x.is_finite() && (0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn trigram_cosine_hand_value() {
        // "ab" → {#ab, ab#}; "abc" → {#ab, abc, bc#}; cosine = 1/sqrt(2·3)
        let f = lexical_features("ab", &AdListing::new("abc", "", ""));
        assert!((f[1] - 1.0 / 6f64.sqrt()).abs() < 1e-15);
    }
}
