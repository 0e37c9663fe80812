use fastmatch_tensor::{init, Checkpoint, Conv1dWords, Dense, Graph, ParamStore, SeqBatch, SparseVec, Var};
use serde::{Deserialize, Serialize};

use super::{missing, Architecture, PairInput, Trainable, INFERENCE_CHUNK};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdssmConfig {
    pub conv_channels: usize,
    pub semantic_dim: usize,
}

impl Default for CdssmConfig {
    fn default() -> Self {
        Self { conv_channels: 128, semantic_dim: 64 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Query,
    Ad,
}

/// conv(window 3) → tanh → max-pool → dense → tanh → unit norm.
#[derive(Clone, Debug)]
struct Tower {
    conv: Conv1dWords,
    semantic: Dense,
}

impl Tower {
    fn new(store: &mut ParamStore, name: &str, vocab: usize, cfg: CdssmConfig, rng: &mut impl rand::Rng) -> Self {
        Self {
            conv: Conv1dWords::new(store, &format!("{name}.conv"), vocab, cfg.conv_channels, rng),
            semantic: Dense::new(store, &format!("{name}.semantic"), cfg.conv_channels, cfg.semantic_dim, rng),
        }
    }

    fn attach(store: &ParamStore, name: &str) -> Result<Self> {
        let conv = Conv1dWords::attach(store, &format!("{name}.conv")).ok_or_else(|| missing(name))?;
        let semantic = Dense::attach(store, &format!("{name}.semantic")).ok_or_else(|| missing(name))?;
        Ok(Self { conv, semantic })
    }

    fn encode(&self, g: &mut Graph<'_>, seqs: &SeqBatch) -> fastmatch_tensor::Result<Var> {
        let h = self.conv.forward(g, seqs)?;
        let h = g.tanh(h)?;
        let h = g.max_pool_words(h)?;
        let h = self.semantic.forward(g, h)?;
        let h = g.tanh(h)?;
        g.l2_normalize(h)
    }
}

/// Layer handles; parameters live in the owning [`Cdssm`]'s store.
#[derive(Clone, Debug)]
pub struct CdssmNet {
    query: Tower,
    ad: Tower,
}

impl CdssmNet {
    pub fn encode(&self, g: &mut Graph<'_>, side: Side, seqs: &SeqBatch) -> fastmatch_tensor::Result<Var> {
        match side {
            Side::Query => self.query.encode(g, seqs),
            Side::Ad => self.ad.encode(g, seqs),
        }
    }

    /// `(cos + 1) / 2` per row, `n x 1`.
    pub fn score(&self, g: &mut Graph<'_>, queries: &SeqBatch, ads: &SeqBatch) -> fastmatch_tensor::Result<Var> {
        let q = self.query.encode(g, queries)?;
        let a = self.ad.encode(g, ads)?;
        let c = g.row_dot(q, a)?;
        g.affine(c, 0.5, 0.5)
    }

    pub fn score_pairs(&self, g: &mut Graph<'_>, batch: &[&PairInput]) -> fastmatch_tensor::Result<Var> {
        let queries: SeqBatch = batch.iter().map(|p| p.query.clone()).collect();
        let ads: SeqBatch = batch.iter().map(|p| p.ad.clone()).collect();
        self.score(g, &queries, &ads)
    }
}

/// Two-tower letter-trigram convolutional encoder.
#[derive(Clone, Debug)]
pub struct Cdssm {
    pub net: CdssmNet,
    pub store: ParamStore,
    pub config: CdssmConfig,
    pub vocab_size: usize,
}

/// Matching score of two unit vectors: `(q·a + 1) / 2`.
pub fn score_vectors(q: &[f64], a: &[f64]) -> f64 {
    let c: f64 = q.iter().zip(a).map(|(x, y)| x * y).sum();
    0.5 * c + 0.5
}

impl Cdssm {
    pub fn new(vocab_size: usize, config: CdssmConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = init::rng(seed);
        let query = Tower::new(&mut store, "query", vocab_size, config, &mut rng);
        let ad = Tower::new(&mut store, "ad", vocab_size, config, &mut rng);
        Self { net: CdssmNet { query, ad }, store, config, vocab_size }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::Cdssm { vocab_size: self.vocab_size, config: self.config }
    }

    pub fn to_checkpoint(&self, vocab_path: &str, config_hash: &str) -> Checkpoint {
        Checkpoint {
            architecture: self.architecture().to_json(),
            vocab_path: vocab_path.into(),
            config_hash: config_hash.into(),
            params: self.store.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let Architecture::Cdssm { vocab_size, config } = Architecture::from_checkpoint(ckpt)? else {
            return Err(Error::Precondition("checkpoint is not a CDSSM model".into()));
        };
        let store = ckpt.params.clone();
        let net = CdssmNet { query: Tower::attach(&store, "query")?, ad: Tower::attach(&store, "ad")? };
        for t in [&net.query, &net.ad] {
            if t.conv.vocab != vocab_size || t.conv.channels != config.conv_channels || t.semantic.out_dim != config.semantic_dim {
                return Err(Error::Precondition("checkpoint tensors disagree with its architecture".into()));
            }
        }
        Ok(Self { net, store, config, vocab_size })
    }

    /// Unit vectors for word sequences, one row per input.
    pub fn encode(&self, side: Side, seqs: &[&[SparseVec]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(INFERENCE_CHUNK) {
            let batch: SeqBatch = chunk.iter().map(|s| s.to_vec()).collect();
            let mut g = Graph::inference(&self.store);
            let v = self.net.encode(&mut g, side, &batch)?;
            let t = g.value(v);
            out.extend((0..t.rows()).map(|i| t.row(i).to_vec()));
        }
        Ok(out)
    }

    /// Pairwise scores through the full two-tower graph.
    pub fn score(&self, pairs: &[PairInput]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(INFERENCE_CHUNK) {
            let refs: Vec<&PairInput> = chunk.iter().collect();
            let mut g = Graph::inference(&self.store);
            let v = self.net.score_pairs(&mut g, &refs)?;
            out.extend_from_slice(g.value(v).data());
        }
        Ok(out)
    }
}

impl Trainable for Cdssm {
    fn store(&self) -> &ParamStore {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AdListing;
    use crate::featurize::{FieldLimits, TrigramVocab};
    use crate::models::Featurizer;

    fn setup() -> (Featurizer, Cdssm) {
        let f = Featurizer::new(TrigramVocab::build(["red shoes cheap nike running boots"]), FieldLimits::default());
        let m = Cdssm::new(f.vocab.len(), CdssmConfig { conv_channels: 16, semantic_dim: 8 }, 1);
        (f, m)
    }

    #[test]
    fn encodings_are_unit_and_deterministic() {
        let (f, m) = setup();
        let q = f.query("red running shoes");
        let v = m.encode(Side::Query, &[&q, &q]).unwrap();
        assert_eq!(v[0], v[1]);
        let norm: f64 = v[0].iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn word_order_matters() {
        let (f, m) = setup();
        let a = f.ad(&AdListing::new("red shoes", "cheap nike running boots", "nike"));
        let b = f.ad(&AdListing::new("shoes red", "boots running nike cheap", "nike"));
        let v = m.encode(Side::Ad, &[&a, &b]).unwrap();
        assert_ne!(v[0], v[1]);
    }

    #[test]
    fn score_vectors_endpoints() {
        let q = [0.6, 0.8];
        assert_eq!(score_vectors(&q, &q), 1.0);
        assert!(score_vectors(&q, &[-0.6, -0.8]).abs() < 1e-15);
        assert_eq!(score_vectors(&q, &[0.8, -0.6]), 0.5);
    }

    #[test]
    fn pairwise_score_matches_precomputed_vectors() {
        let (f, m) = setup();
        let pairs = vec![
            f.pair("red shoes", &AdListing::new("nike", "red running shoes", "")),
            f.pair("boots", &AdListing::new("cheap boots", "nike boots", "running")),
        ];
        let s = m.score(&pairs).unwrap();
        for (p, s) in pairs.iter().zip(s) {
            let q = m.encode(Side::Query, &[&p.query]).unwrap();
            let a = m.encode(Side::Ad, &[&p.ad]).unwrap();
            assert_eq!(score_vectors(&q[0], &a[0]), s);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (f, m) = setup();
        let ck = m.to_checkpoint("vocab.tsv", "abc");
        let back = Cdssm::from_checkpoint(&ck).unwrap();
        let p = vec![f.pair("red shoes", &AdListing::new("nike", "red shoes", "x"))];
        assert_eq!(m.score(&p).unwrap(), back.score(&p).unwrap());
        let mut bad = ck.clone();
        bad.architecture = r#"{"model":"cdssm","vocab_size":3,"config":{"conv_channels":16,"semantic_dim":8}}"#.into();
        assert!(Cdssm::from_checkpoint(&bad).is_err());
    }
}
