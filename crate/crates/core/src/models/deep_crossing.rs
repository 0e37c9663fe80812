use fastmatch_tensor::{init, BatchNorm, Checkpoint, Dense, EmbeddingSum, Graph, ParamStore, ResidualUnit, SparseBatch, Var};
use serde::{Deserialize, Serialize};

use super::{missing, Architecture, PairInput, TaskSet, Trainable, INFERENCE_CHUNK};
use crate::error::{Error, Result};

const FIELDS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepCrossingConfig {
    /// Embedding width per field.
    pub embed_dim: usize,
    /// Width of the stem layer and of every residual unit.
    pub width: usize,
    pub residual_units: usize,
    /// Append element-wise query×field products to the embedding layer.
    pub crossing: bool,
}

impl Default for DeepCrossingConfig {
    fn default() -> Self {
        Self { embed_dim: 64, width: 256, residual_units: 2, crossing: true }
    }
}

/// Layer handles; parameters live in the owning [`DeepCrossing`]'s store.
#[derive(Clone, Debug)]
pub struct DeepCrossingNet {
    embed: EmbeddingSum,
    stem: Dense,
    stem_norm: BatchNorm,
    residual: Vec<ResidualUnit>,
    head: Dense,
    crossing: bool,
}

impl DeepCrossingNet {
    /// Per-task probabilities, `n x tasks`.
    pub fn forward(&self, g: &mut Graph<'_>, batch: &[&PairInput]) -> fastmatch_tensor::Result<Var> {
        let mut fields = Vec::with_capacity(FIELDS);
        for f in 0..FIELDS {
            let bags: SparseBatch = batch.iter().map(|p| p.bags[f].clone()).collect();
            fields.push(self.embed.forward(g, &bags)?);
        }
        let mut parts = fields.clone();
        if self.crossing {
            for &other in &fields[1..] {
                parts.push(g.mul(fields[0], other)?);
            }
        }
        let x = g.concat(&parts)?;
        let h = self.stem.forward(g, x)?;
        let h = self.stem_norm.forward(g, h)?;
        let mut h = g.relu(h)?;
        for unit in &self.residual {
            h = unit.forward(g, h)?;
        }
        let logits = self.head.forward(g, h)?;
        g.sigmoid(logits)
    }
}

/// Deep Crossing annotator: one trigram embedding table applied to every
/// field, optional query×field crossing products, a residual stack and one
/// sigmoid head per task. Sharing the table makes the products measure
/// lexical overlap.
#[derive(Clone, Debug)]
pub struct DeepCrossing {
    pub net: DeepCrossingNet,
    pub store: ParamStore,
    pub config: DeepCrossingConfig,
    pub tasks: TaskSet,
    pub vocab_size: usize,
}

impl DeepCrossing {
    pub fn new(vocab_size: usize, config: DeepCrossingConfig, tasks: TaskSet, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = init::rng(seed);
        let embed = EmbeddingSum::new(&mut store, "embed", vocab_size, config.embed_dim, &mut rng);
        let n_parts = if config.crossing { 2 * FIELDS - 1 } else { FIELDS };
        let stem = Dense::new(&mut store, "stem", n_parts * config.embed_dim, config.width, &mut rng);
        let stem_norm = BatchNorm::new(&mut store, "stem.bn", config.width);
        let residual = (0..config.residual_units)
            .map(|i| ResidualUnit::new(&mut store, &format!("res{i}"), config.width, config.width, &mut rng))
            .collect();
        let head = Dense::new(&mut store, "head", config.width, tasks.len(), &mut rng);
        let net = DeepCrossingNet { embed, stem, stem_norm, residual, head, crossing: config.crossing };
        Self { net, store, config, tasks, vocab_size }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::DeepCrossing { vocab_size: self.vocab_size, config: self.config, tasks: self.tasks.clone() }
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
        let Architecture::DeepCrossing { vocab_size, config, tasks } = Architecture::from_checkpoint(ckpt)? else {
            return Err(Error::Precondition("checkpoint is not a Deep Crossing model".into()));
        };
        let store = ckpt.params.clone();
        let embed = EmbeddingSum::attach(&store, "embed").ok_or_else(|| missing("embed"))?;
        let stem = Dense::attach(&store, "stem").ok_or_else(|| missing("stem"))?;
        let stem_norm = BatchNorm::attach(&store, "stem.bn").ok_or_else(|| missing("stem.bn"))?;
        let residual = (0..config.residual_units)
            .map(|i| ResidualUnit::attach(&store, &format!("res{i}")).ok_or_else(|| missing("res")))
            .collect::<Result<Vec<_>>>()?;
        let head = Dense::attach(&store, "head").ok_or_else(|| missing("head"))?;
        if embed.vocab != vocab_size || head.out_dim != tasks.len() || stem.out_dim != config.width {
            return Err(Error::Precondition("checkpoint tensors disagree with its architecture".into()));
        }
        let net = DeepCrossingNet { embed, stem, stem_norm, residual, head, crossing: config.crossing };
        Ok(Self { net, store, config, tasks, vocab_size })
    }

    /// Eval-mode per-task probabilities, one row per pair.
    pub fn predict(&self, pairs: &[PairInput]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(INFERENCE_CHUNK) {
            let refs: Vec<&PairInput> = chunk.iter().collect();
            let mut g = Graph::inference(&self.store);
            let v = self.net.forward(&mut g, &refs)?;
            let t = g.value(v);
            out.extend((0..t.rows()).map(|i| t.row(i).to_vec()));
        }
        Ok(out)
    }

    /// Task-weighted composite score per pair.
    pub fn score(&self, pairs: &[PairInput]) -> Result<Vec<f64>> {
        Ok(self.predict(pairs)?.iter().map(|p| self.tasks.composite(p)).collect())
    }
}

impl Trainable for DeepCrossing {
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

    fn small() -> DeepCrossingConfig {
        DeepCrossingConfig { embed_dim: 4, width: 8, residual_units: 2, crossing: true }
    }

    #[test]
    fn heads_match_tasks_and_stay_in_unit_interval() {
        let f = Featurizer::new(TrigramVocab::build(["red shoes nike"]), FieldLimits::default());
        let m = DeepCrossing::new(f.vocab.len(), small(), TaskSet::joint(), 3);
        let pairs = vec![f.pair("red shoes", &AdListing::new("nike", "red", "")), f.pair("x", &AdListing::new("", "", ""))];
        let p = m.predict(&pairs).unwrap();
        assert_eq!(p[0].len(), 9);
        for row in &p {
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
            let c = m.tasks.composite(row);
            assert!(c > 0.0 && c < 1.0);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let f = Featurizer::new(TrigramVocab::build(["red shoes nike"]), FieldLimits::default());
        let m = DeepCrossing::new(f.vocab.len(), small(), TaskSet::ac_only(), 3);
        let back = DeepCrossing::from_checkpoint(&m.to_checkpoint("v", "h")).unwrap();
        let pairs = vec![f.pair("red shoes", &AdListing::new("nike", "red", ""))];
        assert_eq!(m.score(&pairs).unwrap(), back.score(&pairs).unwrap());
        assert_eq!(back.tasks, TaskSet::ac_only());
    }
}
