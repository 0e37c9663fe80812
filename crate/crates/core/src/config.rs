//! Run configuration: one TOML document with a section per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::{AnnotatorConfig, AnnotatorKind, AnnotatorSpec};
use crate::corpus::CorpusSpec;
use crate::distill::{FinetuneConfig, FinetuneMode, MappingConfig};
use crate::error::{Error, Result};
use crate::featurize::FieldLimits;
use crate::models::CdssmConfig;
use crate::seed;
use crate::train::TrainConfig;

pub const SEED_ENV: &str = "FASTMATCH_SEED";
pub const ARTIFACT_DIR_ENV: &str = "FASTMATCH_ARTIFACT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub cdssm: CdssmConfig,
    pub mapping: MappingConfig,
    /// Also used for the click baseline.
    pub train: TrainConfig,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            cdssm: CdssmConfig::default(),
            mapping: MappingConfig::default(),
            train: TrainConfig { epochs: 6, batch_size: 64, learning_rate: 0.1, momentum: 0.9, patience: 2, min_steps: 0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub mode: FinetuneMode,
    pub theta: f64,
    /// Also used for the labeled-only baseline.
    pub train: TrainConfig,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let ft = FinetuneConfig::default();
        Self {
            mode: ft.mode,
            theta: ft.theta,
            train: TrainConfig { epochs: 30, batch_size: 64, learning_rate: 0.05, momentum: 0.9, patience: 3, min_steps: 600 },
        }
    }
}

impl FinetuneSection {
    pub fn config(&self) -> FinetuneConfig {
        FinetuneConfig { mode: self.mode, theta: self.theta }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Annotators whose scores are averaged.
    pub annotators: Vec<AnnotatorKind>,
    pub validation_fraction: f64,
    /// Fraction of the labeled set used.
    pub rho: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { annotators: vec![AnnotatorKind::Dc, AnnotatorKind::Gbdt], validation_fraction: 0.1, rho: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Independent replicates per cell.
    pub seeds: usize,
    pub thetas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub mappings: Vec<String>,
    /// Annotator ensembles compared by the mapping grid, e.g. `dc:single`
    /// or `dc:joint+gbdt`.
    pub grid_annotators: Vec<String>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            seeds: 3,
            thetas: vec![0.0, 0.2, 0.5, 0.8, 1.0],
            rhos: (1..=9).map(|i| f64::from(i) / 10.0).collect(),
            mappings: vec!["f1:g1".into(), "f1:g2".into(), "f2:g3".into()],
            grid_annotators: ["dc:single", "dc:joint", "gbdt", "dc:joint+gbdt"].map(String::from).to_vec(),
        }
    }
}

fn default_artifact_dir() -> PathBuf {
    PathBuf::from("artifacts")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed for every training step; the corpus has its own.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_artifact_dir")]
    pub artifact_dir: PathBuf,
    pub corpus: CorpusSpec,
    #[serde(default)]
    pub featurize: FieldLimits,
    #[serde(default)]
    pub annotator: AnnotatorConfig,
    #[serde(default)]
    pub student: StudentConfig,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
}

impl RunConfig {
    /// Defaults around a corpus spec.
    pub fn new(corpus: CorpusSpec) -> Self {
        Self {
            seed: 0,
            artifact_dir: default_artifact_dir(),
            corpus,
            featurize: FieldLimits::default(),
            annotator: AnnotatorConfig::default(),
            student: StudentConfig::default(),
            finetune: FinetuneSection::default(),
            pipeline: PipelineConfig::default(),
            protocol: ProtocolConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string().trim_end().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::config(format!("config file {} not found", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies `FASTMATCH_SEED` and `FASTMATCH_ARTIFACT_DIR`.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| Error::config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        if let Ok(v) = std::env::var(ARTIFACT_DIR_ENV) {
            if !v.is_empty() {
                self.artifact_dir = PathBuf::from(v);
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.annotator.validate()?;
        self.annotator.gbdt.validate()?;
        self.student.mapping.validate()?;
        self.student.train.validate("student.train")?;
        self.finetune.config().validate()?;
        self.finetune.train.validate("finetune.train")?;
        let p = &self.pipeline;
        if p.annotators.is_empty() {
            return Err(Error::config("pipeline.annotators must name at least one annotator"));
        }
        if !(p.validation_fraction > 0.0 && p.validation_fraction < 1.0) {
            return Err(Error::config("pipeline.validation_fraction must be in (0, 1)"));
        }
        if !(p.rho > 0.0 && p.rho <= 1.0) {
            return Err(Error::config("pipeline.rho must be in (0, 1]"));
        }
        let q = &self.protocol;
        if q.seeds == 0 {
            return Err(Error::config("protocol.seeds must be > 0"));
        }
        if q.thetas.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::config("protocol.thetas must lie in [0, 1]"));
        }
        if q.rhos.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(Error::config("protocol.rhos must lie in (0, 1]"));
        }
        for m in &q.mappings {
            m.parse::<MappingConfig>()?;
        }
        for a in &q.grid_annotators {
            AnnotatorSpec::parse_ensemble(a)?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    /// Digest of every setting that can change results; the artifact
    /// location is excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.artifact_dir = PathBuf::new();
        seed::digest_hex(c.to_toml().as_bytes())
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        self.finetune.config()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 5
        [corpus]
        n_intents = 50
        vocab_size = 100
        n_labeled = 100
        n_unlabeled = 100
        n_clicked = 100
        click_noise_rate = 0.1
        seed = 1
    "#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.corpus.n_test, 0);
        assert_eq!(c.annotator, AnnotatorConfig::default());
        assert_eq!(c.protocol.rhos.len(), 9);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let typo = MINIMAL.replace("seed = 5", "sead = 5");
        assert!(matches!(RunConfig::from_toml(&typo), Err(Error::Config(_))));
        let nested = format!("{MINIMAL}\n[student.train]\nepochz = 3\n");
        assert!(matches!(RunConfig::from_toml(&nested), Err(Error::Config(_))));
        let theta = format!("{MINIMAL}\n[finetune]\ntheta = 1.5\n");
        assert!(matches!(RunConfig::from_toml(&theta), Err(Error::Config(_))));
        let mapping = format!("{MINIMAL}\n[protocol]\nmappings = [\"f3:g1\"]\n");
        assert!(matches!(RunConfig::from_toml(&mapping), Err(Error::Config(_))));
        let grid = format!("{MINIMAL}\n[protocol]\ngrid_annotators = [\"gbdt:joint\"]\n");
        assert!(matches!(RunConfig::from_toml(&grid), Err(Error::Config(_))));
    }

    #[test]
    fn hash_ignores_artifact_dir_only() {
        let a = RunConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.artifact_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 6;
        assert_ne!(a.hash(), b.hash());
    }
}
