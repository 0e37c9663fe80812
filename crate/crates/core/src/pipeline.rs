//! File-based pipeline steps. Each step reads its inputs from a run
//! directory and writes its outputs there, so the steps can run as separate
//! processes:
//!
//! ```text
//! <run>/config.toml, config.hash   resolved config of the last step
//! <run>/data/                      labeled, unlabeled, clicked, test .tsv
//! <run>/vocab.tsv
//! <run>/checkpoints/               annotator-*, student.ckpt, finetuned.ckpt
//! <run>/scored/                    unlabeled.tsv, train.tsv
//! <run>/reports/
//! ```
//!
//! Ids and seeds match replicate 0 of the protocol workbench at
//! `pipeline.rho`, so a pipeline run reproduces that cell.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fastmatch_tensor::Checkpoint;

use crate::annotate::{
    load_scored, save_scored, score_dataset, train_annotator, validation_auc, Annotator, AnnotatorKind, AnnotatorSpec,
    ScoredSample,
};
use crate::config::RunConfig;
use crate::corpus::{generate_corpus, DataFiles, LabeledSample};
use crate::dataset::EncodedSet;
use crate::distill::{finetune, train_student};
use crate::error::{Error, Result};
use crate::eval::protocol::{annotator_id, context_id, ensemble_name, finetune_id, finetune_targets, labeled_split, replicate_seed, student_id};
use crate::eval::{pr_auc, roc_auc, MetricsReport, Sizes, SweepResult};
use crate::featurize::TrigramVocab;
use crate::models::{Cdssm, Featurizer};
use crate::retrieval::{checkpoint_digest, Hit, VectorDictionary};
use crate::seed;
use crate::train::FitReport;

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const STUDENT_FILE: &str = "student.ckpt";
pub const FINETUNED_FILE: &str = "finetuned.ckpt";
pub const DICTIONARY_FILE: &str = "dictionary.bin";

/// Paths inside one run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
    pub data: PathBuf,
}

impl RunDir {
    /// `data` defaults to `<root>/data`.
    pub fn new(root: impl Into<PathBuf>, data: Option<PathBuf>) -> Self {
        let root = root.into();
        let data = data.unwrap_or_else(|| root.join("data"));
        Self { root, data }
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join(VOCAB_FILE)
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn scored(&self) -> PathBuf {
        self.root.join("scored")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn annotator(&self, kind: AnnotatorKind) -> PathBuf {
        let ext = match kind {
            AnnotatorKind::Dc => "ckpt",
            AnnotatorKind::Gbdt => "txt",
        };
        self.checkpoints().join(format!("annotator-{kind}.{ext}"))
    }
    pub fn student(&self) -> PathBuf {
        self.checkpoints().join(STUDENT_FILE)
    }
    pub fn finetuned(&self) -> PathBuf {
        self.checkpoints().join(FINETUNED_FILE)
    }
    pub fn scored_unlabeled(&self) -> PathBuf {
        self.scored().join("unlabeled.tsv")
    }
    pub fn scored_train(&self) -> PathBuf {
        self.scored().join("train.tsv")
    }
    pub fn dictionary(&self) -> PathBuf {
        self.root.join(DICTIONARY_FILE)
    }

    /// Writes `config.toml` and `config.hash` at the run root.
    pub fn write_config(&self, cfg: &RunConfig) -> Result<()> {
        create_dir(&self.root)?;
        write(&self.root.join("config.toml"), &cfg.to_toml())?;
        write(&self.root.join("config.hash"), &format!("{}\n", cfg.hash()))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

fn load_cdssm(path: &Path) -> Result<Cdssm> {
    require(path)?;
    Cdssm::from_checkpoint(&Checkpoint::load(path)?)
}

/// Generates the corpus of `cfg` into `out`.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<DataFiles> {
    let data: DataFiles = generate_corpus(&cfg.corpus)?.into();
    create_dir(out)?;
    data.save(out)?;
    Ok(data)
}

/// Loaded data, vocabulary and the replicate-0 split at `pipeline.rho`.
struct Inputs {
    data: DataFiles,
    featurizer: Featurizer,
    train: Vec<LabeledSample>,
    val: Vec<LabeledSample>,
    ctx: String,
    rep_seed: u64,
}

impl Inputs {
    fn load(cfg: &RunConfig, run: &RunDir) -> Result<Self> {
        let data = DataFiles::load(&run.data)?;
        let vocab = run.vocab();
        let vocab = if vocab.exists() {
            TrigramVocab::load(&vocab)?
        } else {
            let v = data.vocab();
            create_dir(&run.root)?;
            v.save(&vocab)?;
            v
        };
        let rep_seed = replicate_seed(cfg.seed, 0);
        let (train, val) = labeled_split(&data.labeled, cfg.pipeline.validation_fraction, cfg.pipeline.rho, rep_seed)?;
        Ok(Self {
            featurizer: Featurizer::new(vocab, cfg.featurize),
            data,
            train,
            val,
            ctx: context_id(0, cfg.pipeline.rho),
            rep_seed,
        })
    }

    fn encode_labeled(&self, rows: &[LabeledSample]) -> EncodedSet {
        EncodedSet::labeled(rows, &self.featurizer)
    }

    fn specs(cfg: &RunConfig) -> Vec<AnnotatorSpec> {
        cfg.pipeline.annotators.iter().map(|&kind| AnnotatorSpec { kind, tasks: None }).collect()
    }

    fn student_id(&self, cfg: &RunConfig) -> String {
        student_id(&self.ctx, &ensemble_name(&Self::specs(cfg), &cfg.annotator), &cfg.student.mapping)
    }

    fn sizes(&self) -> Sizes {
        Sizes {
            train: self.train.len(),
            validation: self.val.len(),
            unlabeled: self.data.unlabeled.len(),
            clicked: self.data.clicked.len(),
            test: self.data.test.len(),
        }
    }
}

/// One trained annotator and its validation ROC AUC.
#[derive(Clone, Debug)]
pub struct AnnotatorOutcome {
    pub kind: AnnotatorKind,
    pub path: PathBuf,
    pub validation_auc: f64,
}

/// Trains every annotator in `pipeline.annotators` on the labeled train rows.
pub fn train_annotators(cfg: &RunConfig, run: &RunDir) -> Result<Vec<AnnotatorOutcome>> {
    let inputs = Inputs::load(cfg, run)?;
    let train = inputs.encode_labeled(&inputs.train);
    let val = inputs.encode_labeled(&inputs.val);
    create_dir(&run.checkpoints())?;
    let mut out = Vec::new();
    for spec in Inputs::specs(cfg) {
        let id = annotator_id(&inputs.ctx, &spec, &cfg.annotator);
        let (a, _) = train_annotator(spec.kind, inputs.featurizer.vocab.len(), &train, &val, &cfg.annotator, seed::derive(inputs.rep_seed, &id))?;
        let path = run.annotator(spec.kind);
        a.save(&path, VOCAB_FILE, &cfg.hash())?;
        out.push(AnnotatorOutcome { kind: spec.kind, path, validation_auc: validation_auc(&a, &val)? });
    }
    run.write_config(cfg)?;
    Ok(out)
}

fn load_annotators(cfg: &RunConfig, run: &RunDir) -> Result<Vec<Annotator>> {
    cfg.pipeline.annotators.iter().map(|&k| Annotator::load(&run.annotator(k), k)).collect()
}

/// Scores the unlabeled set and the labeled train rows with the mean of
/// the trained annotators.
pub fn score(cfg: &RunConfig, run: &RunDir) -> Result<(PathBuf, PathBuf)> {
    let annotators = load_annotators(cfg, run)?;
    let inputs = Inputs::load(cfg, run)?;
    let refs: Vec<&Annotator> = annotators.iter().collect();
    let unlabeled = EncodedSet::unlabeled(&inputs.data.unlabeled, &inputs.featurizer);
    let s_unlabeled = score_dataset(&refs, &unlabeled)?;
    let s_train = score_dataset(&refs, &inputs.encode_labeled(&inputs.train))?;
    create_dir(&run.scored())?;
    let (pu, pt) = (run.scored_unlabeled(), run.scored_train());
    save_scored(&pu, &ScoredSample::from_unlabeled(&inputs.data.unlabeled, &s_unlabeled))?;
    save_scored(&pt, &ScoredSample::from_labeled(&inputs.train, &s_train))?;
    run.write_config(cfg)?;
    Ok((pu, pt))
}

fn scores_of(rows: &[ScoredSample]) -> Vec<f64> {
    rows.iter().map(|r| r.s).collect()
}

/// Trains the student on the scored unlabeled set.
pub fn student(cfg: &RunConfig, run: &RunDir) -> Result<FitReport> {
    let inputs = Inputs::load(cfg, run)?;
    require(&run.scored_unlabeled())?;
    let rows = load_scored(&run.scored_unlabeled(), false)?;
    let pairs: Vec<_> = rows.iter().map(ScoredSample::as_unlabeled).collect();
    let data = EncodedSet::unlabeled(&pairs, &inputs.featurizer);
    let val = inputs.encode_labeled(&inputs.val);
    let seed = seed::derive(inputs.rep_seed, &inputs.student_id(cfg));
    let mut model = Cdssm::new(inputs.featurizer.vocab.len(), cfg.student.cdssm, seed);
    let fit = train_student(&mut model, &data, &scores_of(&rows), &val, &cfg.student.mapping, &cfg.student.train, seed)?;
    create_dir(&run.checkpoints())?;
    model.to_checkpoint(VOCAB_FILE, &cfg.hash()).save(run.student())?;
    run.write_config(cfg)?;
    Ok(fit)
}

/// Fine-tunes the student on the scored labeled train rows.
pub fn finetune_student(cfg: &RunConfig, run: &RunDir) -> Result<FitReport> {
    let inputs = Inputs::load(cfg, run)?;
    let mut model = load_cdssm(&run.student())?;
    require(&run.scored_train())?;
    let rows = load_scored(&run.scored_train(), true)?;
    let labeled: Vec<LabeledSample> = rows.iter().filter_map(ScoredSample::as_labeled).collect();
    let y = finetune_targets(&scores_of(&rows), &cfg.student.mapping)?;
    let ft = cfg.finetune_config();
    let seed = seed::derive(inputs.rep_seed, &finetune_id(&inputs.student_id(cfg), &ft));
    let fit = finetune(&mut model, &inputs.encode_labeled(&labeled), &y, &inputs.encode_labeled(&inputs.val), &ft, &cfg.finetune.train, seed)?;
    model.to_checkpoint(VOCAB_FILE, &cfg.hash()).save(run.finetuned())?;
    run.write_config(cfg)?;
    Ok(fit)
}

/// Hyperparameters echoed into every pipeline report.
fn hyperparameter_tags(cfg: &RunConfig) -> BTreeMap<String, String> {
    let mut t = BTreeMap::new();
    t.insert("annotators".into(), ensemble_name(&Inputs::specs(cfg), &cfg.annotator));
    t.insert("annotator".into(), json(&cfg.annotator));
    t.insert("mapping".into(), cfg.student.mapping.to_string());
    t.insert("student".into(), json(&cfg.student));
    t.insert("finetune".into(), json(&cfg.finetune));
    t.insert("rho".into(), cfg.pipeline.rho.to_string());
    t.insert("validation_fraction".into(), cfg.pipeline.validation_fraction.to_string());
    t
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config sections serialize")
}

/// Evaluates whichever of the annotator ensemble, student and fine-tuned
/// model exist on the test set and writes `reports/pipeline.*`.
pub fn evaluate(cfg: &RunConfig, run: &RunDir) -> Result<SweepResult> {
    let inputs = Inputs::load(cfg, run)?;
    let test = inputs.encode_labeled(&inputs.data.test);
    let flags = test.binary_flags().expect("labeled");
    let cell = ensemble_name(&Inputs::specs(cfg), &cfg.annotator);
    let mut out = SweepResult::new("pipeline", "row");
    let mut push = |model: &str, scores: Vec<f64>| -> Result<()> {
        out.reports.push(MetricsReport {
            protocol: "pipeline".into(),
            cell: cell.clone(),
            axis_value: None,
            model: model.into(),
            replicate: 0,
            seed: inputs.rep_seed,
            roc_auc: roc_auc(&scores, &flags)?,
            pr_auc: pr_auc(&scores, &flags)?,
            sizes: inputs.sizes(),
            config_hash: cfg.hash(),
            tags: hyperparameter_tags(cfg),
        });
        Ok(())
    };
    if cfg.pipeline.annotators.iter().all(|&k| run.annotator(k).exists()) {
        let annotators = load_annotators(cfg, run)?;
        push("annotator", score_dataset(&annotators.iter().collect::<Vec<_>>(), &test)?)?;
    }
    for (name, path) in [("student", run.student()), ("ft", run.finetuned())] {
        if path.exists() {
            push(name, load_cdssm(&path)?.score(&test.pairs)?)?;
        }
    }
    if out.reports.is_empty() {
        return Err(Error::MissingArtifact(run.checkpoints()));
    }
    out.write(&run.reports())?;
    run.write_config(cfg)?;
    Ok(out)
}

/// Everything `pipeline` produced.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub annotators: Vec<AnnotatorOutcome>,
    pub student: FitReport,
    pub finetune: FitReport,
    pub result: SweepResult,
}

/// Generates data when `run.data` has none, then trains annotators, scores,
/// trains the student, fine-tunes and evaluates.
pub fn run_pipeline(cfg: &RunConfig, run: &RunDir) -> Result<PipelineOutcome> {
    cfg.validate()?;
    if !run.data.join(crate::corpus::TEST_FILE).exists() {
        gen_data(cfg, &run.data)?;
    }
    let annotators = train_annotators(cfg, run)?;
    score(cfg, run)?;
    let student = student(cfg, run)?;
    let finetune = finetune_student(cfg, run)?;
    let result = evaluate(cfg, run)?;
    Ok(PipelineOutcome { annotators, student, finetune, result })
}

/// Ranked listings for a query, using the fine-tuned model when present
/// and the student otherwise. The ad dictionary over the distinct unlabeled
/// listings is built on first use and rebuilt when the encoder changes.
pub fn recall(cfg: &RunConfig, run: &RunDir, query: &str, k: usize) -> Result<Vec<(Hit, crate::corpus::AdListing)>> {
    let path = if run.finetuned().exists() { run.finetuned() } else { run.student() };
    require(&path)?;
    let ckpt = Checkpoint::load(&path)?;
    let digest = checkpoint_digest(&ckpt)?;
    let model = Cdssm::from_checkpoint(&ckpt)?;
    require(&run.vocab())?;
    let featurizer = Featurizer::new(TrigramVocab::load(&run.vocab())?, cfg.featurize);
    let mut listings: Vec<crate::corpus::AdListing> = crate::corpus::load_unlabeled(
        &run.data.join(crate::corpus::DatasetKind::Unlabeled.file_name()),
        crate::corpus::DatasetKind::Unlabeled,
    )?
    .into_iter()
    .map(|p| p.listing)
    .collect();
    listings.sort();
    listings.dedup();
    let dict_path = run.dictionary();
    let dict = match dict_path.exists().then(|| VectorDictionary::load(&dict_path)).transpose()? {
        Some(d) if d.check_encoder(&digest).is_ok() && d.len() == listings.len() => d,
        _ => {
            let d = VectorDictionary::build(&model, &featurizer, &listings, &digest)?;
            d.save(&dict_path)?;
            d
        }
    };
    let q = model.encode(crate::models::Side::Query, &[&featurizer.query(query)])?;
    let hits = dict.top_k(&q[0], k)?;
    Ok(hits.into_iter().map(|h| (h.clone(), listings[h.id as usize].clone())).collect())
}
