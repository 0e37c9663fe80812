//! Experiment protocols over one corpus: baseline comparison, the
//! annotator/mapping grid, the θ sweep and the labeled-data ratio sweep.
//!
//! Every trained component has a string id such as
//! `r0/rho0.2/annotator/dc:joint`; its seed is derived from the replicate
//! seed and that id, so a component shared by several protocols is trained
//! once per [`Workbench`] and is identical wherever it appears.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;
use std::time::Instant;

use super::report::{MetricsReport, Sizes, SweepResult, Timing};
use super::{pr_auc, roc_auc};
use crate::annotate::{train_annotator, Annotator, AnnotatorConfig, AnnotatorSpec};
use crate::config::RunConfig;
use crate::corpus::{split_labeled, subsample, DataFiles, LabeledSample};
use crate::dataset::EncodedSet;
use crate::distill::{
    finetune, map_target, train_click_baseline, train_student, FinetuneConfig, FinetuneMode, MappingConfig,
};
use crate::error::{Error, Result};
use crate::models::{Cdssm, Featurizer};
use crate::seed;
use crate::train::FitReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Baselines,
    MappingGrid,
    ThetaSweep,
    RhoSweep,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [Self::Baselines, Self::MappingGrid, Self::ThetaSweep, Self::RhoSweep];

    pub fn axis(self) -> &'static str {
        match self {
            Self::Baselines => "row",
            Self::MappingGrid => "annotators/mapping",
            Self::ThetaSweep => "theta",
            Self::RhoSweep => "rho",
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| Error::config(format!("unknown protocol {s:?} (baselines, mapping-grid, theta-sweep, rho-sweep)")))
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Baselines => "baselines",
            Self::MappingGrid => "mapping-grid",
            Self::ThetaSweep => "theta-sweep",
            Self::RhoSweep => "rho-sweep",
        })
    }
}

/// Base seed of replicate `r`.
pub fn replicate_seed(base: u64, r: usize) -> u64 {
    seed::derive(base, &format!("replicate/{r}"))
}

/// Id prefix of everything trained on the `rho` share of replicate `r`.
pub fn context_id(r: usize, rho: f64) -> String {
    format!("r{r}/rho{rho}")
}

pub fn annotator_id(ctx: &str, spec: &AnnotatorSpec, cfg: &AnnotatorConfig) -> String {
    format!("{ctx}/annotator/{}", spec.resolved(&cfg.tasks))
}

pub fn ensemble_name(specs: &[AnnotatorSpec], cfg: &AnnotatorConfig) -> String {
    specs.iter().map(|s| s.resolved(&cfg.tasks)).collect::<Vec<_>>().join("+")
}

pub fn student_id(ctx: &str, ensemble: &str, mapping: &MappingConfig) -> String {
    format!("{ctx}/annotators/{ensemble}/student/{mapping}")
}

pub fn finetune_id(student: &str, ft: &FinetuneConfig) -> String {
    format!("{student}/ft/{}/{}", ft.mode, ft.theta)
}

/// Train and validation parts of the labeled set for one replicate; the
/// ratio `rho` thins the train part only, so early stopping always sees the
/// same validation rows.
pub fn labeled_split(labeled: &[LabeledSample], validation_fraction: f64, rho: f64, rep_seed: u64) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    let (train, val) = split_labeled(labeled, validation_fraction, seed::derive(rep_seed, "split"))?;
    let train = subsample(&train, rho, seed::derive(rep_seed, "subsample"))?;
    Ok((train, val))
}

/// Fine-tuning targets: the mapped annotation scores of the train rows.
pub fn finetune_targets(scores: &[f64], mapping: &MappingConfig) -> Result<Vec<f64>> {
    scores.iter().map(|&s| map_target(s, mapping)).collect()
}

fn fit_note(fit: &FitReport) -> String {
    format!(" (best epoch {} of {}, validation {:.4})", fit.best_epoch, fit.epochs.len(), fit.best_validation)
}

pub struct Split {
    pub train: EncodedSet,
    pub val: EncodedSet,
}

/// Ensemble scores of the unlabeled set and of the labeled train rows.
struct Scores {
    unlabeled: Vec<f64>,
    train: Vec<f64>,
}

/// One corpus, encoded once, with every trained component cached by id.
pub struct Workbench {
    cfg: RunConfig,
    hash: String,
    featurizer: Featurizer,
    labeled: Vec<LabeledSample>,
    unlabeled: EncodedSet,
    clicked: EncodedSet,
    test: EncodedSet,
    test_flags: Vec<bool>,
    splits: HashMap<String, Rc<Split>>,
    annotators: HashMap<String, Rc<Annotator>>,
    scores: HashMap<String, Rc<Scores>>,
    models: HashMap<String, Rc<Cdssm>>,
    timings: Vec<Timing>,
    /// Progress lines on stderr.
    pub verbose: bool,
}

struct Row<'a> {
    cell: String,
    axis_value: Option<f64>,
    model: &'a str,
    tags: &'a [(&'a str, String)],
}

impl Workbench {
    pub fn new(cfg: RunConfig, data: DataFiles) -> Result<Self> {
        cfg.validate()?;
        if data.test.is_empty() {
            return Err(Error::Precondition("protocols need a non-empty test set".into()));
        }
        let featurizer = Featurizer::new(data.vocab(), cfg.featurize);
        let test = EncodedSet::labeled(&data.test, &featurizer);
        let test_flags = test.binary_flags().expect("labeled");
        Ok(Self {
            hash: cfg.hash(),
            unlabeled: EncodedSet::unlabeled(&data.unlabeled, &featurizer),
            clicked: EncodedSet::unlabeled(&data.clicked, &featurizer),
            test,
            test_flags,
            labeled: data.labeled,
            featurizer,
            cfg,
            splits: HashMap::new(),
            annotators: HashMap::new(),
            scores: HashMap::new(),
            models: HashMap::new(),
            timings: Vec::new(),
            verbose: false,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    fn log(&self, msg: impl fmt::Display) {
        if self.verbose {
            eprintln!("{msg}");
        }
    }

    fn rep_seed(&self, r: usize) -> u64 {
        replicate_seed(self.cfg.seed, r)
    }

    fn vocab_size(&self) -> usize {
        self.featurizer.vocab.len()
    }

    pub fn split(&mut self, r: usize, rho: f64) -> Result<Rc<Split>> {
        let ctx = context_id(r, rho);
        if let Some(s) = self.splits.get(&ctx) {
            return Ok(Rc::clone(s));
        }
        let (train, val) = labeled_split(&self.labeled, self.cfg.pipeline.validation_fraction, rho, self.rep_seed(r))?;
        let split = Rc::new(Split {
            train: EncodedSet::labeled(&train, &self.featurizer),
            val: EncodedSet::labeled(&val, &self.featurizer),
        });
        self.splits.insert(ctx, Rc::clone(&split));
        Ok(split)
    }

    fn annotator_with(&mut self, r: usize, rho: f64, spec: &AnnotatorSpec, acfg: &AnnotatorConfig) -> Result<Rc<Annotator>> {
        let id = annotator_id(&context_id(r, rho), spec, acfg);
        if let Some(a) = self.annotators.get(&id) {
            return Ok(Rc::clone(a));
        }
        let split = self.split(r, rho)?;
        let mut cfg = acfg.clone();
        if let Some(t) = spec.task_set(&acfg.tasks) {
            cfg.tasks = t.to_string();
        }
        let t0 = Instant::now();
        let (a, fit) = train_annotator(spec.kind, self.vocab_size(), &split.train, &split.val, &cfg, seed::derive(self.rep_seed(r), &id))?;
        self.log(format_args!("{id}: trained in {:.1}s{}", t0.elapsed().as_secs_f64(), fit.as_ref().map(fit_note).unwrap_or_default()));
        let a = Rc::new(a);
        self.annotators.insert(id, Rc::clone(&a));
        Ok(a)
    }

    fn ensemble_scores(&mut self, r: usize, rho: f64, specs: &[AnnotatorSpec]) -> Result<Rc<Scores>> {
        let acfg = self.cfg.annotator.clone();
        let id = format!("{}/annotators/{}", context_id(r, rho), ensemble_name(specs, &acfg));
        if let Some(s) = self.scores.get(&id) {
            return Ok(Rc::clone(s));
        }
        let members = specs.iter().map(|s| self.annotator_with(r, rho, s, &acfg)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Annotator> = members.iter().map(Rc::as_ref).collect();
        let split = self.split(r, rho)?;
        let scores = Rc::new(Scores {
            unlabeled: crate::annotate::score_dataset(&refs, &self.unlabeled)?,
            train: crate::annotate::score_dataset(&refs, &split.train)?,
        });
        self.scores.insert(id, Rc::clone(&scores));
        Ok(scores)
    }

    fn ensemble_test_scores(&mut self, r: usize, rho: f64, specs: &[AnnotatorSpec]) -> Result<Vec<f64>> {
        let acfg = self.cfg.annotator.clone();
        let members = specs.iter().map(|s| self.annotator_with(r, rho, s, &acfg)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Annotator> = members.iter().map(Rc::as_ref).collect();
        crate::annotate::score_dataset(&refs, &self.test)
    }

    fn student(&mut self, r: usize, rho: f64, specs: &[AnnotatorSpec], mapping: &MappingConfig) -> Result<Rc<Cdssm>> {
        let id = student_id(&context_id(r, rho), &ensemble_name(specs, &self.cfg.annotator), mapping);
        if let Some(m) = self.models.get(&id) {
            return Ok(Rc::clone(m));
        }
        let scores = self.ensemble_scores(r, rho, specs)?;
        let split = self.split(r, rho)?;
        let seed = seed::derive(self.rep_seed(r), &id);
        let mut model = Cdssm::new(self.vocab_size(), self.cfg.student.cdssm, seed);
        let t0 = Instant::now();
        let fit = train_student(&mut model, &self.unlabeled, &scores.unlabeled, &split.val, mapping, &self.cfg.student.train, seed)?;
        self.log(format_args!("{id}: trained in {:.1}s{}", t0.elapsed().as_secs_f64(), fit_note(&fit)));
        let model = Rc::new(model);
        self.models.insert(id, Rc::clone(&model));
        Ok(model)
    }

    fn finetuned(&mut self, r: usize, rho: f64, specs: &[AnnotatorSpec], mapping: &MappingConfig, ft: &FinetuneConfig) -> Result<Rc<Cdssm>> {
        let sid = student_id(&context_id(r, rho), &ensemble_name(specs, &self.cfg.annotator), mapping);
        let id = finetune_id(&sid, ft);
        if let Some(m) = self.models.get(&id) {
            return Ok(Rc::clone(m));
        }
        let student = self.student(r, rho, specs, mapping)?;
        let scores = self.ensemble_scores(r, rho, specs)?;
        let split = self.split(r, rho)?;
        let y = finetune_targets(&scores.train, mapping)?;
        let mut model = (*student).clone();
        let t0 = Instant::now();
        let fit = finetune(&mut model, &split.train, &y, &split.val, ft, &self.cfg.finetune.train, seed::derive(self.rep_seed(r), &id))?;
        self.log(format_args!("{id}: trained in {:.1}s{}", t0.elapsed().as_secs_f64(), fit_note(&fit)));
        let model = Rc::new(model);
        self.models.insert(id, Rc::clone(&model));
        Ok(model)
    }

    /// CDSSM trained from scratch on the labeled train rows alone.
    fn labeled_baseline(&mut self, r: usize, rho: f64) -> Result<Rc<Cdssm>> {
        let id = format!("{}/labeled", context_id(r, rho));
        if let Some(m) = self.models.get(&id) {
            return Ok(Rc::clone(m));
        }
        let split = self.split(r, rho)?;
        let seed = seed::derive(self.rep_seed(r), &id);
        let mut model = Cdssm::new(self.vocab_size(), self.cfg.student.cdssm, seed);
        let hard = FinetuneConfig { mode: FinetuneMode::Hard, theta: self.cfg.finetune.theta };
        let ignored = vec![0.0; split.train.len()];
        let t0 = Instant::now();
        let fit = finetune(&mut model, &split.train, &ignored, &split.val, &hard, &self.cfg.finetune.train, seed)?;
        self.log(format_args!("{id}: trained in {:.1}s{}", t0.elapsed().as_secs_f64(), fit_note(&fit)));
        let model = Rc::new(model);
        self.models.insert(id, Rc::clone(&model));
        Ok(model)
    }

    /// CDSSM trained on the click log with in-batch negatives.
    fn click_baseline(&mut self, r: usize) -> Result<Rc<Cdssm>> {
        let id = format!("r{r}/click");
        if let Some(m) = self.models.get(&id) {
            return Ok(Rc::clone(m));
        }
        let split = self.split(r, 1.0)?;
        let seed = seed::derive(self.rep_seed(r), &id);
        let mut model = Cdssm::new(self.vocab_size(), self.cfg.student.cdssm, seed);
        let t0 = Instant::now();
        let fit = train_click_baseline(&mut model, &self.clicked, &split.val, &self.cfg.student.train, seed)?;
        self.log(format_args!("{id}: trained in {:.1}s{}", t0.elapsed().as_secs_f64(), fit_note(&fit)));
        let model = Rc::new(model);
        self.models.insert(id, Rc::clone(&model));
        Ok(model)
    }

    fn sizes(&mut self, r: usize, rho: f64) -> Result<Sizes> {
        let split = self.split(r, rho)?;
        Ok(Sizes {
            train: split.train.len(),
            validation: split.val.len(),
            unlabeled: self.unlabeled.len(),
            clicked: self.clicked.len(),
            test: self.test.len(),
        })
    }

    /// Scores the test set and records one report. `produce` returns the
    /// test scores; its wall-clock time goes to the timings.
    fn record(
        &mut self,
        out: &mut SweepResult,
        (r, rho): (usize, f64),
        row: Row<'_>,
        produce: impl FnOnce(&mut Self) -> Result<Vec<f64>>,
    ) -> Result<()> {
        let t0 = Instant::now();
        let scores = produce(self)?;
        let seconds = t0.elapsed().as_secs_f64();
        let report = MetricsReport {
            protocol: out.protocol.clone(),
            cell: row.cell.clone(),
            axis_value: row.axis_value,
            model: row.model.to_string(),
            replicate: r,
            seed: self.rep_seed(r),
            roc_auc: roc_auc(&scores, &self.test_flags)?,
            pr_auc: pr_auc(&scores, &self.test_flags)?,
            sizes: self.sizes(r, rho)?,
            config_hash: self.hash.clone(),
            tags: row.tags.iter().map(|(k, v)| (k.to_string(), v.clone())).collect::<BTreeMap<_, _>>(),
        };
        self.log(format_args!(
            "{} r{r} {} {}: roc {:.4} pr {:.4}",
            out.protocol, report.cell, report.model, report.roc_auc, report.pr_auc
        ));
        out.timings.push(Timing { cell: row.cell, model: row.model.to_string(), replicate: r, seconds });
        out.reports.push(report);
        Ok(())
    }

    fn cdssm_scores(&self, m: &Cdssm) -> Result<Vec<f64>> {
        m.score(&self.test.pairs)
    }

    fn pipeline_specs(&self) -> Vec<AnnotatorSpec> {
        self.cfg.pipeline.annotators.iter().map(|&kind| AnnotatorSpec { kind, tasks: None }).collect()
    }

    /// Runs `protocol` over every replicate.
    pub fn run(&mut self, protocol: Protocol) -> Result<SweepResult> {
        let mut out = SweepResult::new(&protocol.to_string(), protocol.axis());
        for r in 0..self.cfg.protocol.seeds {
            match protocol {
                Protocol::Baselines => self.baselines(r, &mut out)?,
                Protocol::MappingGrid => self.mapping_grid(r, &mut out)?,
                Protocol::ThetaSweep => self.theta_sweep(r, &mut out)?,
                Protocol::RhoSweep => self.rho_sweep(r, &mut out)?,
            }
        }
        self.timings.extend(out.timings.iter().cloned());
        Ok(out)
    }

    fn baselines(&mut self, r: usize, out: &mut SweepResult) -> Result<()> {
        let rho = self.cfg.pipeline.rho;
        let mapping = self.cfg.student.mapping;
        let ft = self.cfg.finetune_config();
        let ctx = (r, rho);
        let none: &[(&str, String)] = &[];
        self.record(out, (r, 1.0), Row { cell: "click".into(), axis_value: None, model: "cdssm-click", tags: none }, |w| {
            let m = w.click_baseline(r)?;
            w.cdssm_scores(&m)
        })?;
        self.record(out, ctx, Row { cell: "labeled".into(), axis_value: None, model: "cdssm-labeled", tags: none }, |w| {
            let m = w.labeled_baseline(r, rho)?;
            w.cdssm_scores(&m)
        })?;
        let dc_only = vec![AnnotatorSpec { kind: crate::annotate::AnnotatorKind::Dc, tasks: None }];
        let mut ensembles = vec![dc_only];
        let pipeline = self.pipeline_specs();
        if !ensembles.contains(&pipeline) {
            ensembles.push(pipeline);
        }
        for specs in ensembles {
            let name = ensemble_name(&specs, &self.cfg.annotator);
            let tags = [("mapping", mapping.to_string()), ("finetune", ft.mode.to_string()), ("theta", ft.theta.to_string())];
            self.record(out, ctx, Row { cell: name.clone(), axis_value: None, model: "annotator", tags: none }, |w| {
                w.ensemble_test_scores(r, rho, &specs)
            })?;
            self.record(out, ctx, Row { cell: name.clone(), axis_value: None, model: "student", tags: &tags[..1] }, |w| {
                let m = w.student(r, rho, &specs, &mapping)?;
                w.cdssm_scores(&m)
            })?;
            self.record(out, ctx, Row { cell: name, axis_value: None, model: "ft", tags: &tags }, |w| {
                let m = w.finetuned(r, rho, &specs, &mapping, &ft)?;
                w.cdssm_scores(&m)
            })?;
        }
        Ok(())
    }

    fn mapping_grid(&mut self, r: usize, out: &mut SweepResult) -> Result<()> {
        let rho = self.cfg.pipeline.rho;
        let ft = self.cfg.finetune_config();
        let grid = self.cfg.protocol.grid_annotators.clone();
        let mappings = self.cfg.protocol.mappings.iter().map(|m| m.parse()).collect::<Result<Vec<MappingConfig>>>()?;
        for ens in grid {
            let specs = AnnotatorSpec::parse_ensemble(&ens)?;
            let name = ensemble_name(&specs, &self.cfg.annotator);
            self.record(out, (r, rho), Row { cell: name.clone(), axis_value: None, model: "annotator", tags: &[] }, |w| {
                w.ensemble_test_scores(r, rho, &specs)
            })?;
            for mapping in &mappings {
                let cell = format!("{name}/{mapping}");
                let tags = [("finetune", ft.mode.to_string()), ("theta", ft.theta.to_string())];
                self.record(out, (r, rho), Row { cell: cell.clone(), axis_value: None, model: "student", tags: &[] }, |w| {
                    let m = w.student(r, rho, &specs, mapping)?;
                    w.cdssm_scores(&m)
                })?;
                self.record(out, (r, rho), Row { cell, axis_value: None, model: "ft", tags: &tags }, |w| {
                    let m = w.finetuned(r, rho, &specs, mapping, &ft)?;
                    w.cdssm_scores(&m)
                })?;
            }
        }
        Ok(())
    }

    fn theta_sweep(&mut self, r: usize, out: &mut SweepResult) -> Result<()> {
        let rho = self.cfg.pipeline.rho;
        let mapping = self.cfg.student.mapping;
        let specs = self.pipeline_specs();
        let theta = self.cfg.finetune.theta;
        let mut thetas = self.cfg.protocol.thetas.clone();
        thetas.sort_by(f64::total_cmp);
        thetas.dedup();
        let mut rows: Vec<(String, Option<f64>, FinetuneConfig)> = vec![
            ("hard".into(), None, FinetuneConfig { mode: FinetuneMode::Hard, theta }),
            ("soft".into(), None, FinetuneConfig { mode: FinetuneMode::Soft, theta }),
        ];
        rows.extend(thetas.into_iter().map(|t| (t.to_string(), Some(t), FinetuneConfig { mode: FinetuneMode::LabelAware, theta: t })));
        for (cell, axis_value, ft) in rows {
            let tags = [("finetune", ft.mode.to_string()), ("mapping", mapping.to_string())];
            self.record(out, (r, rho), Row { cell, axis_value, model: "ft", tags: &tags }, |w| {
                let m = w.finetuned(r, rho, &specs, &mapping, &ft)?;
                w.cdssm_scores(&m)
            })?;
        }
        Ok(())
    }

    fn rho_sweep(&mut self, r: usize, out: &mut SweepResult) -> Result<()> {
        let mapping = self.cfg.student.mapping;
        let ft = self.cfg.finetune_config();
        let specs = self.pipeline_specs();
        let mut rhos = self.cfg.protocol.rhos.clone();
        rhos.sort_by(f64::total_cmp);
        rhos.dedup();
        for rho in rhos {
            let tags = [("finetune", ft.mode.to_string()), ("theta", ft.theta.to_string()), ("mapping", mapping.to_string())];
            self.record(out, (r, rho), Row { cell: rho.to_string(), axis_value: Some(rho), model: "labeled", tags: &[] }, |w| {
                let m = w.labeled_baseline(r, rho)?;
                w.cdssm_scores(&m)
            })?;
            self.record(out, (r, rho), Row { cell: rho.to_string(), axis_value: Some(rho), model: "pipeline", tags: &tags }, |w| {
                let m = w.finetuned(r, rho, &specs, &mapping, &ft)?;
                w.cdssm_scores(&m)
            })?;
        }
        Ok(())
    }

    /// Wall-clock records of every protocol run so far.
    pub fn timings(&self) -> &[Timing] {
        &self.timings
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusSpec};
    use crate::models::{CdssmConfig, DeepCrossingConfig};
    use crate::train::TrainConfig;

    fn tiny() -> (RunConfig, DataFiles) {
        let spec = CorpusSpec {
            n_intents: 40,
            vocab_size: 100,
            n_labeled: 300,
            n_unlabeled: 300,
            n_clicked: 200,
            n_test: 200,
            click_noise_rate: 0.2,
            seed: 3,
        };
        let mut cfg = RunConfig::new(spec.clone());
        let quick = TrainConfig { epochs: 1, batch_size: 32, learning_rate: 0.05, momentum: 0.9, patience: 1, min_steps: 0 };
        cfg.annotator.train = quick.clone();
        cfg.annotator.dc = DeepCrossingConfig { embed_dim: 8, width: 16, residual_units: 1, crossing: true };
        cfg.annotator.gbdt.n_trees = 5;
        cfg.student.cdssm = CdssmConfig { conv_channels: 16, semantic_dim: 8 };
        cfg.student.train = quick.clone();
        cfg.finetune.train = quick;
        cfg.protocol.seeds = 1;
        cfg.protocol.rhos = vec![0.5, 0.2];
        cfg.protocol.thetas = vec![1.0, 0.5];
        cfg.protocol.mappings = vec!["f2:g3".into()];
        cfg.protocol.grid_annotators = vec!["dc:single".into(), "gbdt".into()];
        (cfg, generate_corpus(&spec).unwrap().into())
    }

    #[test]
    fn protocol_names_round_trip() {
        for p in Protocol::ALL {
            assert_eq!(p.to_string().parse::<Protocol>().unwrap(), p);
        }
        assert!(matches!("nope".parse::<Protocol>(), Err(Error::Config(_))));
    }

    #[test]
    fn cell_layouts_and_sharing() {
        let (cfg, data) = tiny();
        let mut w = Workbench::new(cfg, data).unwrap();
        let theta = w.run(Protocol::ThetaSweep).unwrap();
        assert_eq!(theta.cells(), ["hard", "soft", "0.5", "1"]);
        let rho = w.run(Protocol::RhoSweep).unwrap();
        assert_eq!(rho.cells(), ["0.2", "0.5"]);
        assert_eq!(rho.reports[0].sizes.train, 54);
        let base = w.run(Protocol::Baselines).unwrap();
        let models: Vec<(&str, &str)> = base.reports.iter().map(|r| (r.cell.as_str(), r.model.as_str())).collect();
        assert_eq!(models[..2], [("click", "cdssm-click"), ("labeled", "cdssm-labeled")]);
        assert_eq!(models.len(), 8);
        // the baselines' fine-tuned pipeline is the θ-sweep's θ=0.5 row
        let ft = base.reports.iter().find(|r| r.cell == "dc:joint+gbdt" && r.model == "ft").unwrap();
        assert_eq!(ft.roc_auc, theta.reports[2].roc_auc);
        let grid = w.run(Protocol::MappingGrid).unwrap();
        assert_eq!(grid.cells(), ["dc:single", "dc:single/f2:g3", "gbdt", "gbdt/f2:g3"]);
    }

    #[test]
    fn reruns_are_identical() {
        let (cfg, data) = tiny();
        let a = Workbench::new(cfg.clone(), data.clone()).unwrap().run(Protocol::ThetaSweep).unwrap();
        let b = Workbench::new(cfg, data).unwrap().run(Protocol::ThetaSweep).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
    }
}
