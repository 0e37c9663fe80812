use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fastmatch::annotate::AnnotatorKind;
use fastmatch::config::RunConfig;
use fastmatch::distill::{FinetuneMode, MappingConfig};
use fastmatch::eval::{Protocol, Workbench};
use fastmatch::pipeline::{self, RunDir};
use fastmatch::{Category, Error};

const EXIT_USAGE: u8 = 2;

/// Weak-annotation distillation for query/ad relevance matching.
#[derive(Debug, Parser)]
#[command(name = "fastmatch", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, visible_alias = "spec")]
    config: Option<PathBuf>,
    /// Overrides `seed`; FASTMATCH_SEED does the same.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `artifact_dir`; FASTMATCH_ARTIFACT_DIR does the same.
    #[arg(long, global = true)]
    artifact_dir: Option<PathBuf>,
    /// Dataset directory, `<artifact_dir>/data` by default.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    GenData {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the annotators on the labeled train split.
    TrainAnnotator {
        /// Comma-separated annotator kinds, e.g. `dc,gbdt`.
        #[arg(long, value_delimiter = ',')]
        annotators: Vec<AnnotatorKind>,
    },
    /// Score the unlabeled set and labeled train rows with the annotators.
    Score,
    /// Train the student on the scored unlabeled set.
    TrainStudent {
        /// Target and weight mapping, e.g. `f2:g3`.
        #[arg(long)]
        mapping: Option<MappingConfig>,
    },
    /// Fine-tune the student on the labeled train rows.
    Finetune {
        #[arg(long)]
        mode: Option<FinetuneMode>,
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Evaluate the run's models on the test set.
    Eval,
    /// Run an evaluation protocol over several seeds.
    Sweep {
        /// baselines, mapping-grid, theta-sweep, rho-sweep or all.
        #[arg(long)]
        protocol: String,
        /// Overrides `protocol.seeds`.
        #[arg(long)]
        seeds: Option<usize>,
        /// Progress on stderr.
        #[arg(long)]
        verbose: bool,
    },
    /// Top-k listings for a query from the trained encoder.
    Recall {
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// gen-data (when needed), train-annotator, score, train-student,
    /// finetune and eval in one go.
    Pipeline,
}

fn exit_code(c: Category) -> u8 {
    match c {
        Category::Config => 3,
        Category::DataFormat => 4,
        Category::Runtime => 5,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("no configuration given (use --config <file>)".into()))?;
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_env()?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.artifact_dir {
        cfg.artifact_dir.clone_from(d);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::TrainAnnotator { annotators } if !annotators.is_empty() => cfg.pipeline.annotators.clone_from(annotators),
        Command::TrainStudent { mapping: Some(m) } => cfg.student.mapping = *m,
        Command::Finetune { mode, theta } => {
            if let Some(m) = mode {
                cfg.finetune.mode = *m;
            }
            if let Some(t) = theta {
                cfg.finetune.theta = *t;
            }
        }
        Command::Sweep { seeds: Some(n), .. } => cfg.protocol.seeds = *n,
        _ => {}
    }
    cfg.validate()?;
    let run = RunDir::new(&cfg.artifact_dir, cli.data.clone());

    match cli.command {
        Command::GenData { out } => {
            let out = out.unwrap_or_else(|| run.data.clone());
            let d = pipeline::gen_data(&cfg, &out)?;
            println!(
                "wrote {} labeled, {} unlabeled, {} clicked, {} test rows to {}",
                d.labeled.len(),
                d.unlabeled.len(),
                d.clicked.len(),
                d.test.len(),
                out.display()
            );
        }
        Command::TrainAnnotator { .. } => {
            for a in pipeline::train_annotators(&cfg, &run)? {
                println!("{}: validation roc_auc {:.4} -> {}", a.kind, a.validation_auc, a.path.display());
            }
        }
        Command::Score => {
            let (u, t) = pipeline::score(&cfg, &run)?;
            println!("wrote {} and {}", u.display(), t.display());
        }
        Command::TrainStudent { .. } => {
            let fit = pipeline::student(&cfg, &run)?;
            println!("student: best validation roc_auc {:.4} at epoch {} -> {}", fit.best_validation, fit.best_epoch, run.student().display());
        }
        Command::Finetune { .. } => {
            let fit = pipeline::finetune_student(&cfg, &run)?;
            println!("finetuned: best validation roc_auc {:.4} at epoch {} -> {}", fit.best_validation, fit.best_epoch, run.finetuned().display());
        }
        Command::Eval => print!("{}", pipeline::evaluate(&cfg, &run)?.render_table()),
        Command::Sweep { protocol, verbose, .. } => {
            let protocols = if protocol == "all" { Protocol::ALL.to_vec() } else { vec![protocol.parse()?] };
            let data = fastmatch::corpus::DataFiles::load(&run.data)?;
            run.write_config(&cfg)?;
            let mut w = Workbench::new(cfg, data)?;
            w.verbose = verbose;
            for p in protocols {
                let result = w.run(p)?;
                result.write(&run.reports())?;
                print!("{}", result.render_table());
            }
        }
        Command::Recall { query, k } => {
            for (rank, (hit, l)) in pipeline::recall(&cfg, &run, &query, k)?.into_iter().enumerate() {
                println!("{}\t{:.6}\t{}\t{}\t{}", rank + 1, hit.score, l.keyword, l.ad_title, l.lp_title);
            }
        }
        Command::Pipeline => {
            let out = pipeline::run_pipeline(&cfg, &run)?;
            print!("{}", out.result.render_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let c = e.category();
            eprintln!("error[{}]: {}", c.as_str(), e.to_string().replace('\n', " "));
            ExitCode::from(exit_code(c))
        }
    }
}
