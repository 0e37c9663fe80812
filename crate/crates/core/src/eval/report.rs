//! Metric records, seed-averaged summaries and their on-disk forms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRIC_NOTE: &str = "roc_auc counts tied pairs 1/2; pr_auc is average precision with tied scores admitted as one step";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sizes {
    pub train: usize,
    pub validation: usize,
    pub unlabeled: usize,
    pub clicked: usize,
    pub test: usize,
}

/// Test-set metrics of one model in one protocol cell and replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: String,
    pub cell: String,
    /// Numeric position on the sweep axis, when the axis is numeric.
    pub axis_value: Option<f64>,
    pub model: String,
    pub replicate: usize,
    pub seed: u64,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub sizes: Sizes,
    pub config_hash: String,
    pub tags: BTreeMap<String, String>,
}

/// Wall-clock seconds spent producing one report. Kept apart from the
/// reports so that those stay byte-identical across reruns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub cell: String,
    pub model: String,
    pub replicate: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: String,
    pub axis_value: Option<f64>,
    pub model: String,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub replicates: usize,
}

/// All reports of one protocol run, cells in axis order.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub protocol: String,
    pub axis: String,
    pub reports: Vec<MetricsReport>,
    pub timings: Vec<Timing>,
}

impl SweepResult {
    pub fn new(protocol: &str, axis: &str) -> Self {
        Self { protocol: protocol.into(), axis: axis.into(), reports: Vec::new(), timings: Vec::new() }
    }

    /// Distinct cells in first-seen order.
    pub fn cells(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.reports {
            if !out.contains(&r.cell.as_str()) {
                out.push(&r.cell);
            }
        }
        out
    }

    /// Replicate means per (cell, model), in first-seen order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows: Vec<SummaryRow> = Vec::new();
        for r in &self.reports {
            match rows.iter_mut().find(|s| s.cell == r.cell && s.model == r.model) {
                Some(s) => {
                    s.roc_auc += r.roc_auc;
                    s.pr_auc += r.pr_auc;
                    s.replicates += 1;
                }
                None => rows.push(SummaryRow {
                    cell: r.cell.clone(),
                    axis_value: r.axis_value,
                    model: r.model.clone(),
                    roc_auc: r.roc_auc,
                    pr_auc: r.pr_auc,
                    replicates: 1,
                }),
            }
        }
        for s in &mut rows {
            s.roc_auc /= s.replicates as f64;
            s.pr_auc /= s.replicates as f64;
        }
        rows
    }

    /// Seed-averaged ROC AUC of `model` in `cell`.
    pub fn mean_roc(&self, cell: &str, model: &str) -> Option<f64> {
        self.summary().into_iter().find(|s| s.cell == cell && s.model == model).map(|s| s.roc_auc)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.reports {
            out.push_str(&serde_json::to_string(r).expect("reports serialize"));
            out.push('\n');
        }
        out
    }

    pub fn render_table(&self) -> String {
        let rows = self.summary();
        let cell_w = rows.iter().map(|r| r.cell.len()).chain([self.axis.len()]).max().unwrap_or(0);
        let model_w = rows.iter().map(|r| r.model.len()).chain([5]).max().unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(out, "# {} ({})", self.protocol, METRIC_NOTE);
        let _ = writeln!(out, "{:cell_w$}  {:model_w$}  {:>8}  {:>8}  {:>4}", self.axis, "model", "roc_auc", "pr_auc", "n");
        for r in rows {
            let _ = writeln!(
                out,
                "{:cell_w$}  {:model_w$}  {:>8.4}  {:>8.4}  {:>4}",
                r.cell, r.model, r.roc_auc, r.pr_auc, r.replicates
            );
        }
        out
    }

    fn timings_tsv(&self) -> String {
        let mut out = String::from("cell\tmodel\treplicate\tseconds\n");
        for t in &self.timings {
            let _ = writeln!(out, "{}\t{}\t{}\t{:.3}", t.cell, t.model, t.replicate, t.seconds);
        }
        out
    }

    /// Two-column `axis_value roc_auc` series, one per model, for models
    /// that appear in cells with a numeric axis value.
    pub fn curves(&self) -> BTreeMap<String, String> {
        let mut out: BTreeMap<String, String> = BTreeMap::new();
        for s in self.summary() {
            if let Some(x) = s.axis_value {
                let body = out.entry(s.model.clone()).or_insert_with(|| format!("# {} roc_auc\n", self.axis));
                let _ = writeln!(body, "{x} {:.6}", s.roc_auc);
            }
        }
        out
    }

    /// Writes `<protocol>.jsonl`, `<protocol>.txt`, `<protocol>.timings.tsv`
    /// and `<protocol>.<model>.dat` per curve under `dir`; returns the paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = vec![
            (dir.join(format!("{}.jsonl", self.protocol)), self.to_jsonl()),
            (dir.join(format!("{}.txt", self.protocol)), self.render_table()),
            (dir.join(format!("{}.timings.tsv", self.protocol)), self.timings_tsv()),
        ];
        for (model, body) in self.curves() {
            files.push((dir.join(format!("{}.{}.dat", self.protocol, model.replace(['/', ' '], "_"))), body));
        }
        for (path, body) in &files {
            std::fs::write(path, body).map_err(|e| Error::io(path, e))?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }

    /// Reads reports back from a `.jsonl` file.
    pub fn read_reports(path: &Path) -> Result<Vec<MetricsReport>> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        text.lines()
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str(line).map_err(|e| Error::Format {
                    path: path.to_path_buf(),
                    line: i as u64 + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }
}
