//! Metrics, experiment protocols and reports.

mod metrics;
pub mod protocol;
pub mod report;

pub use metrics::{pr_auc, roc_auc};
pub use protocol::{Protocol, Workbench};
pub use report::{MetricsReport, Sizes, SummaryRow, SweepResult, Timing};
