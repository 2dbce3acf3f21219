//! Segmentation metrics, summary statistics, t-tests and zonal ROI reports.

pub mod metrics;
pub mod report;
pub mod stats;

pub use metrics::{boundary, dice, evaluate, hausdorff_mm, sen_spc, HdMode, MetricsRow};
pub use report::{tabulate, tabulate_cohort, Tabulation, ZoneStats};
pub use stats::{aggregate, paired_t, welch_t, Summary, TTestResult, TestKind, ZoneSummary};
