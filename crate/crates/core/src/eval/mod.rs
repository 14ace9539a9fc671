//! Metrics, partitioning, binning, autocorrelation and reports.

pub mod acf;
pub mod bins;
pub mod methods;
pub mod metrics;
pub mod missing;
pub mod report;
pub mod split;

pub use acf::acf;
pub use bins::{step_count_bin, step_count_bin_breakdown, StepBinBreakdown, StepBinRow};
pub use methods::{run_method, EvalTask, MethodConfig, MethodRun, MethodSpec};
pub use metrics::{ci95, metrics, participant_maes, Metrics};
pub use missing::{bin_by_missing_rate, missing_rate, missing_rate_bin, participant_missing_bins};
pub use report::{build_report, BinSummary, EvalReport, MethodSummary};
pub use split::{stratified_folds, stratified_split, Part, Proportions, StratifiedSplit, DEFAULT_PROPORTIONS};
