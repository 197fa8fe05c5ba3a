//! Attack-suite evaluation, score normalization and aggregate statistics.

pub mod evaluate;
pub mod report;
pub mod rundb;
pub mod stats;

pub use evaluate::{evaluate, RunScores, EVAL_SEED_BASE};
pub use report::{aggregate, load_table, method_family, select_best_lambda, AggregateReport, Cell, GroupBy, ReportRow, TableRow};
pub use rundb::{append_runs, load_runs};
pub use stats::{bootstrap_ci, iqm, mean, median, normalize_score, percent_change, std_dev, BootstrapSpec, Statistic};
