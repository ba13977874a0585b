//! Metrics, scenario buckets and result tables.

mod bucket;
pub mod metrics;
mod plot;
mod report;

pub use bucket::{bucket, BucketSpec, Covariate, Level};
pub use metrics::{hellinger, mape, mape_with_exclusions, nrmse, std_error, MAPE_EPSILON};
pub use plot::PlotSeries;
pub use report::{aggregate, evaluate, DirectionMetrics, Evaluation, MetricRow, RecordEvaluation, TABLE_HEADER};

#[cfg(test)]
mod tests;
