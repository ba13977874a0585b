//! Per-record scoring, bucket aggregation and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bucket::{BucketSpec, Level};
use super::metrics::{hellinger, mape_with_exclusions, nrmse, std_error};
use super::plot::PlotSeries;
use crate::error::{Error, Result};
use crate::graph::{Covariates, DatasetRecord, Matrix, MASKED_PHASES};
use crate::model::{Prediction, Predictor};
use crate::sim::Direction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub mape: f64,
    pub std: f64,
    pub hld: f64,
    pub nrmse: f64,
}

impl DirectionMetrics {
    pub fn compute(actual: &[f64], predicted: &[f64], sigma_true: f64, sigma_pred: f64) -> Result<(Self, usize)> {
        let (mape, excluded) = mape_with_exclusions(actual, predicted)?;
        Ok((
            Self {
                mape,
                std: std_error(sigma_true, sigma_pred),
                hld: hellinger(actual, predicted)?,
                nrmse: nrmse(actual, predicted)?,
            },
            excluded,
        ))
    }

    /// Arithmetic mean, or `None` for an empty slice.
    pub fn mean(items: &[DirectionMetrics]) -> Option<Self> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let avg = |f: fn(&DirectionMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Some(Self {
            mape: avg(|m| m.mape),
            std: avg(|m| m.std),
            hld: avg(|m| m.hld),
            nrmse: avg(|m| m.nrmse),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEvaluation {
    pub id: String,
    pub covariates: Covariates,
    pub actual_mu: [f64; 2],
    pub actual_sigma: [f64; 2],
    pub predicted_mu: [f64; 2],
    pub predicted_sigma: [f64; 2],
    pub metrics: [DirectionMetrics; 2],
    /// Bins left out of MAPE because the true density is zero.
    pub mape_excluded: [usize; 2],
    pub supervision: Matrix,
    pub imputed: Option<Matrix>,
}

impl RecordEvaluation {
    pub fn score(record: &DatasetRecord, prediction: &Prediction) -> Result<Self> {
        let mut metrics = Vec::with_capacity(2);
        let mut excluded = [0; 2];
        for d in Direction::BOTH {
            let i = d.index();
            let target = record.target.direction(i);
            let (m, ex) =
                DirectionMetrics::compute(&target.pdf, &prediction.pdf(i), target.sigma, prediction.sigma[i])
                    .map_err(|e| Error::Data(format!("record {}: {d:?}: {e}", record.id)))?;
            metrics.push(m);
            excluded[i] = ex;
        }
        log::debug!(
            "{}: MAPE excluded {} east and {} west bins",
            record.id,
            excluded[0],
            excluded[1]
        );
        Ok(Self {
            id: record.id.clone(),
            covariates: record.covariates.clone(),
            actual_mu: [record.target.east.mu, record.target.west.mu],
            actual_sigma: [record.target.east.sigma, record.target.west.sigma],
            predicted_mu: prediction.mu,
            predicted_sigma: prediction.sigma,
            metrics: [metrics[0], metrics[1]],
            mape_excluded: excluded,
            supervision: record.supervision.clone(),
            imputed: prediction.imputed.clone(),
        })
    }

    pub fn plot_series(&self) -> PlotSeries {
        PlotSeries::new(self.id.clone(), self.actual_mu, self.actual_sigma, self.predicted_mu, self.predicted_sigma)
    }
}

/// One line of the metric table. Metrics are `None` for empty buckets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub experiment: String,
    pub level: Level,
    /// Records per direction in this bucket.
    pub count: [usize; 2],
    pub east: Option<DirectionMetrics>,
    pub west: Option<DirectionMetrics>,
    /// Mean over every (record, direction) pair in the bucket.
    pub combined: Option<DirectionMetrics>,
}

impl MetricRow {
    fn from_pairs(experiment: &str, level: Level, east: Vec<DirectionMetrics>, west: Vec<DirectionMetrics>) -> Self {
        let both: Vec<DirectionMetrics> = east.iter().chain(&west).copied().collect();
        Self {
            experiment: experiment.to_string(),
            level,
            count: [east.len(), west.len()],
            east: DirectionMetrics::mean(&east),
            west: DirectionMetrics::mean(&west),
            combined: DirectionMetrics::mean(&both),
        }
    }
}

pub const TABLE_HEADER: &str = "experiment\tlevel\tn_east\tn_west\t\
mape_east\tmape_west\tmape\tstd_east\tstd_west\tstd\t\
hld_east\thld_west\thld\tnrmse_east\tnrmse_west\tnrmse";

/// Bucket rows for every covariate followed by the overall Total row.
pub fn aggregate(records: &[RecordEvaluation]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for spec in BucketSpec::ALL {
        for level in Level::BUCKETS {
            let pick = |d: Direction| -> Vec<DirectionMetrics> {
                records
                    .iter()
                    .filter(|r| spec.level_of(&r.covariates, d) == level)
                    .map(|r| r.metrics[d.index()])
                    .collect()
            };
            rows.push(MetricRow::from_pairs(
                spec.covariate.name(),
                level,
                pick(Direction::East),
                pick(Direction::West),
            ));
        }
    }
    rows.push(MetricRow::from_pairs(
        "overall",
        Level::Total,
        records.iter().map(|r| r.metrics[0]).collect(),
        records.iter().map(|r| r.metrics[1]).collect(),
    ));
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub predictor: String,
    pub records: Vec<RecordEvaluation>,
    pub rows: Vec<MetricRow>,
}

const PREDICT_CHUNK: usize = 64;

/// Scores `predictor` on `records` (normally the test split).
pub fn evaluate(predictor: &dyn Predictor, records: &[&DatasetRecord]) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(Error::InsufficientData("evaluation needs at least one record".into()));
    }
    let mut predictions = Vec::with_capacity(records.len());
    for chunk in records.chunks(PREDICT_CHUNK) {
        predictions.extend(predictor.predict(chunk)?);
    }
    if predictions.len() != records.len() {
        return Err(Error::Data(format!(
            "{} returned {} predictions for {} records",
            predictor.name(),
            predictions.len(),
            records.len()
        )));
    }
    let scored = records
        .par_iter()
        .zip(&predictions)
        .map(|(r, p)| RecordEvaluation::score(r, p))
        .collect::<Result<Vec<_>>>()?;
    let rows = aggregate(&scored);
    Ok(Evaluation {
        predictor: predictor.name().to_string(),
        records: scored,
        rows,
    })
}

fn cell(out: &mut String, v: Option<f64>) {
    match v {
        Some(v) => write!(out, "\t{v:.6}").unwrap(),
        None => out.push('\t'),
    }
}

impl Evaluation {
    pub fn total(&self) -> &MetricRow {
        self.rows.last().expect("aggregate always emits a Total row")
    }

    pub fn table_tsv(&self) -> String {
        let mut out = String::from(TABLE_HEADER);
        out.push('\n');
        for r in &self.rows {
            write!(out, "{}\t{}\t{}\t{}", r.experiment, r.level, r.count[0], r.count[1]).unwrap();
            let metric = |f: fn(&DirectionMetrics) -> f64| [r.east.map(|m| f(&m)), r.west.map(|m| f(&m)), r.combined.map(|m| f(&m))];
            for f in [
                (|m: &DirectionMetrics| m.mape) as fn(&DirectionMetrics) -> f64,
                |m| m.std,
                |m| m.hld,
                |m| m.nrmse,
            ] {
                for v in metric(f) {
                    cell(&mut out, v);
                }
            }
            out.push('\n');
        }
        out
    }

    /// Per-record metrics, one line per record.
    pub fn records_tsv(&self) -> String {
        let mut out = String::from(
            "id\tmu_east\tmu_east_pred\tsigma_east\tsigma_east_pred\tmu_west\tmu_west_pred\tsigma_west\tsigma_west_pred\t\
mape_east\tmape_west\tstd_east\tstd_west\thld_east\thld_west\tnrmse_east\tnrmse_west\tmape_excluded_east\tmape_excluded_west\n",
        );
        for r in &self.records {
            write!(out, "{}", r.id).unwrap();
            for d in 0..2 {
                for v in [r.actual_mu[d], r.predicted_mu[d], r.actual_sigma[d], r.predicted_sigma[d]] {
                    write!(out, "\t{v:.6}").unwrap();
                }
            }
            let [e, w] = r.metrics;
            for (a, b) in [(e.mape, w.mape), (e.std, w.std), (e.hld, w.hld), (e.nrmse, w.nrmse)] {
                write!(out, "\t{a:.6}\t{b:.6}").unwrap();
            }
            writeln!(out, "\t{}\t{}", r.mape_excluded[0], r.mape_excluded[1]).unwrap();
        }
        out
    }

    /// Actual vs imputed counts for every masked cell; empty when the
    /// predictor does not impute.
    pub fn imputation_tsv(&self) -> String {
        let mut out = String::from("id\tintersection\tphase\tactual\tpredicted\n");
        for r in &self.records {
            let Some(imp) = &r.imputed else { continue };
            for k in 0..r.supervision.rows {
                for (c, phase) in MASKED_PHASES.iter().enumerate() {
                    writeln!(out, "{}\t{k}\t{phase}\t{}\t{:.6}", r.id, r.supervision.get(k, c), imp.get(k, c)).unwrap();
                }
            }
        }
        out
    }

    /// Writes `metrics.tsv`, `records.tsv`, `imputation.tsv` and one curve
    /// file pair per record under `plots/`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let plots = dir.join("plots");
        fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
        let put = |path: &Path, text: &str| fs::write(path, text).map_err(|e| Error::io(path, e));
        put(&dir.join("metrics.tsv"), &self.table_tsv())?;
        put(&dir.join("records.tsv"), &self.records_tsv())?;
        put(&dir.join("imputation.tsv"), &self.imputation_tsv())?;
        for r in &self.records {
            let series = r.plot_series();
            let stem = series.file_stem();
            put(&plots.join(format!("{stem}.tsv")), &series.to_tsv())?;
            put(&plots.join(format!("{stem}.svg")), &series.to_svg())?;
        }
        Ok(())
    }
}
