//! Input and target scaling fitted on the training split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DatasetRecord, Matrix};

/// Column-wise `(v - mean) / scale`. Columns with no spread keep scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(cols: usize) -> Self {
        Self {
            mean: vec![0.0; cols],
            scale: vec![1.0; cols],
        }
    }

    pub fn fit<'a>(cols: usize, parts: impl IntoIterator<Item = &'a Matrix>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; cols];
        let mut sq = vec![0.0; cols];
        for m in parts {
            if m.cols != cols {
                return Err(Error::Data(format!("expected {cols} feature columns, got {}", m.cols)));
            }
            for r in 0..m.rows {
                for (c, v) in m.row(r).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += m.rows;
        }
        if n == 0 {
            return Ok(Self::identity(cols));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / nf - m * m).max(0.0).sqrt();
                if sd > 1e-9 * m.abs().max(1.0) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for r in 0..m.rows {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.scale[c];
            }
        }
        out
    }

    pub fn invert(&self, col: usize, z: f64) -> f64 {
        self.mean[col] + self.scale[col] * z
    }

    pub fn forward(&self, col: usize, v: f64) -> f64 {
        (v - self.mean[col]) / self.scale[col]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub static_x: Standardizer,
    pub static_e: Standardizer,
    pub dynamic_x: Standardizer,
    pub dynamic_e: Standardizer,
    /// Mean supervision count per masked phase; imputations are learned in
    /// these units.
    pub inf_scale: Vec<f64>,
    /// Columns are (east, west).
    pub mu: Standardizer,
    pub sigma: Standardizer,
}

impl Normalizer {
    /// `standardize_targets = false` leaves travel-time targets in seconds.
    pub fn fit(records: &[&DatasetRecord], standardize_targets: bool) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::Data("cannot fit normalization on zero records".into()))?;
        let sx = first.masked_graph.x.cols;
        let de = first.masked_graph.e.cols;
        let dx = first.dynamic_graph.x.cols;
        let supervision = Standardizer::fit(first.supervision.cols, records.iter().map(|r| &r.supervision))?;
        let inf_scale = supervision.mean.iter().map(|m| m.max(1.0)).collect();
        let targets = |f: fn(&DatasetRecord, usize) -> f64| -> Result<Standardizer> {
            if !standardize_targets {
                return Ok(Standardizer::identity(2));
            }
            let rows: Vec<[f64; 2]> = records.iter().map(|r| [f(r, 0), f(r, 1)]).collect();
            Standardizer::fit(2, [&Matrix::from_rows(&rows)?])
        };
        Ok(Self {
            static_x: Standardizer::fit(sx, records.iter().map(|r| &r.masked_graph.x))?,
            static_e: Standardizer::fit(de, records.iter().map(|r| &r.masked_graph.e))?,
            dynamic_x: Standardizer::fit(dx, records.iter().map(|r| &r.dynamic_graph.x))?,
            dynamic_e: Standardizer::fit(de, records.iter().map(|r| &r.dynamic_graph.e))?,
            inf_scale,
            mu: targets(|r, d| r.target.direction(d).mu)?,
            sigma: targets(|r, d| r.target.direction(d).sigma)?,
        })
    }

    /// Scaling that changes nothing; used before any data is seen.
    pub fn identity(static_dim: usize, dynamic_dim: usize, edge_dim: usize, masked: usize) -> Self {
        Self {
            static_x: Standardizer::identity(static_dim),
            static_e: Standardizer::identity(edge_dim),
            dynamic_x: Standardizer::identity(dynamic_dim),
            dynamic_e: Standardizer::identity(edge_dim),
            inf_scale: vec![1.0; masked],
            mu: Standardizer::identity(2),
            sigma: Standardizer::identity(2),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_columns_have_zero_mean_unit_spread() {
        let m = Matrix::from_rows(&[[1.0, 5.0, 0.0], [3.0, 5.0, 0.0], [5.0, 5.0, 0.0]]).unwrap();
        let s = Standardizer::fit(3, [&m]).unwrap();
        assert_eq!(s.scale[1], 1.0);
        assert_eq!(s.scale[2], 1.0);
        let z = s.apply(&m);
        let col0: Vec<f64> = z.column(0).collect();
        assert!((col0.iter().sum::<f64>()).abs() < 1e-12);
        assert!((col0.iter().map(|v| v * v).sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
        assert!(z.column(1).all(|v| v == 0.0));
        assert!((s.invert(0, s.forward(0, 7.5)) - 7.5).abs() < 1e-12);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let m = Matrix::zeros(2, 2);
        assert!(Standardizer::fit(3, [&m]).is_err());
    }
}
