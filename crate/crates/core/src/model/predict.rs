use serde::{Deserialize, Serialize};

use super::network::{Fdgnn, Prediction};
use crate::error::{Error, Result};
use crate::graph::DatasetRecord;

/// Anything that maps dataset records to travel-time moments.
pub trait Predictor: Sync {
    fn name(&self) -> &str;
    fn predict(&self, records: &[&DatasetRecord]) -> Result<Vec<Prediction>>;
}

impl Predictor for Fdgnn {
    fn name(&self) -> &str {
        "fdgnn"
    }

    fn predict(&self, records: &[&DatasetRecord]) -> Result<Vec<Prediction>> {
        Fdgnn::predict(self, records)
    }
}

/// Predicts the training-split mean of `mu` and `sigma` for every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantPredictor {
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
}

impl ConstantPredictor {
    pub fn fit(train: &[&DatasetRecord]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("constant baseline needs at least one record".into()));
        }
        let n = train.len() as f64;
        let mean = |f: &dyn Fn(&DatasetRecord) -> f64| train.iter().map(|r| f(r)).sum::<f64>() / n;
        Ok(Self {
            mu: [mean(&|r| r.target.east.mu), mean(&|r| r.target.west.mu)],
            sigma: [mean(&|r| r.target.east.sigma), mean(&|r| r.target.west.sigma)],
        })
    }
}

impl Predictor for ConstantPredictor {
    fn name(&self) -> &str {
        "constant"
    }

    fn predict(&self, records: &[&DatasetRecord]) -> Result<Vec<Prediction>> {
        Ok(records
            .iter()
            .map(|_| Prediction {
                mu: self.mu,
                sigma: self.sigma,
                imputed: None,
            })
            .collect())
    }
}

/// Returns the ground truth; every metric against it is zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&self, records: &[&DatasetRecord]) -> Result<Vec<Prediction>> {
        Ok(records
            .iter()
            .map(|r| Prediction {
                mu: [r.target.east.mu, r.target.west.mu],
                sigma: [r.target.east.sigma, r.target.west.sigma],
                imputed: Some(r.supervision.clone()),
            })
            .collect())
    }
}
