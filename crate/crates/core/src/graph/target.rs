//! Normal travel-time targets and their discretized densities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIGMA_FLOOR: f64 = 1.0;
pub const PDF_BINS: usize = 250;
/// s
pub const BIN_WIDTH: f64 = 10.0;

/// Center of bin `i`, s.
pub fn bin_center(i: usize) -> f64 {
    BIN_WIDTH * i as f64 + BIN_WIDTH / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalFit {
    pub mu: f64,
    pub sigma: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

/// Sample mean and floored sample standard deviation (`n - 1`). Skewness
/// and kurtosis are reported as a normality diagnostic only.
pub fn fit_normal_pdf(samples: &[f64]) -> Result<NormalFit> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} travel-time samples, need at least 2",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / n;
    let moment = |p: i32| samples.iter().map(|x| (x - mu).powi(p)).sum::<f64>() / n;
    let (m2, m3, m4) = (moment(2), moment(3), moment(4));
    let sd = (m2 * n / (n - 1.0)).sqrt();
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    log::debug!("normal fit: n = {n}, skewness {skewness:.3}, excess kurtosis {excess_kurtosis:.3}");
    Ok(NormalFit {
        mu,
        sigma: sd.max(SIGMA_FLOOR),
        skewness,
        excess_kurtosis,
    })
}

pub fn normal_density(t: f64, mu: f64, sigma: f64) -> f64 {
    let z = (t - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Normal density at the 250 bin centers.
pub fn discretize_pdf(mu: f64, sigma: f64) -> Vec<f64> {
    (0..PDF_BINS)
        .map(|i| normal_density(bin_center(i), mu, sigma))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionTarget {
    pub mu: f64,
    pub sigma: f64,
    pub pdf: Vec<f64>,
}

impl DirectionTarget {
    pub fn new(mu: f64, sigma: f64) -> Self {
        Self {
            mu,
            sigma,
            pdf: discretize_pdf(mu, sigma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelTimeTarget {
    pub east: DirectionTarget,
    pub west: DirectionTarget,
}

impl TravelTimeTarget {
    pub fn from_samples(east: &[f64], west: &[f64]) -> Result<Self> {
        let e = fit_normal_pdf(east)
            .map_err(|err| Error::InsufficientData(format!("eastbound: {err}")))?;
        let w = fit_normal_pdf(west)
            .map_err(|err| Error::InsufficientData(format!("westbound: {err}")))?;
        Ok(Self {
            east: DirectionTarget::new(e.mu, e.sigma),
            west: DirectionTarget::new(w.mu, w.sigma),
        })
    }

    pub fn direction(&self, i: usize) -> &DirectionTarget {
        match i {
            0 => &self.east,
            _ => &self.west,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples_hit_the_floor() {
        let fit = fit_normal_pdf(&[300.0; 5]).unwrap();
        assert_eq!(fit.mu, 300.0);
        assert_eq!(fit.sigma, SIGMA_FLOOR);
    }

    #[test]
    fn two_samples() {
        let fit = fit_normal_pdf(&[100.0, 200.0]).unwrap();
        assert_eq!(fit.mu, 150.0);
        // sqrt(((-50)^2 + 50^2) / 1)
        assert!((fit.sigma - 5000f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fewer_than_two_samples_is_insufficient() {
        assert!(matches!(fit_normal_pdf(&[1.0]), Err(Error::InsufficientData(_))));
        assert!(matches!(fit_normal_pdf(&[]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn peak_value_at_bin_center() {
        let pdf = discretize_pdf(505.0, 50.0);
        assert_eq!(pdf.len(), 250);
        let expected = 1.0 / (50.0 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((pdf[50] - expected).abs() < 1e-15);
        assert!((pdf[50] - 0.0079788).abs() < 1e-7);
        for d in 1..40 {
            assert!((pdf[50 - d] - pdf[50 + d]).abs() < 1e-15);
        }
        assert!(pdf.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn mass_is_close_to_one_in_range() {
        for (mu, sigma) in [(500.0, 50.0), (150.0, 40.0), (2000.0, 120.0), (805.0, 20.0)] {
            let mass: f64 = discretize_pdf(mu, sigma).iter().sum::<f64>() * BIN_WIDTH;
            assert!((0.95..=1.0 + 1e-9).contains(&mass), "{mu} {sigma}: {mass}");
        }
    }
}
