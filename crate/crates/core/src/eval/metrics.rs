//! Distribution-comparison metrics over discretized densities.

use crate::error::{Error, Result};

/// Bins whose true density falls below this are left out of MAPE.
pub const MAPE_EPSILON: f64 = 1e-12;

fn same_length(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "metric inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Mean absolute percentage error, percent, plus the number of excluded bins.
pub fn mape_with_exclusions(y_true: &[f64], y_pred: &[f64]) -> Result<(f64, usize)> {
    same_length(y_true, y_pred)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (t, p) in y_true.iter().zip(y_pred) {
        if t.abs() < MAPE_EPSILON {
            continue;
        }
        sum += ((t - p) / t).abs();
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMetric("MAPE: every true value is zero"));
    }
    Ok((sum / used as f64 * 100.0, y_true.len() - used))
}

pub fn mape(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    mape_with_exclusions(y_true, y_pred).map(|(m, _)| m)
}

pub fn std_error(sigma_true: f64, sigma_pred: f64) -> f64 {
    (sigma_true - sigma_pred).abs()
}

pub fn hellinger(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    same_length(y_true, y_pred)?;
    if y_true.iter().chain(y_pred).any(|v| *v < 0.0) {
        return Err(Error::Data("Hellinger distance needs nonnegative inputs".into()));
    }
    let s: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t.sqrt() - p.sqrt()).powi(2))
        .sum();
    Ok(s.sqrt() / std::f64::consts::SQRT_2)
}

/// RMSE divided by the range of `y_true`.
pub fn nrmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    same_length(y_true, y_pred)?;
    let max = y_true.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = y_true.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > min) {
        return Err(Error::UndefinedMetric("NRMSE: true values have zero range"));
    }
    let mse = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).powi(2)).sum::<f64>() / y_true.len() as f64;
    Ok(mse.sqrt() / (max - min))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(mape(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!((mape(&[100.0, 200.0], &[110.0, 180.0]).unwrap() - 10.0).abs() < 1e-12);
        assert!((mape(&[1.0, 1.0], &[2.0, 2.0]).unwrap() - 100.0).abs() < 1e-12);

        assert_eq!(std_error(50.0, 50.0), 0.0);
        assert!((std_error(50.0, 72.21) - 22.21).abs() < 1e-9);
        assert_eq!(std_error(3.0, 8.0), std_error(8.0, 3.0));

        assert_eq!(hellinger(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert!((hellinger(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((hellinger(&[0.25, 0.75], &[0.75, 0.25]).unwrap() - 0.3660254037844386).abs() < 1e-12);

        assert_eq!(nrmse(&[0.0, 10.0], &[0.0, 10.0]).unwrap(), 0.0);
        assert!((nrmse(&[0.0, 10.0], &[1.0, 9.0]).unwrap() - 0.1).abs() < 1e-12);
        assert!((nrmse(&[0.0, 30.0], &[3.0, 27.0]).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_true_bins_are_excluded() {
        let (m, excluded) = mape_with_exclusions(&[0.0, 2.0, 0.0], &[5.0, 3.0, 1.0]).unwrap();
        assert!((m - 50.0).abs() < 1e-12);
        assert_eq!(excluded, 2);
        assert!(matches!(mape(&[0.0, 0.0], &[1.0, 1.0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn invalid_inputs() {
        assert!(hellinger(&[-0.1, 1.0], &[0.5, 0.5]).is_err());
        assert!(matches!(nrmse(&[4.0, 4.0], &[1.0, 2.0]), Err(Error::UndefinedMetric(_))));
        assert!(mape(&[1.0], &[1.0, 2.0]).is_err());
    }
}
