//! Trend test on the total number of jobs.

use serde::Serialize;

use super::{SimError, SimResult};

/// Fewest points accepted in the regression window.
pub const MIN_POINTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstabilityVerdict {
    pub unstable: bool,
    pub slope: f64,
    /// Newey-West standard error of the slope.
    pub std_error: f64,
    pub points: usize,
}

/// Ordinary least-squares slope and intercept of `y` on `t`.
pub fn ols_slope(t: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = t.len();
    if n < 2 {
        return None;
    }
    let tm = t.iter().sum::<f64>() / n as f64;
    let ym = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = t.iter().map(|v| (v - tm).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let slope = sxy / sxx;
    Some((slope, ym - slope * tm))
}

fn last_half(result: &SimResult) -> (Vec<f64>, Vec<f64>) {
    let (t, y) = result.totals();
    let start = t.len() / 2;
    (t[start..].to_vec(), y[start..].to_vec())
}

pub(crate) fn last_half_slope(result: &SimResult) -> Option<f64> {
    let (t, y) = last_half(result);
    ols_slope(&t, &y).map(|(s, _)| s)
}

/// Slope standard error robust to autocorrelation in the residuals,
/// Bartlett kernel with bandwidth `ceil(sqrt(n))`.
fn newey_west_se(t: &[f64], y: &[f64], slope: f64, intercept: f64) -> f64 {
    let n = t.len();
    let tm = t.iter().sum::<f64>() / n as f64;
    let sxx: f64 = t.iter().map(|v| (v - tm).powi(2)).sum();
    let u: Vec<f64> = t
        .iter()
        .zip(y)
        .map(|(a, b)| (a - tm) * (b - intercept - slope * a))
        .collect();
    let lags = (n as f64).sqrt().ceil() as usize;
    let mut s = u.iter().map(|v| v * v).sum::<f64>();
    for l in 1..=lags.min(n - 1) {
        let w = 1.0 - l as f64 / (lags + 1) as f64;
        let c: f64 = (l..n).map(|i| u[i] * u[i - l]).sum();
        s += 2.0 * w * c;
    }
    s.max(0.0).sqrt() / sxx
}

/// Regresses total jobs on time over the last half of the run; unstable
/// when the slope exceeds three standard errors.
pub fn detect_instability(result: &SimResult) -> Result<InstabilityVerdict, SimError> {
    let (t, y) = last_half(result);
    if t.len() < MIN_POINTS {
        return Err(SimError::InsufficientData {
            have: t.len(),
            need: MIN_POINTS,
        });
    }
    let (slope, intercept) = ols_slope(&t, &y).ok_or(SimError::InsufficientData {
        have: t.len(),
        need: MIN_POINTS,
    })?;
    let se = newey_west_se(&t, &y, slope, intercept);
    Ok(InstabilityVerdict {
        unstable: slope > 3.0 * se,
        slope,
        std_error: se,
        points: t.len(),
    })
}
