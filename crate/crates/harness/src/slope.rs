//! Least-squares slopes for empirical rates and drifts.

use serde::{Deserialize, Serialize};

use crate::error::{config_error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope.
    pub std_error: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 3 {
        return Err(config_error("points", "a slope needs at least 3 points"));
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(config_error("points", "need at least two distinct abscissae"));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    Ok(LineFit {
        slope,
        intercept,
        std_error: (rss / (k - 2.0) / sxx).sqrt(),
    })
}

/// Fit of `log value = intercept + slope · log n`.
pub fn fit_log_slope(points: &[(f64, f64)]) -> Result<LineFit> {
    if let Some(p) = points.iter().find(|p| !(p.0 > 0.0) || !(p.1 > 0.0)) {
        return Err(config_error("points", format!("({}, {}) is not positive", p.0, p.1)));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|p| (p.0.ln(), p.1.ln())).collect();
    fit_line(&logs)
}
