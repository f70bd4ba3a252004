//! Ordinary least-squares line fits used by the scaling experiments.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    /// Coefficient of determination.
    pub r2: f64,
    /// Residual sum of squares.
    pub ssr: f64,
    pub points: usize,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Fits `y ≈ a + b x` with at least `min_points` samples.
pub fn linear_fit(x: &[f64], y: &[f64], min_points: usize) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < min_points.max(2) {
        return Err(Error::TooFewPoints {
            needed: min_points.max(2),
            got: n,
        });
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|xi| (xi - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    let syy: f64 = y.iter().map(|yi| (yi - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("fit abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - intercept - slope * xi).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ssr / syy };
    Ok(LinearFit {
        intercept,
        slope,
        r2,
        ssr,
        points: n,
    })
}
