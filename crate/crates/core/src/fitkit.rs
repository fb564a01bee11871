//! Fit of the fixed-point minimum energy law `E_min = -2 exp(-a N_temp^b)`.
//!
//! The law is linear after `y = ln(-ln(-E/2))`: `y = ln a + b ln N_temp`, so
//! the fit is ordinary least squares in `(ln N_temp, y)`. Residuals are
//! reported back in energy space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CUTOFF: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    /// Sum of squared residuals in energy.
    pub rss: f64,
    pub n_points: usize,
    pub cutoff: f64,
    /// Least squares produced `b < 0`; `b` was set to 0 and `a` refitted.
    pub clamped: bool,
}

/// `-2 exp(-a n^b)`.
pub fn emin_law(a: f64, b: f64, n_temp: f64) -> f64 {
    -2.0 * (-a * n_temp.powf(b)).exp()
}

pub fn fit_emin_law(points: &[(f64, f64)], cutoff: f64) -> Result<FitResult> {
    let used: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.0 >= cutoff).collect();
    if used.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "need at least 3 points with N_temp >= {cutoff}, got {}",
            used.len()
        )));
    }
    for &(n, e) in &used {
        if !(e > -2.0 && e < 0.0) {
            return Err(Error::EnergyOutOfDomain(e));
        }
        if !(n > 0.0) {
            return Err(Error::InvalidParameter(format!("N_temp must be > 0, got {n}")));
        }
    }
    let xs: Vec<f64> = used.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = used.iter().map(|p| (-(-p.1 / 2.0).ln()).ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter(
            "all points share one N_temp; slope undefined".into(),
        ));
    }
    let slope = sxy / sxx;
    let (a, b, clamped) = if slope < 0.0 {
        (my.exp(), 0.0, true)
    } else {
        ((my - slope * mx).exp(), slope, false)
    };
    let rss = used
        .iter()
        .map(|&(n, e)| (e - emin_law(a, b, n)).powi(2))
        .sum();
    Ok(FitResult {
        a,
        b,
        rss,
        n_points: used.len(),
        cutoff,
        clamped,
    })
}

pub fn extrapolate(result: &FitResult, n_temp: f64) -> f64 {
    emin_law(result.a, result.b, n_temp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    Increasing,
    Decreasing,
    Constant,
    Mixed,
}

impl Trend {
    fn of(values: &[f64]) -> Self {
        let steps: Vec<std::cmp::Ordering> = values
            .windows(2)
            .map(|w| w[1].total_cmp(&w[0]))
            .collect();
        use std::cmp::Ordering::*;
        if steps.iter().all(|&s| s == Equal) {
            Trend::Constant
        } else if steps.iter().all(|&s| s != Less) {
            Trend::Increasing
        } else if steps.iter().all(|&s| s != Greater) {
            Trend::Decreasing
        } else {
            Trend::Mixed
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Trend::Increasing => "increasing",
            Trend::Decreasing => "decreasing",
            Trend::Constant => "constant",
            Trend::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendSummary {
    /// `(N_v, a, b)` sorted by `N_v`.
    pub points: Vec<(usize, f64, f64)>,
    pub a_trend: Trend,
    pub b_trend: Trend,
}

pub fn parameter_trend(results: &[(usize, FitResult)]) -> Result<TrendSummary> {
    if results.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need fits for at least 2 sizes, got {}",
            results.len()
        )));
    }
    let mut points: Vec<(usize, f64, f64)> =
        results.iter().map(|(nv, f)| (*nv, f.a, f.b)).collect();
    points.sort_by_key(|p| p.0);
    let a: Vec<f64> = points.iter().map(|p| p.1).collect();
    let b: Vec<f64> = points.iter().map(|p| p.2).collect();
    Ok(TrendSummary {
        a_trend: Trend::of(&a),
        b_trend: Trend::of(&b),
        points,
    })
}
