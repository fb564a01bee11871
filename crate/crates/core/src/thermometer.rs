//! Temperature estimation from energy through the calibrated `T -> E` curve.

use crate::error::{Error, Result};
use crate::sampler::{grid_temperature, Dataset};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPoint {
    pub temperature: f64,
    /// Isotonic-adjusted mean energy per site.
    pub mean_energy: f64,
    pub std_energy: f64,
}

/// Mean energy per site against grid temperature, non-decreasing in `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCurve {
    side: usize,
    points: Vec<CalibrationPoint>,
}

impl CalibrationCurve {
    /// Build from raw per-temperature statistics; the means are passed through
    /// pool-adjacent-violators so the curve is monotone.
    pub fn from_points(side: usize, raw: Vec<CalibrationPoint>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyInput("calibration curve has no points"));
        }
        if raw.windows(2).any(|w| !(w[1].temperature > w[0].temperature)) {
            return Err(Error::InvalidParameter(
                "calibration temperatures must be strictly increasing".into(),
            ));
        }
        let means: Vec<f64> = raw.iter().map(|p| p.mean_energy).collect();
        let fitted = isotonic_non_decreasing(&means);
        let points = raw
            .into_iter()
            .zip(fitted)
            .map(|(p, m)| CalibrationPoint {
                mean_energy: m,
                ..p
            })
            .collect();
        Ok(Self { side, points })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn points(&self) -> &[CalibrationPoint] {
        &self.points
    }

    pub fn t_min(&self) -> f64 {
        self.points[0].temperature
    }

    pub fn t_max(&self) -> f64 {
        self.points[self.points.len() - 1].temperature
    }

    /// Piecewise-linear inverse of the mean curve, clamped to the grid ends.
    ///
    /// Energies at or below the first knot map to `t_min`; at or above the
    /// last knot to `t_max`. On a flat (pooled) stretch the lowest temperature
    /// of the stretch is returned.
    pub fn temperature_of(&self, energy: f64) -> f64 {
        let pts = &self.points;
        if energy <= pts[0].mean_energy {
            return pts[0].temperature;
        }
        let last = pts.len() - 1;
        if energy >= pts[last].mean_energy {
            return pts[last].temperature;
        }
        // First knot with mean >= energy; exists and is > 0 by the checks above.
        let hi = pts.partition_point(|p| p.mean_energy < energy);
        let (a, b) = (&pts[hi - 1], &pts[hi]);
        let frac = (energy - a.mean_energy) / (b.mean_energy - a.mean_energy);
        a.temperature + frac * (b.temperature - a.temperature)
    }
}

/// Least-squares non-decreasing fit with equal weights (pool adjacent violators).
pub fn isotonic_non_decreasing(values: &[f64]) -> Vec<f64> {
    // Blocks of (sum, count).
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            if s0 / n0 as f64 > s1 / n1 as f64 {
                blocks.pop();
                *blocks.last_mut().unwrap() = (s0 + s1, n0 + n1);
            } else {
                break;
            }
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, n)| std::iter::repeat(s / n as f64).take(n))
        .collect()
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-temperature mean and standard deviation of energy per site over the
/// whole dataset.
pub fn calibrate(dataset: &Dataset) -> Result<CalibrationCurve> {
    if dataset.n_temp() == 0 || dataset.n_conf() == 0 {
        return Err(Error::EmptyInput("dataset"));
    }
    let raw = dataset
        .blocks()
        .iter()
        .enumerate()
        .map(|(t, block)| {
            let energies: Vec<f64> = block.iter().map(|c| c.energy_per_site()).collect();
            let (mean, std) = mean_std(&energies);
            CalibrationPoint {
                temperature: grid_temperature(t),
                mean_energy: mean,
                std_energy: std,
            }
        })
        .collect();
    CalibrationCurve::from_points(dataset.side(), raw)
}

/// Map each energy to a temperature and return `(mean, std)` of those values.
pub fn estimate_temperature(curve: &CalibrationCurve, energies: &[f64]) -> Result<(f64, f64)> {
    if energies.is_empty() {
        return Err(Error::EmptyInput("energies"));
    }
    let temps: Vec<f64> = energies.iter().map(|&e| curve.temperature_of(e)).collect();
    Ok(mean_std(&temps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(means: &[f64]) -> CalibrationCurve {
        let raw = means
            .iter()
            .enumerate()
            .map(|(k, &m)| CalibrationPoint {
                temperature: grid_temperature(k),
                mean_energy: m,
                std_energy: 0.0,
            })
            .collect();
        CalibrationCurve::from_points(4, raw).unwrap()
    }

    fn synthetic(n: usize) -> CalibrationCurve {
        let means: Vec<f64> = (0..n)
            .map(|k| -2.0 + 2.0 * (1.0 - (-(k as f64) / 15.0).exp()))
            .collect();
        curve(&means)
    }

    #[test]
    fn pav_pools_violators() {
        assert_eq!(isotonic_non_decreasing(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(isotonic_non_decreasing(&[3.0, 2.0, 1.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(isotonic_non_decreasing(&[0.0, 1.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn clamps_and_knots() {
        let c = synthetic(40);
        let (t, spread) = estimate_temperature(&c, &[-2.0, -2.0, -2.5]).unwrap();
        assert_eq!((t, spread), (0.0, 0.0));
        let knot = c.points()[30].mean_energy;
        let (t, _) = estimate_temperature(&c, &[knot; 5]).unwrap();
        assert_eq!(t, 3.0);
        let (t, _) = estimate_temperature(&c, &[0.5]).unwrap();
        assert_eq!(t, c.t_max());
    }

    #[test]
    fn linear_between_knots() {
        let c = curve(&[-2.0, -1.0, 0.0]);
        assert!((c.temperature_of(-1.5) - 0.05).abs() < 1e-12);
        assert!((c.temperature_of(-0.25) - 0.175).abs() < 1e-12);
    }

    #[test]
    fn flat_stretch_maps_to_its_lowest_temperature() {
        let c = curve(&[-2.0, -1.5, -1.0, -1.2, 0.0]);
        // pooled to [-2, -1.5, -1.1, -1.1, 0]
        assert_eq!(c.temperature_of(-1.1), 0.2);
    }

    #[test]
    fn empty_energies_rejected() {
        assert!(estimate_temperature(&synthetic(5), &[]).is_err());
    }

    proptest! {
        #[test]
        fn inversion_is_monotone(a in -2.5f64..0.5, b in -2.5f64..0.5) {
            let c = synthetic(30);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(c.temperature_of(lo) <= c.temperature_of(hi));
        }

        #[test]
        fn pav_output_is_sorted_and_mean_preserving(v in prop::collection::vec(-2.0f64..0.0, 1..40)) {
            let f = isotonic_non_decreasing(&v);
            prop_assert!(f.windows(2).all(|w| w[0] <= w[1] + 1e-12));
            let (s0, s1): (f64, f64) = (v.iter().sum(), f.iter().sum());
            prop_assert!((s0 - s1).abs() < 1e-9);
        }
    }
}
