use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{cd1_update, RbmModel, Velocity};
use crate::error::{Error, Result};
use crate::lattice::SpinConfig;
use crate::rng::{self, tag};
use crate::sampler::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Test configurations reconstructed each epoch for the test error
    /// (evenly strided subset; 0 means all).
    pub monitor_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.5,
            epochs: 100_000,
            batch_size: 100,
            seed: 0,
            monitor_size: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Fraction of mismatched sites, per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mismatch of the CD-1 reconstructions produced while training the epoch.
    pub train_err: f64,
    /// Mismatch of fresh reconstructions of the test monitor set after the epoch.
    pub test_err: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: RbmModel,
    pub records: Vec<EpochRecord>,
    pub batch_size: usize,
    pub monitor_size: usize,
    /// Test error over the last tenth of training rose noticeably above its
    /// best window.
    pub overfit_suspected: bool,
    pub elapsed: Duration,
}

pub(crate) fn rows_of(configs: &[&SpinConfig]) -> Array2<f64> {
    let n_v = configs.first().map_or(0, |c| c.n_sites());
    let mut out = Array2::zeros((configs.len(), n_v));
    for (mut row, c) in out.axis_iter_mut(Axis(0)).zip(configs) {
        row.iter_mut()
            .zip(c.spins())
            .for_each(|(x, &s)| *x = s as f64);
    }
    out
}

/// Train on the even half of every temperature, monitor on the odd half.
pub fn train(dataset: &Dataset, n_hidden: usize, config: &TrainConfig) -> Result<TrainReport> {
    let train = rows_of(&dataset.train_half());
    let test = rows_of(&dataset.test_half());
    train_on(train.view(), test.view(), n_hidden, config)
}

fn mismatch(a: ArrayView2<f64>, b: ArrayView2<f64>) -> usize {
    match (a.as_slice(), b.as_slice()) {
        (Some(x), Some(y)) => x.iter().zip(y).filter(|(p, q)| p != q).count(),
        _ => a.iter().zip(b.iter()).filter(|(p, q)| p != q).count(),
    }
}

pub fn train_on(
    train: ArrayView2<f64>,
    test: ArrayView2<f64>,
    n_hidden: usize,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if n_hidden == 0 {
        return Err(Error::InvalidParameter("n_hidden must be >= 1".into()));
    }
    if train.nrows() == 0 {
        return Err(Error::EmptyInput("training data"));
    }
    if test.nrows() == 0 {
        return Err(Error::EmptyInput("test data"));
    }
    let n_v = train.ncols();
    if test.ncols() != n_v {
        return Err(Error::DimensionMismatch {
            expected: n_v,
            got: test.ncols(),
        });
    }
    let start = Instant::now();

    let mut model = RbmModel::initialized(n_v, n_hidden, &mut rng::stream(config.seed, &[tag::INIT]));
    let mut velocity = Velocity::zeros_like(&model);
    let mut rng = rng::stream(config.seed, &[tag::TRAIN, 0]);
    let mut monitor_rng = rng::stream(config.seed, &[tag::TRAIN, 1]);

    let monitor_rows: Vec<usize> = if config.monitor_size == 0 || config.monitor_size >= test.nrows()
    {
        (0..test.nrows()).collect()
    } else {
        let stride = test.nrows() as f64 / config.monitor_size as f64;
        (0..config.monitor_size)
            .map(|k| (k as f64 * stride) as usize)
            .collect()
    };
    let monitor = test.select(Axis(0), &monitor_rows);

    let mut order: Vec<usize> = (0..train.nrows()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let sites_per_epoch = (train.nrows() * n_v) as f64;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut wrong = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = train.select(Axis(0), chunk);
            let step = cd1_update(
                &mut model,
                batch.view(),
                config.learning_rate,
                config.momentum,
                &mut velocity,
                &mut rng,
            )?;
            wrong += mismatch(batch.view(), step.reconstruction.view());
        }
        if !model.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        let recon = model.reconstruct_batch(monitor.view(), &mut monitor_rng);
        let test_err = mismatch(monitor.view(), recon.view()) as f64 / monitor.len() as f64;
        records.push(EpochRecord {
            epoch,
            train_err: wrong as f64 / sites_per_epoch,
            test_err,
        });
    }

    let overfit_suspected = overfit_check(&records);
    Ok(TrainReport {
        model,
        records,
        batch_size: config.batch_size,
        monitor_size: monitor_rows.len(),
        overfit_suspected,
        elapsed: start.elapsed(),
    })
}

/// Mean test error over the final tenth exceeds the best tenth by > 2% + 1e-3.
fn overfit_check(records: &[EpochRecord]) -> bool {
    let w = (records.len() / 10).max(1);
    if records.len() < 2 * w {
        return false;
    }
    let means: Vec<f64> = records
        .chunks(w)
        .filter(|c| c.len() == w)
        .map(|c| c.iter().map(|r| r.test_err).sum::<f64>() / w as f64)
        .collect();
    let best = means.iter().copied().fold(f64::INFINITY, f64::min);
    let last = *means.last().unwrap();
    last > best * 1.02 + 1e-3
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_mode(n: usize, nv: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, nv), |(r, _)| if r % 2 == 0 { 1.0 } else { -1.0 })
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            momentum: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn two_mode_memorization() {
        let data = two_mode(200, 9);
        let cfg = TrainConfig {
            epochs: 1000,
            seed: 5,
            ..Default::default()
        };
        let report = train_on(data.view(), data.view(), 4, &cfg).unwrap();
        let mut rng = rng::stream(77, &[]);
        let recon = report.model.reconstruct_batch(data.view(), &mut rng);
        let acc = 1.0 - mismatch(data.view(), recon.view()) as f64 / data.len() as f64;
        assert!(acc > 0.95, "accuracy {acc}");
        assert_eq!(report.records.len(), 1000);
    }

    #[test]
    fn single_configuration_error_decreases() {
        let data = Array2::from_elem((1000, 9), 1.0);
        let cfg = TrainConfig {
            epochs: 800,
            seed: 1,
            ..Default::default()
        };
        let report = train_on(data.view(), data.view(), 2, &cfg).unwrap();
        let windows: Vec<f64> = report
            .records
            .chunks(100)
            .map(|c| c.iter().map(|r| r.train_err).sum::<f64>() / c.len() as f64)
            .collect();
        assert!(
            windows.windows(2).all(|w| w[1] <= w[0]),
            "{windows:?}"
        );
        // Saturated fit reproduces the configuration almost surely per site.
        let mut rng = rng::stream(3, &[]);
        let recon = report.model.reconstruct_batch(data.view(), &mut rng);
        let acc = recon.iter().filter(|&&x| x == 1.0).count() as f64 / recon.len() as f64;
        assert!(acc > 0.99, "{acc}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = two_mode(40, 4);
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 7,
            seed: 9,
            ..Default::default()
        };
        let a = train_on(data.view(), data.view(), 3, &cfg).unwrap();
        let b = train_on(data.view(), data.view(), 3, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = two_mode(10, 4);
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        assert!(train_on(data.view(), data.view(), 0, &cfg).is_err());
        let other = two_mode(10, 5);
        assert!(train_on(data.view(), other.view(), 2, &cfg).is_err());
        let empty = Array2::<f64>::zeros((0, 4));
        assert!(train_on(empty.view(), data.view(), 2, &cfg).is_err());
    }

    #[test]
    fn overfit_flag() {
        let rec = |e: usize, t: f64| EpochRecord {
            epoch: e,
            train_err: 0.0,
            test_err: t,
        };
        let flat: Vec<_> = (0..100).map(|e| rec(e, 0.1)).collect();
        assert!(!overfit_check(&flat));
        let rising: Vec<_> = (0..100).map(|e| rec(e, 0.1 + e as f64 * 0.001)).collect();
        assert!(overfit_check(&rising));
    }
}
