//! Iterated stochastic reconstruction of an ensemble through a trained RBM,
//! its fixed point in energy and temperature, and sweeps over `N_h`.

use ndarray::{Array2, Axis};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::SpinConfig;
use crate::rbm::{self, RbmModel, TrainConfig, TrainReport};
use crate::rng::{self, tag};
use crate::sampler::Dataset;
use crate::thermometer::{estimate_temperature, mean_std, CalibrationCurve};

const CHUNK_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub iteration: usize,
    pub mean_energy: f64,
    pub std_energy: f64,
    pub t_estimate: f64,
    pub t_spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub records: Vec<FlowRecord>,
    pub ensemble_size: usize,
    pub seed: u64,
}

impl FlowTrajectory {
    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_energy).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub max_iters: usize,
    pub window: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            window: 5,
            tolerance: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointEstimate {
    pub energy: f64,
    pub temperature: f64,
    /// First iteration from which the window criterion holds through the end.
    pub iterations: usize,
    pub converged: bool,
}

fn record(iteration: usize, energies: &[f64], curve: &CalibrationCurve) -> Result<FlowRecord> {
    let (mean_energy, std_energy) = mean_std(energies);
    let (t_estimate, t_spread) = estimate_temperature(curve, energies)?;
    Ok(FlowRecord {
        iteration,
        mean_energy,
        std_energy,
        t_estimate,
        t_spread,
    })
}

fn row_energies(side: usize, state: &Array2<f64>) -> Vec<f64> {
    state
        .axis_iter(Axis(0))
        .map(|row| {
            let spins = row.iter().map(|&x| if x > 0.0 { 1 } else { -1 }).collect();
            SpinConfig::from_raw_unchecked(side, spins).energy_per_site()
        })
        .collect()
}

/// Reconstruct every member `max_iters` times, recording statistics after
/// each pass. Member `m` at iteration `k` draws from `stream(seed, [FLOW, k, m])`.
pub fn run_flow<C: std::borrow::Borrow<SpinConfig> + Sync>(
    model: &RbmModel,
    ensemble: &[C],
    curve: &CalibrationCurve,
    max_iters: usize,
    seed: u64,
) -> Result<FlowTrajectory> {
    let first = ensemble.first().ok_or(Error::EmptyInput("flow ensemble"))?.borrow();
    let side = first.side();
    if let Some(c) = ensemble.iter().find(|c| c.borrow().side() != side) {
        return Err(Error::DimensionMismatch {
            expected: side,
            got: c.borrow().side(),
        });
    }
    if model.n_visible() != side * side {
        return Err(Error::DimensionMismatch {
            expected: model.n_visible(),
            got: side * side,
        });
    }
    let n_v = side * side;
    let mut state = Array2::zeros((ensemble.len(), n_v));
    for (mut row, c) in state.axis_iter_mut(Axis(0)).zip(ensemble) {
        row.iter_mut()
            .zip(c.borrow().spins())
            .for_each(|(x, &s)| *x = s as f64);
    }

    let direct: Vec<f64> = ensemble.iter().map(|c| c.borrow().energy_per_site()).collect();
    let mut records = vec![record(0, &direct, curve)?];
    for iteration in 1..=max_iters {
        state
            .axis_chunks_iter_mut(Axis(0), CHUNK_ROWS)
            .into_par_iter()
            .enumerate()
            .for_each(|(chunk_idx, mut chunk)| {
                let mut h = model.hidden_expectation_batch(chunk.view());
                let base = chunk_idx * CHUNK_ROWS;
                let mut rngs: Vec<_> = (0..chunk.nrows())
                    .map(|r| {
                        rng::stream(seed, &[tag::FLOW, iteration as u64, (base + r) as u64])
                    })
                    .collect();
                for (mut row, rng) in h.axis_iter_mut(Axis(0)).zip(rngs.iter_mut()) {
                    row.iter_mut().for_each(|m| *m = signed_draw(*m, rng));
                }
                let mut v = model.visible_expectation_batch(h.view());
                for (mut row, rng) in v.axis_iter_mut(Axis(0)).zip(rngs.iter_mut()) {
                    row.iter_mut().for_each(|m| *m = signed_draw(*m, rng));
                }
                chunk.assign(&v);
            });
        records.push(record(iteration, &row_energies(side, &state), curve)?);
    }
    Ok(FlowTrajectory {
        records,
        ensemble_size: ensemble.len(),
        seed,
    })
}

#[inline]
fn signed_draw(mean: f64, rng: &mut rng::Rng) -> f64 {
    // Same rule as `rbm::sample_binary`.
    if rng.gen::<f64>() < 0.5 * (1.0 + mean) {
        1.0
    } else {
        -1.0
    }
}

/// Sliding-window convergence test on the mean energy.
///
/// With `W = window`, the window-mean change at iteration `k >= W` is
/// `|mean(E[k-W+1..=k]) - mean(E[k-W..k])|`. The flow counts as converged if
/// this change is below `tolerance` at the final iteration; `iterations` is
/// the first `k` from which it stays below. `E*` and `T*` are the averages over
/// the final window.
pub fn find_fixed_point(
    trajectory: &FlowTrajectory,
    window: usize,
    tolerance: f64,
) -> Result<FixedPointEstimate> {
    let recs = &trajectory.records;
    if window == 0 {
        return Err(Error::InvalidParameter("window must be >= 1".into()));
    }
    if recs.len() < window + 1 {
        return Err(Error::InvalidParameter(format!(
            "trajectory has {} records, need at least {}",
            recs.len(),
            window + 1
        )));
    }
    let w = window as f64;
    let window_mean = |end: usize, f: fn(&FlowRecord) -> f64| {
        recs[end + 1 - window..=end].iter().map(f).sum::<f64>() / w
    };
    let last = recs.len() - 1;
    let mut first_ok = None;
    for k in window..=last {
        let change = (window_mean(k, |r| r.mean_energy) - window_mean(k - 1, |r| r.mean_energy)).abs();
        if change < tolerance {
            first_ok.get_or_insert(k);
        } else {
            first_ok = None;
        }
    }
    Ok(FixedPointEstimate {
        energy: window_mean(last, |r| r.mean_energy),
        temperature: window_mean(last, |r| r.t_estimate),
        iterations: first_ok.unwrap_or(last),
        converged: first_ok.is_some(),
    })
}

/// `1, 4, 9, ..., floor(sqrt(n_visible))^2`.
pub fn square_grid(n_visible: usize) -> Vec<usize> {
    (1..)
        .map(|k: usize| k * k)
        .take_while(|&h| h <= n_visible)
        .collect()
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub n_hidden: usize,
    pub outcome: std::result::Result<SweepSuccess, String>,
}

#[derive(Debug, Clone)]
pub struct SweepSuccess {
    pub fixed_point: FixedPointEstimate,
    pub trajectory: FlowTrajectory,
    pub train: TrainReport,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Argmin of `E*` over successful points, ties to the smaller `N_h`.
    pub n_h_min: Option<usize>,
    pub e_min: Option<f64>,
}

/// Per-grid-point training seed: `derive(train.seed, [TRAIN, N_h])`.
pub fn grid_train_config(base: &TrainConfig, n_hidden: usize) -> TrainConfig {
    TrainConfig {
        seed: rng::derive_seed(base.seed, &[tag::TRAIN, n_hidden as u64]),
        ..base.clone()
    }
}

/// Per-grid-point flow seed: `derive(flow.seed, [FLOW, N_h])`.
pub fn grid_flow_seed(flow: &FlowConfig, n_hidden: usize) -> u64 {
    rng::derive_seed(flow.seed, &[tag::FLOW, n_hidden as u64])
}

pub fn sweep_point(
    dataset: &Dataset,
    curve: &CalibrationCurve,
    n_hidden: usize,
    train: &TrainConfig,
    flow: &FlowConfig,
) -> Result<SweepSuccess> {
    let report = rbm::train(dataset, n_hidden, &grid_train_config(train, n_hidden))?;
    let trajectory = run_flow(
        &report.model,
        &dataset.test_half(),
        curve,
        flow.max_iters,
        grid_flow_seed(flow, n_hidden),
    )?;
    let fixed_point = find_fixed_point(&trajectory, flow.window, flow.tolerance)?;
    Ok(SweepSuccess {
        fixed_point,
        trajectory,
        train: report,
    })
}

pub fn sweep_nh(
    dataset: &Dataset,
    curve: &CalibrationCurve,
    grid: &[usize],
    train: &TrainConfig,
    flow: &FlowConfig,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("N_h grid"));
    }
    let points: Vec<SweepPoint> = grid
        .par_iter()
        .map(|&n_hidden| SweepPoint {
            n_hidden,
            outcome: sweep_point(dataset, curve, n_hidden, train, flow).map_err(|e| e.to_string()),
        })
        .collect();
    Ok(summarize(points))
}

pub fn summarize(points: Vec<SweepPoint>) -> SweepResult {
    let best = argmin_energy(
        points
            .iter()
            .filter_map(|p| p.outcome.as_ref().ok().map(|s| (p.n_hidden, s.fixed_point.energy))),
    );
    SweepResult {
        n_h_min: best.map(|b| b.0),
        e_min: best.map(|b| b.1),
        points,
    }
}

/// Minimum energy, ties broken toward the smaller `N_h`.
pub fn argmin_energy(items: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    items.fold(None, |best, (n, e)| match best {
        Some((bn, be)) if be < e || (be == e && bn <= n) => Some((bn, be)),
        _ => Some((n, e)),
    })
}
