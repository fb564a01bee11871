//! Metropolis sampling and multi-temperature dataset generation.
//!
//! Each dataset configuration is an independent chain started from a uniformly
//! random configuration and run for `sweeps * N_v` single-spin Metropolis
//! steps, each at a uniformly chosen site. A fixed raster visiting order is
//! not used: on small tori (3 x 3 already) the raster sweep kernel is
//! reducible and does not converge to the Boltzmann distribution. The chain
//! for temperature index `t` and sample `k` draws from `rng::stream(base_seed, [DATASET, t, k])`.

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{LatticeGeometry, SpinConfig};
use crate::rng::{self, tag, Rng};

/// Stand-in for `T = 0`.
pub const ZERO_TEMPERATURE: f64 = 1e-6;
pub const DEFAULT_SWEEPS: usize = 100;
pub const TEMPERATURE_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerParams {
    temperature: f64,
    pub sweeps: usize,
    pub seed: u64,
}

impl SamplerParams {
    /// `temperature == 0` is replaced by [`ZERO_TEMPERATURE`].
    pub fn new(temperature: f64, sweeps: usize, seed: u64) -> Result<Self> {
        if !(temperature >= 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "temperature must be finite and >= 0, got {temperature}"
            )));
        }
        if sweeps == 0 {
            return Err(Error::InvalidParameter("sweeps must be >= 1".into()));
        }
        let temperature = if temperature == 0.0 {
            ZERO_TEMPERATURE
        } else {
            temperature
        };
        Ok(Self {
            temperature,
            sweeps,
            seed,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// Acceptance probability `min(1, exp(-dE/T))`.
#[inline]
pub fn acceptance(delta_e: f64, temperature: f64) -> f64 {
    if delta_e <= 0.0 {
        1.0
    } else {
        (-delta_e / temperature).exp()
    }
}

/// Flip `site` iff `draw < min(1, exp(-dE/T))`. Returns whether it flipped.
pub fn metropolis_step(
    config: &mut SpinConfig,
    site: usize,
    temperature: f64,
    draw: f64,
) -> Result<bool> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let de = crate::lattice::flip_delta(config, site)?;
    let flip = draw < acceptance(de, temperature);
    if flip {
        config.flip(site);
    }
    Ok(flip)
}

/// A single Metropolis chain with a cached acceptance table.
///
/// `dE = 2 s (sum of 4 neighbours)` only takes values in `{-8,-4,0,4,8}`, so
/// the positive cases are tabulated. Every step draws a site; a second uniform
/// draw is consumed only when `dE > 0`, as for `dE <= 0` the flip is certain.
pub struct MetropolisChain {
    config: SpinConfig,
    accept: [f64; 2],
    rng: Rng,
}

impl MetropolisChain {
    pub fn random_start(side: usize, temperature: f64, mut rng: Rng) -> Self {
        let spins = (0..side * side)
            .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
            .collect();
        let config = SpinConfig::from_raw_unchecked(side, spins);
        Self::from_config(config, temperature, rng)
    }

    pub fn from_config(config: SpinConfig, temperature: f64, rng: Rng) -> Self {
        Self {
            config,
            accept: [acceptance(4.0, temperature), acceptance(8.0, temperature)],
            rng,
        }
    }

    /// `N_v` steps at uniformly random sites.
    pub fn sweep(&mut self) {
        let l = self.config.side();
        let n = l * l;
        for _ in 0..n {
            let site = self.rng.gen_range(0..n);
            let s = self.config.spins()[site] as i32;
            let de = 2 * s * self.config.neighbour_sum(site);
            let flip = match de {
                d if d <= 0 => true,
                4 => self.rng.gen::<f64>() < self.accept[0],
                _ => self.rng.gen::<f64>() < self.accept[1],
            };
            if flip {
                self.config.spins_mut()[site] = -s as i8;
            }
        }
    }

    pub fn config(&self) -> &SpinConfig {
        &self.config
    }

    pub fn into_config(self) -> SpinConfig {
        self.config
    }
}

/// Random start followed by `sweeps` sweeps.
pub fn equilibrate(params: &SamplerParams, geometry: &LatticeGeometry) -> SpinConfig {
    equilibrate_with(params, geometry.side(), rng::stream(params.seed, &[]))
}

fn equilibrate_with(params: &SamplerParams, side: usize, rng: Rng) -> SpinConfig {
    let mut chain = MetropolisChain::random_start(side, params.temperature, rng);
    for _ in 0..params.sweeps {
        chain.sweep();
    }
    chain.into_config()
}

/// `min(2000, 2 * floor(100000 / n_temp))`.
pub fn configs_per_temperature(n_temp: usize) -> usize {
    assert!(n_temp > 0);
    (2 * (100_000 / n_temp)).min(2_000)
}

/// Grid temperature `index / 10` (exact for the knots).
pub fn grid_temperature(index: usize) -> f64 {
    index as f64 / 10.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub side: usize,
    pub n_temp: usize,
    /// Overrides the standard per-temperature count; must be even.
    pub n_conf: Option<usize>,
    pub sweeps: usize,
    pub base_seed: u64,
}

impl DatasetSpec {
    pub fn new(side: usize, n_temp: usize, base_seed: u64) -> Self {
        Self {
            side,
            n_temp,
            n_conf: None,
            sweeps: DEFAULT_SWEEPS,
            base_seed,
        }
    }

    pub fn resolved_n_conf(&self) -> usize {
        self.n_conf
            .unwrap_or_else(|| configs_per_temperature(self.n_temp))
    }
}

/// Configurations grouped by grid temperature `0, 0.1, ..., 0.1 (n_temp - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    side: usize,
    base_seed: u64,
    sweeps: usize,
    per_temperature: Vec<Vec<SpinConfig>>,
}

impl Dataset {
    pub fn from_parts(
        side: usize,
        base_seed: u64,
        sweeps: usize,
        per_temperature: Vec<Vec<SpinConfig>>,
    ) -> Result<Self> {
        if per_temperature.is_empty() {
            return Err(Error::EmptyInput("dataset has no temperatures"));
        }
        let n_conf = per_temperature[0].len();
        for block in &per_temperature {
            if block.len() != n_conf {
                return Err(Error::DimensionMismatch {
                    expected: n_conf,
                    got: block.len(),
                });
            }
            if let Some(c) = block.iter().find(|c| c.side() != side) {
                return Err(Error::DimensionMismatch {
                    expected: side,
                    got: c.side(),
                });
            }
        }
        Ok(Self {
            side,
            base_seed,
            sweeps,
            per_temperature,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_visible(&self) -> usize {
        self.side * self.side
    }

    pub fn n_temp(&self) -> usize {
        self.per_temperature.len()
    }

    pub fn n_conf(&self) -> usize {
        self.per_temperature[0].len()
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn temperatures(&self) -> Vec<f64> {
        (0..self.n_temp()).map(grid_temperature).collect()
    }

    pub fn t_max(&self) -> f64 {
        grid_temperature(self.n_temp() - 1)
    }

    pub fn at(&self, temperature_index: usize) -> &[SpinConfig] {
        &self.per_temperature[temperature_index]
    }

    pub fn blocks(&self) -> &[Vec<SpinConfig>] {
        &self.per_temperature
    }

    /// Even-indexed configurations of every temperature, in temperature order.
    pub fn train_half(&self) -> Vec<&SpinConfig> {
        self.half(0)
    }

    /// Odd-indexed configurations of every temperature, in temperature order.
    pub fn test_half(&self) -> Vec<&SpinConfig> {
        self.half(1)
    }

    fn half(&self, parity: usize) -> Vec<&SpinConfig> {
        self.per_temperature
            .iter()
            .flat_map(|b| b.iter().skip(parity).step_by(2))
            .collect()
    }

    /// Test-half configurations at one temperature index.
    pub fn test_at(&self, temperature_index: usize) -> Vec<&SpinConfig> {
        self.per_temperature[temperature_index]
            .iter()
            .skip(1)
            .step_by(2)
            .collect()
    }
}

pub fn generate_dataset(side: usize, n_temp: usize, base_seed: u64) -> Result<Dataset> {
    generate(&DatasetSpec::new(side, n_temp, base_seed))
}

pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.side < 2 {
        return Err(Error::InvalidParameter(format!(
            "side length must be >= 2, got {}",
            spec.side
        )));
    }
    if spec.n_temp < 2 {
        return Err(Error::InvalidParameter(format!(
            "n_temp must be >= 2, got {}",
            spec.n_temp
        )));
    }
    if spec.sweeps == 0 {
        return Err(Error::InvalidParameter("sweeps must be >= 1".into()));
    }
    let n_conf = spec.resolved_n_conf();
    if n_conf == 0 || n_conf % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "n_conf must be positive and even, got {n_conf}"
        )));
    }
    let jobs: Vec<(usize, usize)> = (0..spec.n_temp)
        .flat_map(|t| (0..n_conf).map(move |k| (t, k)))
        .collect();
    let flat: Vec<SpinConfig> = jobs
        .par_iter()
        .map(|&(t, k)| {
            let params = SamplerParams::new(grid_temperature(t), spec.sweeps, spec.base_seed)
                .expect("grid temperatures are valid");
            let rng = rng::stream(spec.base_seed, &[tag::DATASET, t as u64, k as u64]);
            equilibrate_with(&params, spec.side, rng)
        })
        .collect();
    let mut it = flat.into_iter();
    let per_temperature = (0..spec.n_temp)
        .map(|_| it.by_ref().take(n_conf).collect())
        .collect();
    Dataset::from_parts(spec.side, spec.base_seed, spec.sweeps, per_temperature)
}
