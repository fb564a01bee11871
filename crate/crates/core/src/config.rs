//! Experiment configuration (TOML) and the seed tree hanging off the root seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitkit::DEFAULT_CUTOFF;
use crate::flow::{square_grid, FlowConfig};
use crate::rbm::TrainConfig;
use crate::rng::{derive_seed, tag};
use crate::sampler::{DatasetSpec, DEFAULT_SWEEPS};
use crate::spectral::DEFAULT_NULL_DRAWS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HiddenGrid {
    /// `"squares"`: `1, 4, ..., floor(sqrt(N_v))^2`.
    Named(String),
    List(Vec<usize>),
}

impl HiddenGrid {
    pub fn resolve(&self, n_visible: usize) -> Result<Vec<usize>> {
        let grid = match self {
            HiddenGrid::Named(s) if s == "squares" => square_grid(n_visible),
            HiddenGrid::Named(s) => {
                return Err(Error::Config(format!(
                    "unknown N_h grid {s:?} (use \"squares\" or a list)"
                )))
            }
            HiddenGrid::List(v) => v.clone(),
        };
        if grid.is_empty() || grid.contains(&0) {
            return Err(Error::Config("N_h grid must be nonempty and positive".into()));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub sides: Vec<usize>,
    pub n_temps: Vec<usize>,
    pub sweeps: usize,
    /// Overrides the per-temperature count rule.
    pub n_conf: Option<usize>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            sides: vec![7],
            n_temps: vec![30],
            sweeps: DEFAULT_SWEEPS,
            n_conf: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub n_hidden: HiddenGrid,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            n_hidden: HiddenGrid::Named("squares".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralSection {
    pub null_draws: usize,
}

impl Default for SpectralSection {
    fn default() -> Self {
        Self {
            null_draws: DEFAULT_NULL_DRAWS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub cutoff: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            cutoff: DEFAULT_CUTOFF,
        }
    }
}

/// Training and flow sections reuse the library config types; their `seed`
/// fields are ignored here because every seed is derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; `None` defers to the CLI / environment.
    pub workers: Option<usize>,
    pub dataset: DatasetSection,
    pub train: TrainConfig,
    pub sweep: SweepSection,
    pub flow: FlowConfig,
    pub spectral: SpectralSection,
    pub fit: FitSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            workers: None,
            dataset: DatasetSection::default(),
            train: TrainConfig::default(),
            sweep: SweepSection::default(),
            flow: FlowConfig::default(),
            spectral: SpectralSection::default(),
            fit: FitSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.sides.is_empty() || d.n_temps.is_empty() {
            return Err(Error::Config("dataset.sides and dataset.n_temps must be nonempty".into()));
        }
        if let Some(&l) = d.sides.iter().find(|&&l| l < 2) {
            return Err(Error::Config(format!("lattice side {l} < 2")));
        }
        if d.n_temps.contains(&0) {
            return Err(Error::Config("N_temp must be >= 1".into()));
        }
        if d.sweeps == 0 {
            return Err(Error::Config("dataset.sweeps must be >= 1".into()));
        }
        if d.n_conf.is_some_and(|n| n < 2 || n % 2 != 0) {
            return Err(Error::Config("dataset.n_conf must be even and >= 2".into()));
        }
        for &l in &d.sides {
            self.sweep.n_hidden.resolve(l * l)?;
        }
        self.train
            .validate()
            .map_err(|e| Error::Config(format!("train: {e}")))?;
        let f = &self.flow;
        if f.window == 0 || f.max_iters < f.window || !(f.tolerance > 0.0) {
            return Err(Error::Config(
                "flow needs window >= 1, max_iters >= window and tolerance > 0".into(),
            ));
        }
        if self.spectral.null_draws == 0 {
            return Err(Error::Config("spectral.null_draws must be >= 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<(usize, usize)> {
        self.dataset
            .sides
            .iter()
            .flat_map(|&l| self.dataset.n_temps.iter().map(move |&n| (l, n)))
            .collect()
    }

    pub fn dataset_spec(&self, side: usize, n_temp: usize) -> DatasetSpec {
        DatasetSpec {
            side,
            n_temp,
            n_conf: self.dataset.n_conf,
            sweeps: self.dataset.sweeps,
            base_seed: derive_seed(self.seed, &[tag::DATASET, side as u64, n_temp as u64]),
        }
    }

    /// Base training config for one dataset; `flow::grid_train_config` adds `N_h`.
    pub fn train_config(&self, side: usize, n_temp: usize) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, &[tag::TRAIN, side as u64, n_temp as u64]),
            ..self.train.clone()
        }
    }

    pub fn flow_config(&self, side: usize, n_temp: usize) -> FlowConfig {
        FlowConfig {
            seed: derive_seed(self.seed, &[tag::FLOW, side as u64, n_temp as u64]),
            ..self.flow.clone()
        }
    }

    pub fn null_seed(&self) -> u64 {
        derive_seed(self.seed, &[tag::SPECTRAL_NULL])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_standard_hyperparameters() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg.train.epochs, 100_000);
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!(cfg.train.momentum, 0.5);
        assert_eq!(cfg.train.batch_size, 100);
        assert_eq!(cfg.dataset.sweeps, 100);
        assert_eq!(cfg.fit.cutoff, 100.0);
        assert_eq!(cfg.sweep.n_hidden.resolve(49).unwrap(), vec![1, 4, 9, 16, 25, 36, 49]);
    }

    #[test]
    fn parses_desk_scale_file() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            seed = 42
            output_dir = "runs/a"
            [dataset]
            sides = [7]
            n_temps = [30, 50]
            [train]
            epochs = 200
            [sweep]
            n_hidden = [1, 9]
            [flow]
            max_iters = 20
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.grid(), vec![(7, 30), (7, 50)]);
        assert_eq!(cfg.sweep.n_hidden.resolve(49).unwrap(), vec![1, 9]);
        assert_eq!(cfg.flow.max_iters, 20);
        assert_eq!(cfg.flow.window, 5);
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "[dataset]\nsides = []",
            "[dataset]\nsides = [1]",
            "[sweep]\nn_hidden = \"cubes\"",
            "[sweep]\nn_hidden = []",
            "[train]\nmomentum = 1.5",
            "[flow]\nwindow = 0",
            "unknown_key = 3",
            "[dataset]\nn_conf = 3",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn seeds_differ_across_components_and_grid_points() {
        let cfg = ExperimentConfig::default();
        let a = cfg.dataset_spec(7, 30).base_seed;
        assert_ne!(a, cfg.dataset_spec(7, 50).base_seed);
        assert_ne!(a, cfg.train_config(7, 30).seed);
        assert_ne!(cfg.train_config(7, 30).seed, cfg.flow_config(7, 30).seed);
    }
}
