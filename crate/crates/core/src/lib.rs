//! Ising Monte Carlo datasets, ±1 restricted Boltzmann machines trained by
//! CD-1, the iterated-reconstruction ("RBM flow") fixed point in temperature
//! and energy, and spectral analysis of the learned weights.

pub mod config;
pub mod error;
pub mod fitkit;
pub mod io;
pub mod flow;
pub mod lattice;
pub mod pipeline;
pub mod rbm;
pub mod rng;
pub mod sampler;
pub mod spectral;
pub mod thermometer;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use lattice::{flip_delta, total_energy, LatticeGeometry, SpinConfig};
pub use rbm::{RbmModel, TrainConfig, TrainReport};
pub use sampler::{generate_dataset, Dataset, DatasetSpec, SamplerParams};
pub use thermometer::{calibrate, estimate_temperature, CalibrationCurve};
