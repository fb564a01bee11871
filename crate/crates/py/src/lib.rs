//! Python bindings for the `rbmflow` core crate.
//!
//! Arrays cross the boundary as nested lists of floats; the heavy loops stay
//! in Rust and release the GIL.

// pyo3 0.22 macro expansion trips this on every `PyResult` function.
#![allow(clippy::useless_conversion)]

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use rbmflow::flow::{self, FlowConfig};
use rbmflow::{fitkit, io, rbm, spectral};

fn err(e: rbmflow::Error) -> PyErr {
    match e {
        rbmflow::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(name = "SpinConfig", module = "pyrbmflow")]
#[derive(Clone)]
struct PySpinConfig {
    inner: rbmflow::SpinConfig,
}

#[pymethods]
impl PySpinConfig {
    #[new]
    fn new(side: usize, spins: Vec<i8>) -> PyResult<Self> {
        rbmflow::SpinConfig::new(side, spins)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    #[staticmethod]
    fn uniform(side: usize, spin: i8) -> Self {
        Self {
            inner: rbmflow::SpinConfig::uniform(side, spin),
        }
    }

    #[staticmethod]
    fn checkerboard(side: usize) -> Self {
        Self {
            inner: rbmflow::SpinConfig::checkerboard(side),
        }
    }

    #[getter]
    fn side(&self) -> usize {
        self.inner.side()
    }

    fn spins(&self) -> Vec<i8> {
        self.inner.spins().to_vec()
    }

    fn energy_per_site(&self) -> f64 {
        self.inner.energy_per_site()
    }

    fn total_energy(&self) -> f64 {
        rbmflow::total_energy(&self.inner)
    }

    fn magnetization(&self) -> f64 {
        self.inner.magnetization()
    }

    fn flip(&mut self, site: usize) -> PyResult<()> {
        if site >= self.inner.n_sites() {
            return Err(PyValueError::new_err("site out of range"));
        }
        self.inner.flip(site);
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!(
            "SpinConfig(side={}, E={:.4})",
            self.inner.side(),
            self.inner.energy_per_site()
        )
    }
}

#[pyclass(name = "Dataset", module = "pyrbmflow")]
struct PyDataset {
    inner: rbmflow::Dataset,
}

#[pymethods]
impl PyDataset {
    #[getter]
    fn side(&self) -> usize {
        self.inner.side()
    }

    #[getter]
    fn n_temp(&self) -> usize {
        self.inner.n_temp()
    }

    #[getter]
    fn n_conf(&self) -> usize {
        self.inner.n_conf()
    }

    fn temperatures(&self) -> Vec<f64> {
        self.inner.temperatures()
    }

    /// Configurations at grid index `i`.
    fn at(&self, i: usize) -> PyResult<Vec<PySpinConfig>> {
        if i >= self.inner.n_temp() {
            return Err(PyValueError::new_err("temperature index out of range"));
        }
        Ok(self
            .inner
            .at(i)
            .iter()
            .map(|c| PySpinConfig { inner: c.clone() })
            .collect())
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        let bytes = io::encode_dataset(&self.inner).map_err(err)?;
        io::atomic_write(&path, &bytes).map_err(err)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let bytes = io::read_file(&path).map_err(err)?;
        io::decode_dataset(&bytes)
            .map(|inner| Self { inner })
            .map_err(err)
    }
}

#[pyfunction]
#[pyo3(signature = (side, n_temp, seed, n_conf=None, sweeps=None))]
fn generate_dataset(
    py: Python<'_>,
    side: usize,
    n_temp: usize,
    seed: u64,
    n_conf: Option<usize>,
    sweeps: Option<usize>,
) -> PyResult<PyDataset> {
    let mut spec = rbmflow::DatasetSpec::new(side, n_temp, seed);
    spec.n_conf = n_conf;
    if let Some(s) = sweeps {
        spec.sweeps = s;
    }
    py.allow_threads(|| rbmflow::sampler::generate(&spec))
        .map(|inner| PyDataset { inner })
        .map_err(err)
}

#[pyclass(name = "CalibrationCurve", module = "pyrbmflow")]
struct PyCalibrationCurve {
    inner: rbmflow::CalibrationCurve,
}

#[pymethods]
impl PyCalibrationCurve {
    /// `(T, mean_energy, std_energy)` per grid temperature.
    fn points(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .points()
            .iter()
            .map(|p| (p.temperature, p.mean_energy, p.std_energy))
            .collect()
    }

    fn temperature_of(&self, energy: f64) -> f64 {
        self.inner.temperature_of(energy)
    }

    /// Mean and spread of the temperatures assigned to `energies`.
    fn estimate(&self, energies: Vec<f64>) -> PyResult<(f64, f64)> {
        rbmflow::estimate_temperature(&self.inner, &energies).map_err(err)
    }
}

#[pyfunction]
fn calibrate(dataset: &PyDataset) -> PyResult<PyCalibrationCurve> {
    rbmflow::calibrate(&dataset.inner)
        .map(|inner| PyCalibrationCurve { inner })
        .map_err(err)
}

#[pyclass(name = "RbmModel", module = "pyrbmflow")]
#[derive(Clone)]
struct PyRbmModel {
    inner: rbmflow::RbmModel,
}

#[pymethods]
impl PyRbmModel {
    /// Build from a `n_visible x n_hidden` weight matrix and both bias vectors.
    #[new]
    fn new(weights: Vec<Vec<f64>>, visible_bias: Vec<f64>, hidden_bias: Vec<f64>) -> PyResult<Self> {
        let nv = weights.len();
        let nh = weights.first().map_or(0, Vec::len);
        if weights.iter().any(|r| r.len() != nh) {
            return Err(PyValueError::new_err("ragged weight matrix"));
        }
        let w = Array2::from_shape_vec((nv, nh), weights.concat())
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        rbmflow::RbmModel::from_parts(w, Array1::from(visible_bias), Array1::from(hidden_bias))
            .map(|inner| Self { inner })
            .map_err(err)
    }

    #[getter]
    fn n_visible(&self) -> usize {
        self.inner.n_visible()
    }

    #[getter]
    fn n_hidden(&self) -> usize {
        self.inner.n_hidden()
    }

    fn weights(&self) -> Vec<Vec<f64>> {
        self.inner.weights().rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn visible_bias(&self) -> Vec<f64> {
        self.inner.visible_bias().to_vec()
    }

    fn hidden_bias(&self) -> Vec<f64> {
        self.inner.hidden_bias().to_vec()
    }

    fn hidden_expectation(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.hidden_expectation(&v).map_err(err)
    }

    fn visible_expectation(&self, h: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.visible_expectation(&h).map_err(err)
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        let bytes = io::encode_model(&self.inner).map_err(err)?;
        io::atomic_write(&path, &bytes).map_err(err)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let bytes = io::read_file(&path).map_err(err)?;
        io::decode_model(&bytes)
            .map(|inner| Self { inner })
            .map_err(err)
    }
}

/// Train on the even half of every temperature block.
///
/// Returns the model and `(epoch, train_err, test_err)` records.
#[pyfunction]
#[pyo3(signature = (dataset, n_hidden, epochs=100_000, seed=0, learning_rate=1e-3, momentum=0.5, batch_size=100))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: &PyDataset,
    n_hidden: usize,
    epochs: usize,
    seed: u64,
    learning_rate: f64,
    momentum: f64,
    batch_size: usize,
) -> PyResult<(PyRbmModel, Vec<(usize, f64, f64)>)> {
    let config = rbm::TrainConfig {
        learning_rate,
        momentum,
        epochs,
        batch_size,
        seed,
        ..Default::default()
    };
    let report = py
        .allow_threads(|| rbm::train(&dataset.inner, n_hidden, &config))
        .map_err(err)?;
    let records = report
        .records
        .iter()
        .map(|r| (r.epoch, r.train_err, r.test_err))
        .collect();
    Ok((PyRbmModel { inner: report.model }, records))
}

/// Flow the test half at every temperature through `model` and locate the
/// fixed point. Returns `(E*, T*, converged, iterations, trajectory)` where
/// row 0 is the unflowed ensemble and each row is `(iter, mean_E, std_E, T_est, T_spread)`.
#[pyfunction]
#[pyo3(signature = (model, dataset, curve, seed=0, max_iters=50, window=5, tolerance=0.01))]
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn fixed_point(
    py: Python<'_>,
    model: &PyRbmModel,
    dataset: &PyDataset,
    curve: &PyCalibrationCurve,
    seed: u64,
    max_iters: usize,
    window: usize,
    tolerance: f64,
) -> PyResult<(f64, f64, bool, usize, Vec<(usize, f64, f64, f64, f64)>)> {
    let config = FlowConfig {
        max_iters,
        window,
        tolerance,
        seed,
    };
    let (estimate, trajectory) = py
        .allow_threads(|| {
            let ensemble = dataset.inner.test_half();
            let traj = flow::run_flow(&model.inner, &ensemble, &curve.inner, config.max_iters, config.seed)?;
            let est = flow::find_fixed_point(&traj, config.window, config.tolerance)?;
            Ok::<_, rbmflow::Error>((est, traj))
        })
        .map_err(err)?;
    let rows = trajectory
        .records
        .iter()
        .map(|r| (r.iteration, r.mean_energy, r.std_energy, r.t_estimate, r.t_spread))
        .collect();
    Ok((
        estimate.energy,
        estimate.temperature,
        estimate.converged,
        estimate.iterations,
        rows,
    ))
}

/// Eigenvalues of `W W^T` (descending by magnitude) with the pattern class of
/// each eigenvector, plus the non-random ratio over the top `N_h`.
#[pyfunction]
#[pyo3(signature = (model, null_draws=10_000, null_seed=0))]
fn weight_spectrum(
    py: Python<'_>,
    model: &PyRbmModel,
    null_draws: usize,
    null_seed: u64,
) -> PyResult<(Vec<(f64, f64, String)>, f64)> {
    py.allow_threads(|| {
        let mut report = spectral::weight_spectrum(&model.inner)?;
        let null = spectral::NullModel::new(report.side, null_draws, null_seed);
        spectral::classify_report(&mut report, &null)?;
        let ratio = spectral::nonrandom_ratio(&report, model.inner.n_hidden())?;
        let classes = report.classification.as_deref().unwrap_or_default();
        let rows = report
            .eigenvalues
            .iter()
            .zip(classes)
            .map(|(&l, c)| (l, c.statistic, c.class.as_str().to_string()))
            .collect();
        Ok((rows, ratio))
    })
    .map_err(err)
}

/// Fit `E_min = -2 exp(-a N^b)` to `(N_temp, E_min)` points.
///
/// Returns `(a, b, rss, n_points, clamped)`.
#[pyfunction]
#[pyo3(signature = (points, cutoff=fitkit::DEFAULT_CUTOFF))]
fn fit_emin_law(points: Vec<(f64, f64)>, cutoff: f64) -> PyResult<(f64, f64, f64, usize, bool)> {
    fitkit::fit_emin_law(&points, cutoff)
        .map(|f| (f.a, f.b, f.rss, f.n_points, f.clamped))
        .map_err(err)
}

#[pyfunction]
fn emin_law(a: f64, b: f64, n_temp: f64) -> f64 {
    fitkit::emin_law(a, b, n_temp)
}

#[pymodule]
pub fn pyrbmflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpinConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyCalibrationCurve>()?;
    m.add_class::<PyRbmModel>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_point, m)?)?;
    m.add_function(wrap_pyfunction!(weight_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(fit_emin_law, m)?)?;
    m.add_function(wrap_pyfunction!(emin_law, m)?)?;
    Ok(())
}
