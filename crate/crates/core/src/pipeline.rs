//! Artifact-producing commands behind the CLI. Every command reads its
//! inputs from, and writes its outputs to, one output directory, so the
//! stages can run one at a time or chained by [`cmd_pipeline`].
//!
//! File names (`L` side, `N` = N_temp, `H` = N_h):
//! `dataset_L7_N30.irbm`, `calibration_L7_N30.csv`, `model_L7_N30_H9.rbmw`,
//! `train_L7_N30_H9.csv`, `trajectory_L7_N30_H9.csv`, `sweep_L7_N30.csv`,
//! `spectral_L7_N30_H9.csv`, `eigvec_L7_N30_H9_k01.pgm`, `fit_points_L7.csv`,
//! `fit_L7.csv`, `failures_<stage>.csv`, `summary.md`, `manifest.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fitkit::{fit_emin_law, parameter_trend, FitResult};
use crate::flow::{self, argmin_energy, find_fixed_point, grid_flow_seed, grid_train_config, run_flow};
use crate::io::{self, atomic_write, read_file, SweepRow};
use crate::rbm::{self, RbmModel};
use crate::rng::PRNG_ID;
use crate::sampler::{self, Dataset};
use crate::spectral::{classify_report, to_pgm, weight_spectrum, NullModel};
use crate::thermometer::{calibrate, CalibrationCurve};

pub const WORKERS_ENV: &str = "RBMFLOW_WORKERS";

fn dataset_name(l: usize, n: usize) -> String {
    format!("dataset_L{l}_N{n}.irbm")
}

fn calibration_name(l: usize, n: usize) -> String {
    format!("calibration_L{l}_N{n}.csv")
}

fn model_name(l: usize, n: usize, h: usize) -> String {
    format!("model_L{l}_N{n}_H{h}.rbmw")
}

fn train_name(l: usize, n: usize, h: usize) -> String {
    format!("train_L{l}_N{n}_H{h}.csv")
}

fn trajectory_name(l: usize, n: usize, h: usize) -> String {
    format!("trajectory_L{l}_N{n}_H{h}.csv")
}

fn sweep_name(l: usize, n: usize) -> String {
    format!("sweep_L{l}_N{n}.csv")
}

fn spectral_name(l: usize, n: usize, h: usize) -> String {
    format!("spectral_L{l}_N{n}_H{h}.csv")
}

fn fit_name(l: usize) -> String {
    format!("fit_L{l}.csv")
}

fn fit_points_name(l: usize) -> String {
    format!("fit_points_L{l}.csv")
}

/// Command output directory plus the loaded config.
pub struct Run {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub side: usize,
    pub n_temp: usize,
    pub n_hidden: Option<usize>,
    pub message: String,
}

impl Run {
    pub fn new(config: ExperimentConfig, out: Option<PathBuf>) -> Result<Self> {
        config.validate()?;
        let out = out.unwrap_or_else(|| config.output_dir.clone());
        Ok(Self { config, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        atomic_write(&self.path(name), bytes)
    }

    fn read(&self, name: &str) -> Result<Vec<u8>> {
        read_file(&self.path(name))
    }

    fn ensure_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))
    }

    fn hidden_grid(&self, side: usize) -> Vec<usize> {
        self.config
            .sweep
            .n_hidden
            .resolve(side * side)
            .expect("validated with the config")
    }

    /// `(L, N_temp, N_h)` for every trained model.
    fn model_jobs(&self) -> Vec<(usize, usize, usize)> {
        self.config
            .grid()
            .into_iter()
            .flat_map(|(l, n)| self.hidden_grid(l).into_iter().map(move |h| (l, n, h)))
            .collect()
    }

    fn load_dataset(&self, l: usize, n: usize) -> Result<Dataset> {
        io::decode_dataset(&self.read(&dataset_name(l, n))?)
    }

    fn load_curve(&self, l: usize, n: usize) -> Result<CalibrationCurve> {
        io::read_calibration_csv(l, &self.read(&calibration_name(l, n))?)
    }

    fn load_model(&self, l: usize, n: usize, h: usize) -> Result<RbmModel> {
        io::decode_model(&self.read(&model_name(l, n, h))?)
    }

    fn write_failures(&self, stage: &str, failures: &[Failure]) -> Result<()> {
        let name = format!("failures_{stage}.csv");
        if failures.is_empty() {
            let p = self.path(&name);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
            return Ok(());
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["L", "N_temp", "N_h", "error"]).expect("in memory");
        for f in failures {
            w.write_record([
                f.side.to_string(),
                f.n_temp.to_string(),
                f.n_hidden.map_or(String::new(), |h| h.to_string()),
                f.message.clone(),
            ])
            .expect("in memory");
        }
        self.write(&name, &w.into_inner().expect("in memory"))
    }
}

/// Run `f` on a pool of `workers` threads (default: rayon's choice).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

pub fn cmd_generate(run: &Run) -> Result<Vec<PathBuf>> {
    run.ensure_out()?;
    let mut written = Vec::new();
    for (l, n) in run.config.grid() {
        let ds = sampler::generate(&run.config.dataset_spec(l, n))?;
        run.write(&dataset_name(l, n), &io::encode_dataset(&ds)?)?;
        written.push(run.path(&dataset_name(l, n)));
    }
    write_manifest(run)?;
    Ok(written)
}

pub fn cmd_calibrate(run: &Run) -> Result<()> {
    run.ensure_out()?;
    for (l, n) in run.config.grid() {
        let curve = calibrate(&run.load_dataset(l, n)?)?;
        run.write(&calibration_name(l, n), &io::calibration_csv(&curve))?;
    }
    write_manifest(run)
}

fn train_one(run: &Run, ds: &Dataset, l: usize, n: usize, h: usize) -> Result<()> {
    let cfg = grid_train_config(&run.config.train_config(l, n), h);
    let report = rbm::train(ds, h, &cfg)?;
    run.write(&model_name(l, n, h), &io::encode_model(&report.model)?)?;
    run.write(&train_name(l, n, h), &io::train_csv(&report.records))
}

pub fn cmd_train(run: &Run) -> Result<Vec<Failure>> {
    run.ensure_out()?;
    let mut failures = Vec::new();
    for (l, n) in run.config.grid() {
        let ds = run.load_dataset(l, n)?;
        let outcomes: Vec<(usize, Result<()>)> = run
            .hidden_grid(l)
            .into_par_iter()
            .map(|h| (h, train_one(run, &ds, l, n, h)))
            .collect();
        for (h, r) in outcomes {
            match r {
                Err(e @ Error::Io { .. }) => return Err(e),
                Err(e) => failures.push(Failure {
                    side: l,
                    n_temp: n,
                    n_hidden: Some(h),
                    message: e.to_string(),
                }),
                Ok(()) => {}
            }
        }
    }
    run.write_failures("train", &failures)?;
    write_manifest(run)?;
    Ok(failures)
}

fn flow_one(run: &Run, ds: &Dataset, curve: &CalibrationCurve, l: usize, n: usize, h: usize) -> Result<SweepRow> {
    let model = run.load_model(l, n, h)?;
    let fc = run.config.flow_config(l, n);
    let traj = run_flow(&model, &ds.test_half(), curve, fc.max_iters, grid_flow_seed(&fc, h))?;
    run.write(&trajectory_name(l, n, h), &io::trajectory_csv(&traj))?;
    let fp = find_fixed_point(&traj, fc.window, fc.tolerance)?;
    Ok(SweepRow {
        n_hidden: h,
        fixed: Some((fp.energy, fp.temperature, fp.converged, fp.iterations)),
    })
}

/// Flow every trained model and tabulate fixed points. Grid points without a
/// model (or whose flow fails) get an empty row and a failure entry.
pub fn cmd_flow(run: &Run) -> Result<Vec<Failure>> {
    run.ensure_out()?;
    let mut failures = Vec::new();
    for (l, n) in run.config.grid() {
        let ds = run.load_dataset(l, n)?;
        let curve = run.load_curve(l, n)?;
        let rows: Vec<(usize, Result<SweepRow>)> = run
            .hidden_grid(l)
            .into_par_iter()
            .map(|h| (h, flow_one(run, &ds, &curve, l, n, h)))
            .collect();
        let mut table = Vec::new();
        for (h, r) in rows {
            match r {
                Ok(row) => table.push(row),
                Err(e) => {
                    failures.push(Failure {
                        side: l,
                        n_temp: n,
                        n_hidden: Some(h),
                        message: e.to_string(),
                    });
                    table.push(SweepRow {
                        n_hidden: h,
                        fixed: None,
                    });
                }
            }
        }
        run.write(&sweep_name(l, n), &io::sweep_csv(&table))?;
    }
    run.write_failures("flow", &failures)?;
    write_manifest(run)?;
    Ok(failures)
}

/// Train and flow the whole `N_h` grid in one pass.
pub fn cmd_sweep(run: &Run) -> Result<Vec<Failure>> {
    run.ensure_out()?;
    let mut failures = Vec::new();
    for (l, n) in run.config.grid() {
        let ds = run.load_dataset(l, n)?;
        let curve = run.load_curve(l, n)?;
        let result = flow::sweep_nh(
            &ds,
            &curve,
            &run.hidden_grid(l),
            &run.config.train_config(l, n),
            &run.config.flow_config(l, n),
        )?;
        for p in &result.points {
            match &p.outcome {
                Ok(s) => {
                    let h = p.n_hidden;
                    run.write(&model_name(l, n, h), &io::encode_model(&s.train.model)?)?;
                    run.write(&train_name(l, n, h), &io::train_csv(&s.train.records))?;
                    run.write(&trajectory_name(l, n, h), &io::trajectory_csv(&s.trajectory))?;
                }
                Err(msg) => failures.push(Failure {
                    side: l,
                    n_temp: n,
                    n_hidden: Some(p.n_hidden),
                    message: msg.clone(),
                }),
            }
        }
        run.write(&sweep_name(l, n), &io::sweep_csv(&io::sweep_rows(&result.points)))?;
    }
    run.write_failures("sweep", &failures)?;
    write_manifest(run)?;
    Ok(failures)
}

fn spectra_one(run: &Run, null: &NullModel, l: usize, n: usize, h: usize) -> Result<()> {
    let model = run.load_model(l, n, h)?;
    let mut report = weight_spectrum(&model)?;
    classify_report(&mut report, null)?;
    run.write(&spectral_name(l, n, h), &io::spectral_csv(&report))?;
    // Only the top N_h eigenvectors span the column space of W; the rest
    // belong to the (numerically) zero eigenvalue and are arbitrary.
    for (k, u) in report.eigenvectors.iter().take(h.min(l * l)).enumerate() {
        run.write(&format!("eigvec_L{l}_N{n}_H{h}_k{:02}.pgm", k + 1), &to_pgm(u, l))?;
    }
    Ok(())
}

pub fn cmd_spectra(run: &Run) -> Result<Vec<Failure>> {
    run.ensure_out()?;
    let mut failures = Vec::new();
    for &l in &run.config.dataset.sides {
        let null = NullModel::new(l, run.config.spectral.null_draws, run.config.null_seed());
        let jobs: Vec<_> = run.model_jobs().into_iter().filter(|j| j.0 == l).collect();
        let outcomes: Vec<_> = jobs
            .par_iter()
            .map(|&(l, n, h)| ((l, n, h), spectra_one(run, &null, l, n, h)))
            .collect();
        for ((l, n, h), r) in outcomes {
            if let Err(e) = r {
                failures.push(Failure {
                    side: l,
                    n_temp: n,
                    n_hidden: Some(h),
                    message: e.to_string(),
                });
            }
        }
    }
    run.write_failures("spectra", &failures)?;
    write_manifest(run)?;
    Ok(failures)
}

/// Argmin row of a sweep table, ties to the smaller `N_h`.
pub fn sweep_minimum(rows: &[SweepRow]) -> Option<(usize, f64)> {
    argmin_energy(rows.iter().filter_map(|r| r.energy().map(|e| (r.n_hidden, e))))
}

/// Fit `E_min(N_temp)` per lattice size from the sweep tables.
pub fn cmd_fit(run: &Run) -> Result<Vec<Failure>> {
    run.ensure_out()?;
    let mut failures = Vec::new();
    for &l in &run.config.dataset.sides {
        let mut points = Vec::new();
        for &n in &run.config.dataset.n_temps {
            let rows = io::read_sweep_csv(&run.read(&sweep_name(l, n))?)?;
            if let Some((_, e)) = sweep_minimum(&rows) {
                points.push((n as f64, e));
            }
        }
        run.write(&fit_points_name(l), &io::points_csv(&points))?;
        match fit_emin_law(&points, run.config.fit.cutoff) {
            Ok(fit) => run.write(&fit_name(l), &io::fit_csv(&fit))?,
            Err(e) => {
                let p = run.path(&fit_name(l));
                if p.exists() {
                    std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                }
                failures.push(Failure {
                    side: l,
                    n_temp: 0,
                    n_hidden: None,
                    message: e.to_string(),
                })
            }
        }
    }
    run.write_failures("fit", &failures)?;
    write_manifest(run)?;
    Ok(failures)
}

/// Summary tables assembled only from the CSV artifacts already on disk.
pub fn cmd_report(run: &Run) -> Result<String> {
    run.ensure_out()?;
    let mut s = String::new();
    writeln!(s, "# Summary\n").unwrap();
    writeln!(s, "root seed: {}\n", run.config.seed).unwrap();

    writeln!(s, "## Fixed points\n").unwrap();
    writeln!(s, "| L | N_temp | N_h | sqrt(N_h/N_v) | E* | T* | converged | iters | min |").unwrap();
    writeln!(s, "|---|---|---|---|---|---|---|---|---|").unwrap();
    for (l, n) in run.config.grid() {
        let Ok(bytes) = run.read(&sweep_name(l, n)) else {
            continue;
        };
        let rows = io::read_sweep_csv(&bytes)?;
        let best = sweep_minimum(&rows).map(|b| b.0);
        for r in &rows {
            let ratio = (r.n_hidden as f64 / (l * l) as f64).sqrt();
            match r.fixed {
                Some((e, t, c, k)) => writeln!(
                    s,
                    "| {l} | {n} | {} | {ratio:.3} | {e:.4} | {t:.4} | {c} | {k} | {} |",
                    r.n_hidden,
                    if best == Some(r.n_hidden) { "*" } else { "" }
                ),
                None => writeln!(s, "| {l} | {n} | {} | {ratio:.3} | failed | | | | |", r.n_hidden),
            }
            .unwrap();
        }
    }

    writeln!(s, "\n## N_h,min\n").unwrap();
    writeln!(s, "| L | N_temp | N_h,min | E_min |").unwrap();
    writeln!(s, "|---|---|---|---|").unwrap();
    for (l, n) in run.config.grid() {
        let Ok(bytes) = run.read(&sweep_name(l, n)) else {
            continue;
        };
        if let Some((h, e)) = sweep_minimum(&io::read_sweep_csv(&bytes)?) {
            writeln!(s, "| {l} | {n} | {h} | {e:.4} |").unwrap();
        }
    }

    writeln!(s, "\n## Non-random eigenvector ratio\n").unwrap();
    writeln!(s, "| L | N_temp | N_h | ratio |").unwrap();
    writeln!(s, "|---|---|---|---|").unwrap();
    for (l, n, h) in run.model_jobs() {
        let Ok(bytes) = run.read(&spectral_name(l, n, h)) else {
            continue;
        };
        let rows = io::read_spectral_csv(&bytes)?;
        let top = &rows[..h.min(rows.len())];
        let non_random = top
            .iter()
            .filter(|r| r.class.as_deref() == Some("non-random"))
            .count();
        writeln!(s, "| {l} | {n} | {h} | {:.3} |", non_random as f64 / top.len() as f64).unwrap();
    }

    writeln!(s, "\n## E_min fit\n").unwrap();
    writeln!(s, "| L | a | b | rss | n_points | cutoff |").unwrap();
    writeln!(s, "|---|---|---|---|---|---|").unwrap();
    let mut fits: Vec<(usize, FitResult)> = Vec::new();
    for &l in &run.config.dataset.sides {
        let Ok(bytes) = run.read(&fit_name(l)) else {
            continue;
        };
        let f = io::read_fit_csv(&bytes)?;
        writeln!(
            s,
            "| {l} | {:.5} | {:.5} | {:.3e} | {} | {} |",
            f.a, f.b, f.rss, f.n_points, f.cutoff
        )
        .unwrap();
        fits.push((l * l, f));
    }
    if let Ok(trend) = parameter_trend(&fits) {
        writeln!(
            s,
            "\nwith growing N_v: a {}, b {}",
            trend.a_trend.as_str(),
            trend.b_trend.as_str()
        )
        .unwrap();
    }
    run.write("summary.md", s.as_bytes())?;
    write_manifest(run)?;
    Ok(s)
}

pub fn cmd_pipeline(run: &Run) -> Result<Vec<Failure>> {
    cmd_generate(run)?;
    cmd_calibrate(run)?;
    let mut failures = cmd_sweep(run)?;
    failures.extend(cmd_spectra(run)?);
    failures.extend(cmd_fit(run)?);
    cmd_report(run)?;
    Ok(failures)
}

#[derive(Serialize)]
struct Manifest<'a> {
    dataset_format_version: u32,
    model_format_version: u32,
    prng: &'a str,
    root_seed: u64,
    seeds: BTreeMap<String, u64>,
    config: &'a ExperimentConfig,
    /// File name -> size in bytes, for everything else in the directory.
    artifacts: BTreeMap<String, u64>,
}

/// Rewrite `manifest.json` from the directory contents. No clocks or host
/// data go in, so reruns produce the same bytes.
pub fn write_manifest(run: &Run) -> Result<()> {
    let mut seeds = BTreeMap::new();
    for (l, n) in run.config.grid() {
        seeds.insert(format!("dataset_L{l}_N{n}"), run.config.dataset_spec(l, n).base_seed);
        let tc = run.config.train_config(l, n);
        let fc = run.config.flow_config(l, n);
        for h in run.hidden_grid(l) {
            seeds.insert(format!("train_L{l}_N{n}_H{h}"), grid_train_config(&tc, h).seed);
            seeds.insert(format!("flow_L{l}_N{n}_H{h}"), grid_flow_seed(&fc, h));
        }
    }
    seeds.insert("spectral_null".into(), run.config.null_seed());
    let mut artifacts = BTreeMap::new();
    let entries = std::fs::read_dir(&run.out).map_err(|e| Error::io(&run.out, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&run.out, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == "manifest.json" || name.starts_with('.') {
            continue;
        }
        let len = entry.metadata().map_err(|e| Error::io(entry.path(), e))?.len();
        artifacts.insert(name, len);
    }
    let m = Manifest {
        dataset_format_version: io::DATASET_VERSION,
        model_format_version: io::MODEL_VERSION,
        prng: PRNG_ID,
        root_seed: run.config.seed,
        seeds,
        config: &run.config,
        artifacts,
    };
    let mut text = serde_json::to_string_pretty(&m).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    run.write("manifest.json", text.as_bytes())
}

/// Directory listing used by the determinism checks: `(name, bytes)` sorted.
pub fn snapshot(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        out.push((name, read_file(&entry.path())?));
    }
    out.sort();
    Ok(out)
}
