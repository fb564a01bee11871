use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rbmflow::pipeline::{self, Failure, Run, WORKERS_ENV};
use rbmflow::{Error, ExperimentConfig};

#[derive(Parser)]
#[command(name = "rbmflow", version, about = "Ising datasets, RBM flow fixed points and weight spectra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the root seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent grid points.
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo datasets, one file per (L, N_temp).
    Generate(Common),
    /// Energy-temperature calibration curves.
    Calibrate(Common),
    /// Train one RBM per N_h grid point.
    Train(Common),
    /// Flow trained models and tabulate fixed points.
    Flow(Common),
    /// Train and flow the whole N_h grid.
    Sweep(Common),
    /// Eigen-analysis of W W^T for every model.
    Spectra(Common),
    /// Fit E_min(N_temp) per lattice size.
    Fit(Common),
    /// Summary tables from the CSV artifacts.
    Report(Common),
    /// Everything above, in order.
    Pipeline(Common),
}

fn run(cli: Cli) -> Result<Vec<Failure>, Error> {
    let (common, which) = match &cli.command {
        Command::Generate(c) => (c, "generate"),
        Command::Calibrate(c) => (c, "calibrate"),
        Command::Train(c) => (c, "train"),
        Command::Flow(c) => (c, "flow"),
        Command::Sweep(c) => (c, "sweep"),
        Command::Spectra(c) => (c, "spectra"),
        Command::Fit(c) => (c, "fit"),
        Command::Report(c) => (c, "report"),
        Command::Pipeline(c) => (c, "pipeline"),
    };
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let workers = common.workers.or(config.workers);
    if workers == Some(0) {
        return Err(Error::Config("workers must be >= 1".into()));
    }
    let run = Run::new(config, common.out.clone())?;
    pipeline::with_workers(workers, || match which {
        "generate" => pipeline::cmd_generate(&run).map(|_| Vec::new()),
        "calibrate" => pipeline::cmd_calibrate(&run).map(|_| Vec::new()),
        "train" => pipeline::cmd_train(&run),
        "flow" => pipeline::cmd_flow(&run),
        "sweep" => pipeline::cmd_sweep(&run),
        "spectra" => pipeline::cmd_spectra(&run),
        "fit" => pipeline::cmd_fit(&run),
        "report" => pipeline::cmd_report(&run).map(|_| Vec::new()),
        _ => pipeline::cmd_pipeline(&run),
    })?
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(failures) => {
            for f in &failures {
                eprintln!(
                    "warning: grid point L={} N_temp={} N_h={} failed: {}",
                    f.side,
                    f.n_temp,
                    f.n_hidden.map_or("-".into(), |h| h.to_string()),
                    f.message
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
