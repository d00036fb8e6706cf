use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use tbrw_core::experiment::{run_experiment, Command, ExperimentConfig};
use tbrw_core::Error;

#[derive(Parser)]
#[command(name = "tbrw", version, about = "Simulate and verify the biased tree builder random walk")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Walker replicates; height curves and per-run summaries
    Simulate(Common),
    /// Urn increments and offspring functionals against closed forms
    Urn(Common),
    /// Survival of the branching Markov chain
    Bmc(Common),
    /// Eigenvector residuals, spectral radii and the generating identity
    Spectral(Common),
    /// Coupled walks: domination invariants and the marginal check
    Couple(Common),
    /// Local times of reflected walks against the branching chain
    Rayknight(Common),
    /// Phase classification with simulated evidence over a rho grid
    PhaseScan(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Figure1,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration
    #[arg(long, required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration (simulate only)
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Master seed; overrides the config
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides the config
    #[arg(long, env = "TBRW_WORKERS")]
    workers: Option<usize>,
    /// Output directory; overrides the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// Steps for the figure preset
    #[arg(long)]
    horizon: Option<u64>,
}

fn load(command: Command, args: &Common) -> Result<(ExperimentConfig, PathBuf, usize), Error> {
    let mut cfg = match (&args.config, args.preset) {
        (Some(path), _) => ExperimentConfig::from_path(path)?,
        (None, Some(Preset::Figure1)) if command == Command::Simulate => ExperimentConfig::figure1(),
        (None, _) => {
            return Err(Error::Config {
                path: "--preset".into(),
                message: "presets are only available for `simulate`".into(),
            })
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.horizon.is_some() {
        cfg.horizon = args.horizon;
    }
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(Error::Config {
                path: "--workers".into(),
                message: "must be positive".into(),
            });
        }
        cfg.workers = Some(w);
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("tbrw-{}", command.name())));
    let workers = cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    Ok((cfg, out, workers))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Sub::Simulate(a) => (Command::Simulate, a),
        Sub::Urn(a) => (Command::Urn, a),
        Sub::Bmc(a) => (Command::Bmc, a),
        Sub::Spectral(a) => (Command::Spectral, a),
        Sub::Couple(a) => (Command::Couple, a),
        Sub::Rayknight(a) => (Command::Rayknight, a),
        Sub::PhaseScan(a) => (Command::PhaseScan, a),
    };
    let result = load(command, args).and_then(|(cfg, out, workers)| {
        let bundle = run_experiment(command, &cfg, &out, workers)?;
        println!("{}", out.join("summary.json").display());
        Ok(bundle)
    });
    match result {
        Ok(bundle) => {
            if let Some(v) = &bundle.violation {
                error!("invariant violation: {v}");
            }
            ExitCode::from(bundle.exit_code() as u8)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
