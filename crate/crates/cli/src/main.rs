//! `lqr-ioc`: dataset generation, estimation and experiment runners.
//!
//! Exit codes: 0 success, 2 validation error, 3 solver failure, 4 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lqr_ioc::dataset::Dataset;
use lqr_ioc::experiments::config::{ExperimentConfig, ExperimentKind, ENV_PREFIX};
use lqr_ioc::experiments::consistency::run_consistency;
use lqr_ioc::experiments::diagnose::diagnose;
use lqr_ioc::experiments::estimate::estimate_dataset;
use lqr_ioc::experiments::simulate::simulate;
use lqr_ioc::experiments::sweep::run_noiseless_sweep;
use lqr_ioc::ioc::Mode;
use lqr_ioc::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "lqr-ioc", version, about = "Recover LQR state costs from unlabeled multi-agent snapshots")]
#[command(after_help = format!(
    "Config keys can be overridden with environment variables prefixed {ENV_PREFIX}, \
     nested keys joined by `__`, e.g. {ENV_PREFIX}ESTIMATOR__SOLVER__MAX_NEWTON=300."
))]
struct Cli {
    /// TOML experiment config.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Write barrier-method trace CSVs.
    #[arg(long, global = true)]
    trace: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Noiseless,
    Noisy,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate one shuffled dataset with its ground truth.
    Simulate,
    /// Estimate Q from a dataset directory.
    Estimate {
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// Defaults to noisy exactly when the dataset stores a noise covariance.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Frobenius bound ‖Q‖_F² ≤ phi on the estimate.
        #[arg(long)]
        phi: Option<f64>,
        /// Objective scale.
        #[arg(long)]
        scale: Option<f64>,
        /// Re-link the shuffled snapshots under the estimated gains.
        #[arg(long)]
        recover_permutations: bool,
    },
    /// Noiseless estimation over random triplets.
    SweepNoiseless,
    /// Estimation error against the number of agents under noise.
    Consistency,
    /// Conditioning and identifiability margin of a system.
    Diagnose {
        /// Take the system and Q̄ from a dataset instead of the config.
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Dimension(_) | Error::Invalid(_) | Error::NotPsd { .. } | Error::Precondition(_) | Error::Serde(_) => {
            EXIT_VALIDATION
        }
        Error::Numerical(_) | Error::SingularClosedLoop { .. } | Error::Infeasible(_) | Error::Solver(_) => EXIT_SOLVER,
        Error::Io(_) => EXIT_IO,
    }
}

fn load_config(cli: &Cli, kind: Option<ExperimentKind>) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::load(cli.config.as_deref(), kind)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = &cli.out {
        config.out_dir = o.clone();
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    config.trace |= cli.trace;
    Ok(config)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Prints to stdout; a closed pipe is not an error.
fn print_json(value: &impl serde::Serialize) -> Result<(), Error> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn run(cli: &Cli) -> Result<u8, Error> {
    match &cli.command {
        Command::Simulate => {
            let config = load_config(cli, None)?;
            let data = simulate(&config)?;
            data.write(&config.out_dir)?;
            let m = &data.manifest;
            eprintln!(
                "wrote dataset: n = {}, m = {}, N = {}, M = {} to {}",
                m.n,
                m.m,
                m.horizon,
                m.agents,
                config.out_dir.display()
            );
            Ok(0)
        }
        Command::Estimate { dataset, mode, phi, scale, recover_permutations } => {
            let config = load_config(cli, None)?;
            let data = Dataset::read(dataset)?;
            let mut options = config.ioc_options();
            options.phi = phi.or(options.phi);
            options.scale = scale.or(options.scale);
            if config.trace {
                std::fs::create_dir_all(&config.out_dir)?;
                options.solver.trace_path = Some(config.out_dir.join("trace.csv"));
            }
            let mode = mode.map(|m| match m {
                ModeArg::Noiseless => Mode::Noiseless,
                ModeArg::Noisy => Mode::Noisy,
            });
            let out = estimate_dataset(&data, mode, &options, *recover_permutations)?;
            write_json(&config.out_dir.join("estimate.json"), &out)?;
            print_json(&out.q_est.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())?;
            if out.is_optimal() {
                Ok(0)
            } else {
                eprintln!("solver status {:?}: {}", out.report.status, out.report.message.as_deref().unwrap_or(""));
                Ok(EXIT_SOLVER)
            }
        }
        Command::SweepNoiseless => {
            let config = load_config(cli, Some(ExperimentKind::NoiselessSweep))?;
            let out = run_noiseless_sweep(&config)?;
            out.write(&config.out_dir)?;
            std::fs::write(config.out_dir.join("config.toml"), config.to_toml()?)?;
            print_json(&out.summary)?;
            Ok(0)
        }
        Command::Consistency => {
            let config = load_config(cli, Some(ExperimentKind::Consistency))?;
            let out = run_consistency(&config)?;
            out.write(&config.out_dir)?;
            std::fs::write(config.out_dir.join("config.toml"), config.to_toml()?)?;
            print_json(&out.summary)?;
            Ok(0)
        }
        Command::Diagnose { dataset } => {
            let config = load_config(cli, None)?;
            let (dyn_, q, horizon) = match dataset {
                Some(dir) => {
                    let data = Dataset::read(dir)?;
                    let dyn_ = data.dynamics()?;
                    let q = match data.q_true()? {
                        Some(q) => q,
                        None => config.build_cost(dyn_.n(), config.seed)?,
                    };
                    (dyn_, q, data.manifest.horizon)
                }
                None => {
                    let dyn_ = config.build_system(config.seed)?;
                    let q = config.build_cost(dyn_.n(), config.seed)?;
                    (dyn_, q, config.horizon)
                }
            };
            let report = diagnose(&dyn_, &q, horizon, config.condition_threshold)?;
            write_json(&config.out_dir.join("diagnose.json"), &report)?;
            print_json(&report)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let code = exit_code(&e);
            let diag = serde_json::json!({ "error": e.to_string(), "exit_code": code });
            eprintln!("{diag}");
            ExitCode::from(code)
        }
    }
}
