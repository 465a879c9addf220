//! Benchmark CLI for dynamic feature-switching ("churn") training.
//!
//! Subcommands: `run` (any experiment config), `baseline-regression` /
//! `baseline-mlp` (force the baseline arms), `compare` (aggregate run
//! directories) and `pool-info` (pool statistics).
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error,
//! 3 training divergence.

mod compare;
mod config;
mod error;
mod experiments;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use churn_core::pool::FeaturePool;

use config::{Budget, ExperimentConfig, ExperimentKind};
use error::CliError;

#[derive(Parser)]
#[command(name = "churn-bench", version, about = "Feature-churn training benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunOverrides {
    /// Base seed; trial t runs with seed + t.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trials (seeds seed..seed+trials-1).
    #[arg(long)]
    trials: Option<usize>,
    /// Total training-iteration budget per trial.
    #[arg(long, conflicts_with = "budget_ms")]
    budget_iters: Option<usize>,
    /// Wall-clock budget per trial, in milliseconds.
    #[arg(long)]
    budget_ms: Option<u64>,
    /// Output directory for metrics, summaries and snapshots.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Run a no-churn regression baseline on the full feature pool.
    BaselineRegression {
        config: PathBuf,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Run a no-churn MLP baseline on the raw pixel intensities.
    BaselineMlp {
        config: PathBuf,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Aggregate two or more run directories into a comparison table.
    Compare {
        #[arg(num_args = 2.., required = true)]
        dirs: Vec<PathBuf>,
        /// Comparison CSV output path.
        #[arg(long, default_value = "comparison.csv")]
        out: PathBuf,
    },
    /// Print pool statistics for a multinomial or image feature pool.
    PoolInfo {
        /// Base feature count for a multinomial pool.
        #[arg(long)]
        base_features: Option<usize>,
        /// Maximum degree for a multinomial pool.
        #[arg(long)]
        degree: Option<usize>,
        /// Experiment config describing the image pipeline.
        #[arg(long, conflicts_with_all = ["base_features", "degree"])]
        mnist_config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not errors
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, overrides } => run_command(&config, overrides, None),
        Command::BaselineRegression { config, overrides } => {
            run_command(&config, overrides, Some(ExperimentKind::BaselineRegression))
        }
        Command::BaselineMlp { config, overrides } => {
            run_command(&config, overrides, Some(ExperimentKind::BaselineMlp))
        }
        Command::Compare { dirs, out } => {
            let arms = compare::compare(&dirs, &out)?;
            print!("{}", compare::render_table(&arms));
            println!("comparison written to {}", out.display());
            Ok(())
        }
        Command::PoolInfo {
            base_features,
            degree,
            mnist_config,
        } => pool_info(base_features, degree, mnist_config),
    }
}

fn run_command(
    config_path: &PathBuf,
    overrides: RunOverrides,
    force_kind: Option<ExperimentKind>,
) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::from_file(config_path)?;
    if let Some(kind) = force_kind {
        cfg.experiment = kind;
    }
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = overrides.trials {
        cfg.trials = trials;
    }
    if let Some(iters) = overrides.budget_iters {
        cfg.budget = Budget::Iterations(iters);
    }
    if let Some(ms) = overrides.budget_ms {
        cfg.budget = Budget::WallClockMs(ms);
    }
    if let Some(out) = overrides.out {
        cfg.out_dir = out;
    }
    cfg.revalidate()?;

    let outputs = experiments::run_experiment(&cfg)?;
    for out in &outputs {
        println!(
            "{} seed {}: {} steps, {} iterations, train {:.6}, test {:.6} ({} ms) -> {}",
            cfg.experiment.as_str(),
            out.seed,
            out.summary.steps,
            out.summary.total_iterations,
            out.summary.final_train_metric,
            out.summary.final_test_metric,
            out.summary.elapsed_ms,
            out.metrics_path.display()
        );
    }
    Ok(())
}

fn pool_info(
    base_features: Option<usize>,
    degree: Option<usize>,
    mnist_config: Option<PathBuf>,
) -> Result<(), CliError> {
    match (base_features, degree, mnist_config) {
        (Some(n), Some(d), None) => {
            let pool = FeaturePool::multinomial(n, d)
                .map_err(|e| CliError::Config(e.to_string()))?;
            println!("multinomial pool: {} base features, degree <= {d}", n);
            println!("pool size: {}", pool.len());
            for (deg, count) in pool.degree_histogram().iter().enumerate() {
                println!("  degree {deg}: {count}");
            }
            Ok(())
        }
        (None, None, Some(path)) => {
            let cfg = ExperimentConfig::from_file(&path)?;
            let pipeline = experiments::build_mnist_pipeline(&cfg)?;
            let dim = pipeline.train.width * pipeline.train.height;
            println!(
                "image pool: {} training images of {} pixels",
                pipeline.train.len(),
                dim
            );
            println!(
                "pixel filter: {} -> {} positions at coverage {}",
                dim,
                pipeline.kept_pixels.len(),
                cfg.coverage
            );
            println!(
                "derived features: {} candidates -> {} after the second filter",
                pipeline.derived_candidates,
                pipeline.pool.len() - pipeline.raw_count
            );
            println!("pool size: {}", pipeline.pool.len());
            Ok(())
        }
        _ => Err(CliError::Config(
            "pool-info needs either --base-features with --degree, or --mnist-config".into(),
        )),
    }
}
