use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ddlab_cli::experiments;
use ddlab_cli::output::write_outputs;
use ddlab_cli::{CliError, Experiment, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "ddlab", version, about = "Density-tracking diffusion experiments")]
#[command(after_help = "Every CSV row starts with `config_hash`. DDLAB_THREADS caps the worker pool.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML file overriding the experiment's defaults (see `print-config`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "ddlab-out")]
    out: PathBuf,
    /// Overrides `n_steps`.
    #[arg(long)]
    steps: Option<usize>,
    /// Overrides `n_paths`.
    #[arg(long)]
    paths: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// High-probability sampling: base sampler to each threshold, then the HP-ODE.
    ///
    /// results.csv: threshold_lambda, threshold_t, path, x_t_0.., y0_0.., logp_y0, logp_y0_exact, seed
    HpSample(Common),
    /// Log-density tracking along reverse-SDE (or PF-ODE) trajectories.
    ///
    /// results.csv: path, x0_0.., tracked, analytic, endpoint_error, max_abs_error
    /// trajectory.csv (path 0): t, lambda, x0.., tracked, analytic
    TrackLikelihood(Common),
    /// R, R^U, R^L and the bias integrals for a perturbed or mismatched score.
    ///
    /// results.csv: quantity, value, std_error, n
    /// samples.csv: path, x0_0.., r0, elbo, elbo_std_error, ode_logp, log_density
    BiasBounds(Common),
    /// Mode-tracking ODE against the grid argmax of the denoising posterior.
    ///
    /// results.csv: lambda_s, s, grid_mode, grid_log_posterior, polished_mode, ode_mode,
    /// ode_logp, log_density_at_ode_mode, status (ok | local-branch | singular | diverged)
    ModeCurve(Common),
    /// Sample spread across HP thresholds on a 2D mixture.
    ///
    /// results.csv: as hp-sample; summary.csv: threshold_lambda, n, spread, mean_logp_y0
    Tradeoff(Common),
    /// Fraction of posterior samples with higher denoising density than the HP-ODE output.
    ///
    /// results.csv: lambda_t, anchor, x_t_0.., hp_y0_0.., hp_log_posterior, fraction, std_error, k
    /// summary.csv: lambda_t, mean_fraction, std_error, anchors
    HpVsSamples(Common),
    /// Jump of the denoising mode on the three-component mixture.
    ///
    /// results.csv: detected, lambda_star, left_mode, right_mode, displacement,
    /// left_polished, right_polished, grid_cell
    NonsmoothDemo(Common),
    /// t = 0 marginals of β-weighted reverse SDEs.
    ///
    /// results.csv: beta, n, mean, variance, ks_vs_first_beta, mean_abs_r0_error
    BetaInvariance(Common),
    /// Print the default config of an experiment as TOML.
    PrintConfig {
        #[arg(value_parser = parse_experiment)]
        experiment: Experiment,
    },
    /// Quick numerical checks; exits nonzero if any fails.
    ///
    /// results.csv: check, value, tolerance, pass
    Selftest(Common),
}

fn parse_experiment(s: &str) -> std::result::Result<Experiment, String> {
    Experiment::ALL
        .into_iter()
        .find(|e| e.name() == s)
        .ok_or_else(|| format!("unknown experiment `{s}`"))
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("DDLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = value.trim().parse().map_err(|_| CliError::Threads(value.clone()))?;
    if n == 0 {
        return Err(CliError::Threads(value));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|_| CliError::Threads(value))
}

fn run_experiment(experiment: Experiment, common: &Common) -> Result<()> {
    let mut cfg = ExperimentConfig::load(experiment, common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = common.steps {
        cfg.n_steps = steps;
    }
    if let Some(paths) = common.paths {
        cfg.n_paths = paths;
    }
    cfg.validate()?;
    let started = Instant::now();
    let tables = experiments::run(&cfg)?;
    write_outputs(&common.out, &cfg, &tables, started.elapsed().as_secs_f64())?;
    if experiment == Experiment::Selftest {
        let failed = experiments::failed_checks(&tables[0]);
        if !failed.is_empty() {
            return Err(CliError::SelftestFailed(failed.join(", ")));
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_threads()?;
    let (experiment, common) = match cli.command {
        Command::PrintConfig { experiment } => {
            print!("{}", ExperimentConfig::defaults(experiment).to_toml());
            return Ok(());
        }
        Command::HpSample(c) => (Experiment::HpSample, c),
        Command::TrackLikelihood(c) => (Experiment::TrackLikelihood, c),
        Command::BiasBounds(c) => (Experiment::BiasBounds, c),
        Command::ModeCurve(c) => (Experiment::ModeCurve, c),
        Command::Tradeoff(c) => (Experiment::Tradeoff, c),
        Command::HpVsSamples(c) => (Experiment::HpVsSamples, c),
        Command::NonsmoothDemo(c) => (Experiment::NonsmoothDemo, c),
        Command::BetaInvariance(c) => (Experiment::BetaInvariance, c),
        Command::Selftest(c) => (Experiment::Selftest, c),
    };
    run_experiment(experiment, &common)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
