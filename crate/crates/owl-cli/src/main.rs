//! `owl` — campaigns from config files, figure-replication presets, and
//! a capability listing. Exit codes: 0 success, 2 usage error, 3 runtime
//! failure.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use owl::campaign::{run_ensemble_with, CampaignConfig, CampaignResult, Parallelism};

mod config;
mod listing;
mod output;
mod presets;

use config::RunConfig;
use output::OutDir;
use presets::{build_preset, Scale};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration: exit 2.
    Usage(String),
    /// Failure while executing a valid request: exit 3.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

#[derive(Parser)]
#[command(name = "owl", version, about = "Output-weighted sample selection campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one campaign from a TOML config file.
    Run {
        /// Path to the config file.
        config: PathBuf,
        /// Output directory for errors.csv, samples.csv, summary.json,
        /// manifest.json.
        #[arg(long)]
        out: PathBuf,
        /// Shorthand for --override seed=N.
        #[arg(long)]
        seed: Option<u64>,
        /// Config patches, repeatable: --override budgets.grid_count=61
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Worker threads (1 = sequential). Falls back to OWL_THREADS.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run a figure-replication preset.
    Replicate {
        /// One of: fig3, fig5, fig7, fig8, appC, appD.
        figure: String,
        #[arg(long)]
        out: PathBuf,
        /// `full` (source-scale ensembles) or `desk` (minutes).
        #[arg(long, default_value = "desk")]
        scale: String,
        /// Base seed shared by all strategies of the preset.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print systems, criteria and presets with their parameters.
    List {
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seed, overrides, threads } => {
            cmd_run(&config, &out, seed, &overrides, threads)
        }
        Command::Replicate { figure, out, scale, seed, threads } => {
            cmd_replicate(&figure, &out, &scale, seed, threads)
        }
        Command::List { json } => {
            print!("{}", listing::render(json));
            Ok(())
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| {
        std::env::var("OWL_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
    })
}

#[cfg(feature = "parallel")]
fn run_with_threads(
    config: &CampaignConfig,
    threads: Option<usize>,
) -> Result<CampaignResult, CliError> {
    let run = |mode| run_ensemble_with(config, mode).map_err(|e| CliError::Runtime(e.to_string()));
    match resolve_threads(threads) {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(1) => run(Parallelism::Sequential),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?
            .install(|| run(Parallelism::Rayon)),
        None => run(Parallelism::Rayon),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_with_threads(
    config: &CampaignConfig,
    threads: Option<usize>,
) -> Result<CampaignResult, CliError> {
    if matches!(resolve_threads(threads), Some(0)) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    run_ensemble_with(config, Parallelism::Sequential).map_err(|e| CliError::Runtime(e.to_string()))
}

fn cmd_run(
    config_path: &PathBuf,
    out: &PathBuf,
    seed: Option<u64>,
    overrides: &[String],
    threads: Option<usize>,
) -> Result<(), CliError> {
    let text = std::fs::read_to_string(config_path).map_err(|e| {
        CliError::Usage(format!("cannot read config {}: {e}", config_path.display()))
    })?;
    let mut patches: Vec<String> = overrides.to_vec();
    if let Some(s) = seed {
        patches.push(format!("seed={s}"));
    }
    let run_config = RunConfig::from_toml(&text, &patches)?;
    let campaign = run_config.to_campaign()?;
    let result = run_with_threads(&campaign, threads)?;

    let input_dim = campaign.system.input_dist.dim();
    let mut dir = OutDir::create(out)?;
    dir.write(
        "errors.csv",
        &output::errors_csv(&result, campaign.strategy.name(), input_dim)?,
    )?;
    dir.write("samples.csv", &output::samples_csv(&result, input_dim)?)?;
    let summary = output::Summary {
        config: run_config.clone(),
        provenance: output::Provenance {
            config_path: config_path.display().to_string(),
            overrides: patches,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        results: output::summary_results(&result, &campaign),
    };
    dir.write("summary.json", &output::to_json_pretty(&summary)?)?;
    output::write_manifest(&mut dir, &run_config, campaign.base_seed)?;
    Ok(())
}

#[derive(Serialize)]
struct PresetEcho {
    preset: String,
    scale: String,
    base_seed: u64,
}

#[derive(Serialize)]
struct StrategyComparison {
    label: String,
    criterion: String,
    final_mean_error: f64,
    mean_error: Vec<f64>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct Comparison {
    preset: String,
    scale: String,
    base_seed: u64,
    tool_version: String,
    strategies: Vec<StrategyComparison>,
}

fn cmd_replicate(
    figure: &str,
    out: &PathBuf,
    scale: &str,
    seed: Option<u64>,
    threads: Option<usize>,
) -> Result<(), CliError> {
    let scale_parsed = Scale::parse(scale)?;
    let base_seed = seed.unwrap_or(0);
    let preset = build_preset(figure, scale_parsed, base_seed)?;

    let mut dir = OutDir::create(out)?;
    let mut comparisons = Vec::new();
    eprintln!("[{}] {}", preset.name, preset.description);
    for run in &preset.runs {
        eprintln!(
            "[{}] running {} ({} repeats x {} steps)",
            preset.name, run.label, run.config.n_repeats, run.config.n_steps
        );
        let result = run_with_threads(&run.config, threads)?;
        dir.write(&format!("curve_{}.csv", run.label), &output::curve_csv(&result)?)?;
        if run.direction_stats {
            let dim = run.config.system.input_dist.dim();
            dir.write(
                &format!("direction_stats_{}.csv", run.label),
                &output::direction_stats_csv(&result, dim)?,
            )?;
        }
        comparisons.push(StrategyComparison {
            label: run.label.clone(),
            criterion: run.config.strategy.name().to_string(),
            final_mean_error: *result.mean_error.last().unwrap_or(&f64::NAN),
            mean_error: result.mean_error.clone(),
            warnings: output::collect_warnings(&result),
        });
    }
    let comparison = Comparison {
        preset: preset.name.to_string(),
        scale: scale.to_string(),
        base_seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        strategies: comparisons,
    };
    dir.write("comparison.json", &output::to_json_pretty(&comparison)?)?;
    let echo = PresetEcho {
        preset: preset.name.to_string(),
        scale: scale.to_string(),
        base_seed,
    };
    output::write_manifest(&mut dir, &echo, base_seed)?;
    Ok(())
}
