//! Experiment driver for the `mrisk` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use error::CliError;
use serde_json::Value;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "mrisk", version, about = "Model-risk sensitivities under (adapted) Wasserstein balls")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sensitivities for every configured constraint and metric.
    Sensitivity(CommonArgs),
    /// Sensitivities divided by the reference value of the criterion.
    Relative(CommonArgs),
    /// Optimal hedges on the grid, with plots.
    Hedge(CommonArgs),
    /// Worst-case scenarios and first-order gain checks.
    WorstCase(CommonArgs),
    /// Sensitivities over a list of volatilities.
    Sweep(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed, overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads, overrides `threads`.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Sensitivity(_) => "sensitivity",
            Command::Relative(_) => "relative",
            Command::Hedge(_) => "hedge",
            Command::WorstCase(_) => "worst-case",
            Command::Sweep(_) => "sweep",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Sensitivity(a)
            | Command::Relative(a)
            | Command::Hedge(a)
            | Command::WorstCase(a)
            | Command::Sweep(a) => a,
        }
    }
}

/// Loads the configuration and applies command-line overrides.
pub fn resolve_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(CliError::Config("threads: must be >= 1".into()));
        }
        cfg.threads = Some(t);
    }
    Ok(cfg)
}

/// Runs one command against an already resolved configuration.
pub fn execute(command: &str, cfg: &RunConfig) -> Result<Value, CliError> {
    let out: &Path = &cfg.output_dir;
    commands::write_manifest(out, command, cfg)?;
    let run = || match command {
        "sensitivity" => commands::sensitivity(cfg, out),
        "relative" => commands::relative(cfg, out),
        "hedge" => commands::hedge(cfg, out),
        "worst-case" => commands::worst_case(cfg, out),
        "sweep" => commands::sweep(cfg, out),
        other => Err(CliError::Config(format!("command: unknown command `{other}`"))),
    };
    let result = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?
            .install(run),
        None => run(),
    };
    if let Err(CliError::Numerical(e)) = &result {
        let diag = serde_json::json!({ "command": command, "error": e.to_string(), "detail": format!("{e:?}") });
        std::fs::write(out.join("diagnostics.json"), serde_json::to_string_pretty(&diag)? + "\n")?;
    }
    result
}

pub fn run(cli: &Cli) -> Result<Value, CliError> {
    let cfg = resolve_config(cli.command.args())?;
    execute(cli.command.name(), &cfg)
}
