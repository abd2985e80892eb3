use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hierda::experiment::{run_experiment, run_sensitivity_study, with_workers, ExperimentConfig, Manifest, RunOptions};

/// Hierarchical data assimilation experiments.
#[derive(Parser)]
#[command(name = "hierda", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write the covariance factor error map.
        #[arg(long)]
        factor_error: bool,
    },
    /// Compare cross-covariance estimates against the exact sensitivity.
    Sensitivity {
        #[command(flatten)]
        common: Common,
    },
    /// Check a config and print it with every default filled in.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    /// Output directory; defaults to the config's `output_dir` under the
    /// output root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Overwrite the artifacts of a previous run.
    #[arg(long)]
    force: bool,
    /// Root for relative output directories.
    #[arg(long, env = "HIERDA_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::from_json(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(out) = &common.out {
        return out.clone();
    }
    let rel = cfg.output_dir.clone().unwrap_or_else(|| {
        let method = cfg.method.map_or("study", |m| m.as_str());
        PathBuf::from(format!("{}-{}-seed{}", cfg.problem.as_str(), method, cfg.seed))
    });
    if rel.is_absolute() {
        rel
    } else {
        common.output_root.join(rel)
    }
}

fn report(manifest: &Manifest, dir: &Path) -> Result<()> {
    println!("wrote {} files to {}", manifest.files.len() + 1, dir.display());
    println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common, factor_error } => {
            let cfg = load(&common.config)?;
            let opts = RunOptions {
                out_dir: out_dir(&common, &cfg),
                force: common.force,
                factor_error,
            };
            let manifest = with_workers(common.workers, || run_experiment(&cfg, &opts))??;
            report(&manifest, &opts.out_dir)
        }
        Command::Sensitivity { common } => {
            let cfg = load(&common.config)?;
            let opts = RunOptions {
                out_dir: out_dir(&common, &cfg),
                force: common.force,
                factor_error: false,
            };
            let manifest = with_workers(common.workers, || run_sensitivity_study(&cfg, &opts))??;
            report(&manifest, &opts.out_dir)
        }
        Command::Validate { config } => {
            let cfg = load(&config)?.resolved()?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
