//! Command-line driver: configuration, dataset and checkpoint files, and the
//! data generation, training, evaluation and navigation commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

pub use checkpoint::Checkpoint;
pub use commands::ModelSource;
pub use config::RunConfig;
pub use error::{CliError, CliResult};

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Parser)]
#[command(name = "cablegraph", version, about = "Learned tensegrity dynamics: data, training, evaluation and MPPI navigation")]
pub struct Cli {
    /// JSON config file.
    #[arg(long, global = true, env = config::CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Global seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override one config key, e.g. `--set train.epochs=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
#[group(required = true, multiple = false)]
pub struct ModelArg {
    /// Trained model checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Use the reference simulator as the model.
    #[arg(long)]
    pub oracle: bool,
}

impl ModelArg {
    fn source(&self) -> ModelSource {
        match &self.checkpoint {
            Some(p) => ModelSource::Checkpoint(p.clone()),
            None => ModelSource::Oracle,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out the reference simulator over the parameter grid.
    GenData {
        /// Also write a noisy, endcap-only dataset.
        #[arg(long)]
        real_like: bool,
    },
    /// Train a model on the pooled training splits.
    Train {
        /// Continue training from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output checkpoint path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full-trajectory and short-horizon metrics on the test splits.
    Eval {
        #[command(flatten)]
        model: ModelArg,
    },
    /// Drive the robot through navigation tasks with MPPI.
    Navigate {
        #[command(flatten)]
        model: ModelArg,
        /// JSON file with one task or a list of tasks.
        #[arg(long)]
        task: PathBuf,
        /// Dataset one-hot used while planning; defaults to the last.
        #[arg(long)]
        dataset_id: Option<usize>,
    },
    /// Train, navigate, collect and retrain for several iterations.
    Iterate,
    /// Print metadata of a checkpoint, dataset directory or trajectory.
    Inspect { path: PathBuf },
}

/// Runs one parsed command and returns its JSON summary.
pub fn run(cli: &Cli) -> CliResult<Value> {
    if let Command::Inspect { path } = &cli.command {
        return commands::inspect(path);
    }
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.sets, cli.seed)?;
    Ok(match &cli.command {
        Command::GenData { real_like } => {
            cfg.data.real_like |= *real_like;
            let m = commands::gen_data(&cfg)?;
            json!({
                "datasets": m.datasets.len(),
                "trajectories": m.datasets.iter().map(|d| d.trajectories.len()).sum::<usize>(),
                "skipped": m.datasets.iter().map(|d| d.skipped.len()).sum::<usize>(),
                "data_dir": cfg.paths.data_dir,
            })
        }
        Command::Train { resume, out } => {
            let o = commands::train(&cfg, resume.as_deref(), out.as_deref())?;
            json!({
                "checkpoint": o.checkpoint,
                "best_epoch": o.report.best_epoch,
                "best_val_loss": o.report.best_val_loss,
                "epochs": o.report.epochs.len(),
            })
        }
        Command::Eval { model } => serde_json::to_value(commands::eval(&cfg, &model.source())?)?,
        Command::Navigate { model, task, dataset_id } => {
            serde_json::to_value(commands::navigate(&cfg, &model.source(), task, *dataset_id)?)?
        }
        Command::Iterate => {
            let rows = commands::iterate(&cfg)?;
            json!(rows
                .iter()
                .map(|r| json!({
                    "iteration": r.iteration,
                    "checkpoint": r.checkpoint,
                    "success_rate": r.navigation.success_rate,
                    "mean_completion_time": r.navigation.mean_completion_time,
                }))
                .collect::<Vec<_>>())
        }
        Command::Inspect { .. } => unreachable!("handled above"),
    })
}
