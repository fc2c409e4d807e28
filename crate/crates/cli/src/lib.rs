//! Pipeline driver behind the `dynregion` binary.

pub mod config;
pub mod error;
pub mod io;
pub mod scene;
pub mod stages;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::PipelineConfig;
pub use error::{CliError, EXIT_CONFIG, EXIT_DATA, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "dynregion", version, about = "Pedestrian counting by dynamic region division")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Pipeline config file (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set training.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory, overriding `paths.output`.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Seed for network initialization and minibatch order.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene with a known perspective line.
    Synth(Common),
    /// Compute the expectation line and per-frame division masks.
    Divide {
        #[command(flatten)]
        common: Common,
        /// Division mode, overriding `division.mode`.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Fit the perspective line and render ground-truth density maps.
    Densify(Common),
    /// Train the density network on the training split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Estimate distant-region counts for every frame.
    Predict(Common),
    /// Fuse counts on the held-out frames and score them.
    Evaluate(Common),
    /// Collect evaluation reports into a per-scene MAE table.
    Report {
        #[command(flatten)]
        common: Common,
        /// Report files; defaults to the output directory's report.json.
        reports: Vec<PathBuf>,
    },
}

impl Common {
    fn load(&self, extra: &[(&str, Option<String>)]) -> Result<PipelineConfig, CliError> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        for (key, value) in extra {
            if let Some(v) = value {
                overrides.push(format!("{key}={v}"));
            }
        }
        let mut cfg = PipelineConfig::load(&self.config, &overrides)?;
        if let Some(out) = &self.output {
            cfg.paths.output = out.clone();
        }
        Ok(cfg)
    }
}

fn quoted(s: &Option<String>) -> Option<String> {
    s.as_ref().map(|v| format!("{v:?}"))
}

/// Runs one subcommand.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(c) => stages::synth(&c.load(&[])?).map(drop),
        Command::Divide { common, mode } => stages::divide(&common.load(&[("division.mode", quoted(mode))])?).map(drop),
        Command::Densify(c) => stages::densify(&c.load(&[])?).map(drop),
        Command::Train {
            common,
            steps,
            learning_rate,
        } => {
            let cfg = common.load(&[
                ("training.steps", steps.map(|s| s.to_string())),
                ("training.learning_rate", learning_rate.map(|l| format!("{l:?}"))),
            ])?;
            stages::train_network(&cfg).map(drop)
        }
        Command::Predict(c) => stages::predict(&c.load(&[])?).map(drop),
        Command::Evaluate(c) => stages::evaluate(&c.load(&[])?).map(drop),
        Command::Report { common, reports } => stages::report(&common.load(&[])?, reports).map(drop),
    }
}
