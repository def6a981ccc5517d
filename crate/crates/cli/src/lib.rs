// SPDX-License-Identifier: Apache-2.0

//! Command-line pipeline: synthetic data, toy pretraining, layer scan,
//! targeted adapter training, merge, evaluation and projections.

mod commands;
mod config;
mod error;

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::*;
pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "lexalign",
    version,
    about = "Layer probing and targeted lexical alignment on a micro transformer"
)]
pub struct Cli {
    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Overrides `out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Overrides any config key, e.g. `--set epochs=10`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_override)]
    pub overrides: Vec<(String, String)>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the synthetic world and the split pair file.
    GenData,
    /// Pretrain the toy base model.
    Pretrain,
    /// Per-layer pair similarity of a checkpoint; prints the peak layer.
    Scan,
    /// Train adapters at the target layer.
    Train,
    /// Fold adapters into a standalone checkpoint.
    Merge,
    /// Pre/post evaluation on trained and control pairs.
    Eval,
    /// PCA and t-SNE projections before and after.
    Project,
    /// Every stage in order.
    All,
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl Cli {
    /// File keys, then `--set`, then the dedicated flags.
    pub fn resolve_config(&self) -> CliResult<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
        if let Some(out) = &self.out {
            overrides.push((
                "out_dir".into(),
                toml::Value::String(out.display().to_string()).to_string(),
            ));
        }
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

/// Runs one command and returns the summary to print.
pub fn run(cli: &Cli) -> CliResult<String> {
    let cfg = cli.resolve_config()?;
    let mut out = String::new();
    let dir = match cli.command {
        Command::GenData => cmd_gen_data(&cfg)?,
        Command::Pretrain => cmd_pretrain(&cfg)?,
        Command::Scan => {
            let (dir, scan) = cmd_scan(&cfg)?;
            for (l, (m, s)) in scan
                .per_layer_mean_sim
                .iter()
                .zip(&scan.per_layer_std)
                .enumerate()
            {
                let _ = writeln!(out, "layer {l}: {m:.4} ({s:.4})");
            }
            let _ = writeln!(out, "peak layer: {}", scan.peak_layer);
            dir
        }
        Command::Train => {
            let (dir, layer) = cmd_train(&cfg)?;
            let _ = writeln!(out, "target layer: {layer}");
            dir
        }
        Command::Merge => cmd_merge(&cfg)?,
        Command::Eval => {
            let (dir, reports) = cmd_eval(&cfg)?;
            out.push_str(&lexalign_core::probe::AlignmentReport::table1(&reports));
            dir
        }
        Command::Project => cmd_project(&cfg)?.0,
        Command::All => {
            let run = cmd_all(&cfg)?;
            let _ = writeln!(out, "peak layer: {}", run.scan.peak_layer);
            let _ = writeln!(out, "target layer: {}", run.target_layer);
            out.push_str(&lexalign_core::probe::AlignmentReport::table1(&run.reports));
            run.dir
        }
    };
    let _ = writeln!(out, "outputs: {}", dir.display());
    Ok(out)
}
