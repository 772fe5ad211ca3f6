//! Command-line driver: train, search, prune, fine-tune, retrain from
//! scratch, evaluate and report spatial entropy.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};

use config::{ConfigMap, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "entprune", version, about = "Entropy-guided structured pruning of chain CNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train a baseline network.
    Train,
    /// Search per-layer sparsity with the DDPG agent.
    Search,
    /// Apply a saved plan with least-squares reconstruction.
    Prune,
    /// Fine-tune a pruned checkpoint (optionally pruning it with --plan first).
    Finetune,
    /// Train the pruned architecture from a fresh initialization.
    Scratch,
    /// Report test accuracy of a checkpoint.
    Eval,
    /// Per-layer spatial entropy table of a checkpoint.
    EntropyReport,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Search => "search",
            Command::Prune => "prune",
            Command::Finetune => "finetune",
            Command::Scratch => "scratch",
            Command::Eval => "eval",
            Command::EntropyReport => "entropy-report",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// Config file (`key = value` with `[section]` headers); flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub arch: Option<String>,
    /// Directory holding the CIFAR-10 binary batches.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// entropy | entropy-max | accuracy | random
    #[arg(long, global = true)]
    pub reward: Option<String>,
    #[arg(long, global = true)]
    pub flops_target: Option<f64>,
    #[arg(long, global = true)]
    pub bins: Option<usize>,
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parent directory for run directories.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub plan: Option<PathBuf>,
    /// Extra `section.key=value` override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Options {
    /// Config file values, then explicit flags on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut map = match &self.config {
            Some(p) => ConfigMap::load(p)?,
            None => ConfigMap::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
            map.set(k.trim(), v.trim());
        }
        let flags: [(&str, Option<String>); 11] = [
            ("run.arch", self.arch.clone()),
            ("run.data_dir", self.data_dir.as_ref().map(|p| p.display().to_string())),
            ("search.reward", self.reward.clone()),
            ("search.flops_target", self.flops_target.map(|v| v.to_string())),
            ("entropy.bins", self.bins.map(|v| v.to_string())),
            ("search.episodes", self.episodes.map(|v| v.to_string())),
            ("train.epochs", self.epochs.map(|v| v.to_string())),
            ("run.seed", self.seed.map(|v| v.to_string())),
            ("run.out", self.out.as_ref().map(|p| p.display().to_string())),
            ("run.checkpoint", self.checkpoint.as_ref().map(|p| p.display().to_string())),
            ("run.plan", self.plan.as_ref().map(|p| p.display().to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                map.set(k, v);
            }
        }
        RunConfig::from_map(&map)
    }
}

/// Parse arguments and run the selected command, returning the run directory.
pub fn run<I, T>(args: I) -> Result<PathBuf>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let rc = cli.opts.resolve()?;
    commands::run_command(cli.command, &rc)
}
