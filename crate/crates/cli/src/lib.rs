//! The `gensr` command line: pipeline stages over one output directory.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use config::{Paradigm, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    Missing(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Core(gensr_core::Error),
}

impl From<gensr_core::Error> for CliError {
    fn from(e: gensr_core::Error) -> Self {
        match e {
            gensr_core::Error::Config(m) => CliError::Config(m),
            gensr_core::Error::Numerical(m) => CliError::Numerical(m),
            other => CliError::Core(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Core(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "gensr", version, about = "Unified search and recommendation pipeline on synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every command. Any `--key value` (or `--key=value`)
/// after the command overrides the config file.
#[derive(clap::Args, Debug, Default)]
pub struct Common {
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--config FILE | --KEY VALUE")]
    pub args: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic corpus and its statistics.
    GenData(Common),
    /// Pretrain the collaborative-filtering embeddings.
    PretrainCf(Common),
    /// Train one paradigm (`--paradigm gensr|disc`).
    Train(Common),
    /// Evaluate a trained checkpoint (`--mode rerank|fullrank`).
    Eval(Common),
    /// Diagnostics over trained checkpoints or the Gaussian sandbox.
    Analyze {
        what: Analysis,
        #[command(flatten)]
        common: Common,
    },
    /// Render PNG figures from the analysis exports.
    Report(Common),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Analysis {
    Mi,
    Gradients,
    Projection,
    Sandbox,
}

impl Analysis {
    pub fn name(self) -> &'static str {
        match self {
            Analysis::Mi => "mi",
            Analysis::Gradients => "gradients",
            Analysis::Projection => "projection",
            Analysis::Sandbox => "sandbox",
        }
    }
}

/// Splits `--config FILE` from the `--key value` overrides.
pub fn parse_overrides(args: &[String]) -> Result<(Option<PathBuf>, Vec<(String, String)>), CliError> {
    let mut config = None;
    let mut pairs = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a.strip_prefix("--").ok_or_else(|| CliError::Config(format!("expected --key, got `{a}`")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| CliError::Config(format!("--{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        let key = key.replace('-', "_");
        if key == "config" {
            config = Some(PathBuf::from(value));
        } else {
            pairs.push((key, value));
        }
    }
    Ok((config, pairs))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let (common, analysis) = match &cli.command {
        Command::GenData(c) | Command::PretrainCf(c) | Command::Train(c) | Command::Eval(c) | Command::Report(c) => (c, None),
        Command::Analyze { what, common } => (common, Some(*what)),
    };
    let (file, overrides) = parse_overrides(&common.args)?;
    let cfg = RunConfig::new(file.as_deref(), &overrides)?;
    match cli.command {
        Command::GenData(_) => commands::gen_data(&cfg),
        Command::PretrainCf(_) => commands::pretrain_cf(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::Eval(_) => commands::eval(&cfg),
        Command::Analyze { .. } => match analysis.expect("analyze has a target") {
            Analysis::Mi => commands::analyze_mi(&cfg),
            Analysis::Gradients => commands::analyze_gradients(&cfg),
            Analysis::Projection => commands::analyze_projection(&cfg),
            Analysis::Sandbox => commands::analyze_sandbox(&cfg),
        },
        Command::Report(_) => report::render(&cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_accept_both_spellings() {
        let args: Vec<String> = ["--config", "a.conf", "--lr", "0.1", "--max-steps=5"].iter().map(|s| s.to_string()).collect();
        let (c, p) = parse_overrides(&args).unwrap();
        assert_eq!(c, Some(PathBuf::from("a.conf")));
        assert_eq!(p, vec![("lr".into(), "0.1".into()), ("max_steps".into(), "5".into())]);
        assert!(parse_overrides(&["--lr".to_string()]).is_err());
        assert!(parse_overrides(&["lr".to_string()]).is_err());
    }
}
