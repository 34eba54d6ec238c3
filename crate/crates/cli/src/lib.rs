//! Experiment driver: configuration, run directories, figures and the
//! subcommand implementations behind the `bulkedge` binary.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod svg;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error(transparent)]
    Core(#[from] bulkedge::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for bad input, 3 for numerical failure, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
            CliError::Io(_) | CliError::Json(_) => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Command {
    Bands,
    Chern,
    EdgeIndex { l: Option<f64> },
    BecSweep,
    HsCheck,
    GreenDecay,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Bands => "bands",
            Command::Chern => "chern",
            Command::EdgeIndex { .. } => "edge-index",
            Command::BecSweep => "bec-sweep",
            Command::HsCheck => "hs-check",
            Command::GreenDecay => "green-decay",
        }
    }
}

/// Output directory: explicit flag, then the config, then `runs/<command>`.
pub fn output_dir(cfg: &ExperimentConfig, out: Option<&Path>, command: Command) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(command.name()))
}

pub fn run(command: Command, cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    if let Command::EdgeIndex { l: None } = command {
        if cfg.l_list.is_empty() {
            return Err(CliError::Config(vec!["edge-index needs --l or a nonempty l_list".into()]));
        }
    }
    commands::with_run(cfg, out, command.name(), |run| match command {
        Command::Bands => commands::cmd_bands(cfg, run),
        Command::Chern => commands::cmd_chern(cfg, run),
        Command::EdgeIndex { l } => {
            let l = l.or_else(|| cfg.l_list.last().copied()).unwrap_or_default();
            commands::cmd_edge_index(cfg, l, run)
        }
        Command::BecSweep => commands::cmd_bec_sweep(cfg, run),
        Command::HsCheck => commands::cmd_hs_check(cfg, run),
        Command::GreenDecay => commands::cmd_green_decay(cfg, run),
    })
}
