use std::path::PathBuf;
use std::process::ExitCode;

use bulkedge_cli::config::SCHEMA;
use bulkedge_cli::{output_dir, run, CliError, Command, ExperimentConfig};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bulkedge", version, about = "Bulk Chern numbers, edge indices and Green-function checks")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Info)]
    log_level: LogLevel,

    #[command(subcommand)]
    command: Sub,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogLevel {
    Info,
    Debug,
}

#[derive(Subcommand)]
enum Sub {
    /// Band table, band diagram and gap report.
    Bands,
    /// Gap Chern number by plaquette fluxes and by the projector formula.
    Chern,
    /// Edge index of one truncated domain.
    EdgeIndex {
        /// Domain scale; defaults to the last entry of `l_list`.
        #[arg(long)]
        l: Option<f64>,
    },
    /// Edge index over `l_list` against the bulk Chern number.
    BecSweep,
    /// Functional-calculus and Green-representation checks.
    HsCheck,
    /// Resolvent decay fits on a periodic supercell.
    GreenDecay,
    /// Print the configuration schema.
    Schema,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.log_level {
        LogLevel::Info => "info",
        LogLevel::Debug => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let command = match cli.command {
        Sub::Schema => {
            print!("{SCHEMA}");
            return ExitCode::SUCCESS;
        }
        Sub::Bands => Command::Bands,
        Sub::Chern => Command::Chern,
        Sub::EdgeIndex { l } => Command::EdgeIndex { l },
        Sub::BecSweep => Command::BecSweep,
        Sub::HsCheck => Command::HsCheck,
        Sub::GreenDecay => Command::GreenDecay,
    };
    match execute(command, cli.config, cli.out, cli.workers) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command, config: Option<PathBuf>, out: Option<PathBuf>, workers: Option<usize>) -> Result<(), CliError> {
    let Some(path) = config else {
        return Err(CliError::Config(vec!["--config is required".into()]));
    };
    let cfg = ExperimentConfig::load(&path)?;
    if let Some(w) = workers {
        if w == 0 {
            return Err(CliError::Config(vec!["--workers must be positive".into()]));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let dir = output_dir(&cfg, out.as_deref(), command);
    log::info!("{} -> {}", command.name(), dir.display());
    run(command, &cfg, &dir)
}
