//! `attnas`: run attention searches, train derived models, report on runs.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

mod config;
mod plot;
mod report;
mod run_dir;
mod search;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "attnas", version = run_dir::version(), about = "Attention-mechanism architecture search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Pick one attention kind for a homogeneous model.
    Homo,
    /// Prune single-head blocks down to a mixed layer.
    Prune,
    /// Even mix of the top-scoring kinds.
    Oneshot,
    /// Prune multi-head blocks to one kind per layer.
    Layerwise,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Homo => "homo",
            Mode::Prune => "prune",
            Mode::Oneshot => "oneshot",
            Mode::Layerwise => "layerwise",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Search for an architecture and write its spec, scores and log.
    Search {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Oneshot only: take scores from this CSV instead of training a supernet.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Replace an earlier run in the output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train the model described by a spec file and record its accuracy.
    Train {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Summarize one run directory, or every run directory inside DIR.
    Report {
        dir: PathBuf,
        /// Also render SVG plots.
        #[arg(long)]
        plots: bool,
    },
}

/// Errors sorted by exit code.
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn usage(e: impl Into<anyhow::Error>) -> Self {
        Self::Usage(e.into())
    }

    pub fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Self::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Search { mode, config, out, scores, seed, force } => {
            search::run(&search::Args { mode, config, out, scores, seed, force })
        }
        Command::Train { spec, config, out, seed, force } => train::run(&train::Args { spec, config, out, seed, force }),
        Command::Report { dir, plots } => report::run(&dir, plots),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Loads and resolves the config and opens the output directory.
pub fn prepare(
    config: &std::path::Path,
    out: Option<&std::path::Path>,
    seed: Option<u64>,
    force: bool,
) -> Result<(config::RunConfig, run_dir::RunDir), Failure> {
    let cfg = config::RunConfig::load(config).and_then(|c| c.resolve(seed)).map_err(Failure::usage)?;
    let root = out
        .map(std::path::Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Failure::usage(anyhow::anyhow!("no output directory: pass --out or set `out` in the config")))?;
    let mut audited = cfg.clone();
    audited.out = Some(root.clone());
    let dir = run_dir::RunDir::create(&root, &audited, force).map_err(Failure::usage)?;
    Ok((cfg, dir))
}
