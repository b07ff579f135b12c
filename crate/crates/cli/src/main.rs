use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{RunConfig, UsageError};

#[derive(Parser, Debug)]
#[command(name = "lirlab", version, about = "PDG inconsistency, local inconsistency resolution, and reduction harnesses")]
struct Cli {
    /// JSON run configuration; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to write meta.json (defaults to the directory of the primary output).
    #[arg(long, global = true)]
    meta: Option<PathBuf>,
    /// Record wall-clock times in outputs (otherwise written as 0).
    #[arg(long, global = true)]
    timings: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for the inconsistency of a PDG document.
    Inconsistency(commands::inconsistency::Args),
    /// Run local inconsistency resolution on a PDG document.
    Lir(commands::lir::Args),
    /// Compare refocus strategies on generated chain PDGs.
    Synth(commands::synth::Args),
    /// Run a randomized verification suite.
    Verify(commands::verify::Args),
    /// Tabular GFlowNets on HyperGrid.
    #[command(subcommand)]
    Gfn(commands::gfn::GfnCommand),
    /// Write a generated chain PDG as a JSON document.
    Gen(commands::gen::Args),
}

/// What a successful command reports back to `main`.
pub enum Outcome {
    Pass,
    ToleranceViolation,
}

pub struct Globals {
    pub config: RunConfig,
    pub meta: Option<PathBuf>,
    pub timings: bool,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("LIRLAB_THREADS") {
        let n: usize = v.parse().map_err(|_| UsageError(format!("LIRLAB_THREADS must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(UsageError("LIRLAB_THREADS must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    init_threads()?;
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let g = Globals { config, meta: cli.meta, timings: cli.timings };
    match cli.command {
        Command::Inconsistency(a) => commands::inconsistency::run(a, &g),
        Command::Lir(a) => commands::lir::run(a, &g),
        Command::Synth(a) => commands::synth::run(a, &g),
        Command::Verify(a) => commands::verify::run(a, &g),
        Command::Gfn(c) => commands::gfn::run(c, &g),
        Command::Gen(a) => commands::gen::run(a, &g),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::ToleranceViolation) => ExitCode::from(1),
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
