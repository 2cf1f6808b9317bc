//! Command-line front end: flag parsing, configuration resolution, effective
//! configuration echoing, and the single-line error contract.
//!
//! Every workflow command accepts the same flags. A run configuration comes
//! either from `--config` (full TOML, missing fields defaulted) or from a
//! built-in `--profile`; `--seed` and `--out` then override the file. On
//! failure the command removes whatever it had started writing and exits
//! nonzero with one machine-parsable line on stderr.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline::Stage;

#[derive(Debug, Parser)]
#[command(name = "ulm", version, about = "In-silico ultrasound localization microscopy workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// Laptop-scale preset; the full pipeline runs in well under an hour.
    Desk,
    /// Full-scale acquisition and network; training is multi-day.
    Paper,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Run configuration file (TOML); missing fields take the full-scale
    /// defaults.
    #[arg(long, conflicts_with = "profile")]
    pub config: Option<PathBuf>,
    /// Built-in configuration preset used when no file is given.
    #[arg(long, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    /// Override the global seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 1 guarantees bit determinism, 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Override the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    /// Base configuration plus flag overrides, validated.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => match self.profile {
                Profile::Desk => RunConfig::desk(),
                Profile::Paper => RunConfig::paper(),
            },
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grow the training and held-out vascular networks.
    Genvasc(CommonArgs),
    /// Synthesize the training set and per-density held-out test sets.
    Dataset(CommonArgs),
    /// Two-phase optimization; writes checkpoints and the epoch log.
    Train(CommonArgs),
    /// Reconstruct the test densities with the trained network.
    Infer(CommonArgs),
    /// Reconstruct the test densities with the conventional baseline.
    Expert(CommonArgs),
    /// Score both reconstructions against ground truth and write reports.
    Evaluate(CommonArgs),
    /// Print the effective configuration as TOML and exit.
    Config(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Genvasc(a)
            | Command::Dataset(a)
            | Command::Train(a)
            | Command::Infer(a)
            | Command::Expert(a)
            | Command::Evaluate(a)
            | Command::Config(a) => a,
        }
    }

    fn stage(&self) -> Option<Stage> {
        match self {
            Command::Genvasc(_) => Some(Stage::Genvasc),
            Command::Dataset(_) => Some(Stage::Dataset),
            Command::Train(_) => Some(Stage::Train),
            Command::Infer(_) => Some(Stage::Infer),
            Command::Expert(_) => Some(Stage::Expert),
            Command::Evaluate(_) => Some(Stage::Evaluate),
            Command::Config(_) => None,
        }
    }
}

/// Pin the global worker pool; 0 keeps the library default.
pub fn init_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Collapse an error chain onto one line for the stderr contract. Causes
/// already rendered into the message (the `{source}` display idiom) are not
/// repeated.
pub fn one_line(err: &Error) -> String {
    let mut text = err.to_string();
    let mut source: Option<&dyn std::error::Error> = std::error::Error::source(err);
    while let Some(cause) = source {
        let rendered = cause.to_string();
        if !text.ends_with(&rendered) {
            text.push_str(": ");
            text.push_str(&rendered);
        }
        source = cause.source();
    }
    text.replace('\n', "; ")
}

/// Dispatch a parsed invocation. `Err` carries the formatted stderr line.
pub fn execute(cli: &Cli) -> std::result::Result<(), String> {
    let args = cli.command.common();
    let name = cli.command.stage().map_or("config", |s| s.name());
    let fail = |e: &Error| format!("ulm: error: {name}: {}", one_line(e));
    init_threads(args.threads).map_err(|e| fail(&e))?;
    let cfg = args.resolve().map_err(|e| fail(&e))?;
    let Some(stage) = cli.command.stage() else {
        print!("{}", cfg.effective_toml());
        return Ok(());
    };
    println!("# effective configuration");
    print!("{}", cfg.effective_toml());
    println!("# end configuration");
    match stage.run(&cfg) {
        Ok(summary) => {
            println!("{name}: {summary}");
            Ok(())
        }
        Err(e) => {
            stage.remove_outputs(&cfg);
            Err(fail(&e))
        }
    }
}

/// Process entry point: parse, execute, map to an exit status.
pub fn main_impl() -> i32 {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => 0,
        Err(line) => {
            eprintln!("{line}");
            1
        }
    }
}
