//! `prefagg`: command-line front end for preference aggregation and the
//! demographic, diversity and welfare analyses of a conversation corpus.

mod battles_io;
mod commands;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::{RunConfig, Settings, SEED_ENV};

/// Bad flags, config or argument values (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "prefagg", version, about = "Aggregate pairwise human preferences into model leaderboards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML file with default settings; flags and PREFAGG_SEED override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log verbosity: -v info, -vv debug
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and cross-check the corpus, then report its counts
    Validate,
    /// Participant frequency tables per demographic attribute
    Describe,
    /// Export the battle list
    Battles,
    /// Leaderboard under one aggregation method
    Rank,
    /// Resampled leaderboards and score intervals
    Bootstrap(commands::BootstrapArgs),
    /// Leaderboards per participant group with rank shifts
    Groups(commands::GroupsArgs),
    /// Rank agreement between methods, or between two battle sets
    Compare(commands::CompareArgs),
    /// Topic over-representation and per-topic regressions
    Topics(commands::TopicsArgs),
    /// Prompt neighbourhoods under a cosine-distance threshold
    Neighbourhoods(commands::NeighbourhoodArgs),
    /// Adjusted intersectional entropy of prompt neighbourhoods
    Entropy(commands::EntropyArgs),
    /// Fixed-context field sites and their score ranges
    Fieldsites,
    /// Induced model choice and stakeholder welfare per sampling scheme
    Welfare(commands::WelfareArgs),
    /// Response text features and their regression on scores
    Textfeat(commands::TextfeatArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = RunConfig::resolve(cli.settings, cli.config.as_deref(), env_seed.as_deref())?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| UsageError(format!("--threads: {e}")))?;
    }
    let artifact = match cli.command {
        Command::Validate => commands::validate(&cfg)?,
        Command::Describe => commands::describe(&cfg)?,
        Command::Battles => commands::battles(&cfg)?,
        Command::Rank => commands::rank(&cfg)?,
        Command::Bootstrap(a) => commands::bootstrap(&cfg, &a)?,
        Command::Groups(a) => commands::groups(&cfg, &a)?,
        Command::Compare(a) => commands::compare(&cfg, &a)?,
        Command::Topics(a) => commands::topics(&cfg, &a)?,
        Command::Neighbourhoods(a) => commands::neighbourhoods(&cfg, &a)?,
        Command::Entropy(a) => commands::entropy(&cfg, &a)?,
        Command::Fieldsites => commands::fieldsites(&cfg)?,
        Command::Welfare(a) => commands::welfare(&cfg, &a)?,
        Command::Textfeat(a) => commands::textfeat(&cfg, &a)?,
    };
    artifact.emit(&cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
