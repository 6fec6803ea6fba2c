//! `tracecard`: ingest agent traces, compile cards, distill skills and
//! score ablations.
//!
//! Exit codes: 0 success, 1 not found or runtime failure, 2 configuration
//! or usage error, 3 skill post-check failure.

mod commands;
mod settings;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracecard::distill::Condition;

#[derive(Debug, Parser)]
#[command(name = "tracecard", version, about = "Trace ingest, TraceCard compilation and skill distillation")]
struct Cli {
    /// Service configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Session store directory.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Pricing table (TOML); the built-in table when absent.
    #[arg(long, global = true)]
    pricing: Option<PathBuf>,
    /// Failure patterns, one regex per line.
    #[arg(long, global = true)]
    failure_patterns: Option<PathBuf>,
    /// Extra identifiers that must not appear in skill documents, one per line.
    #[arg(long, global = true)]
    denylist: Option<PathBuf>,
    /// Seed for synthetic generators.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the ingest service until interrupted.
    Serve {
        #[arg(long)]
        listen: Option<SocketAddr>,
    },
    /// Send NDJSON event files to a running service.
    Ingest {
        #[arg(long, default_value = "http://127.0.0.1:4318")]
        server: String,
        /// Events per request.
        #[arg(long, default_value_t = 500)]
        batch: usize,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Compile stored sessions into TraceCard YAML files.
    Compile {
        keys: Vec<String>,
        #[arg(long, conflicts_with = "keys")]
        all: bool,
        #[arg(long)]
        out: PathBuf,
        /// Outcome records (YAML); graded outcomes override the sessions' own.
        #[arg(long)]
        outcomes: Option<PathBuf>,
    },
    /// Print a session's span tree.
    Tree {
        key: String,
        #[arg(long)]
        no_costs: bool,
        /// Print the whole store's delegation graph instead.
        #[arg(long, conflicts_with = "no_costs")]
        graph: bool,
    },
    /// Print a session's timeline.
    Timeline {
        key: String,
        #[arg(long, default_value_t = 60)]
        width: usize,
    },
    /// Distill a skill document from compiled cards under one condition.
    Distill {
        #[arg(long)]
        cards: PathBuf,
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long, value_parser = parse_condition)]
        condition: Condition,
        #[arg(long)]
        out: PathBuf,
        /// Additional patches (YAML list), gated like analyst output.
        #[arg(long)]
        extra_patches: Option<PathBuf>,
        #[arg(long)]
        title: Option<String>,
    },
    /// Distill under every skill condition.
    Ablate {
        #[arg(long)]
        cards: PathBuf,
        #[arg(long)]
        outcomes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        extra_patches: Option<PathBuf>,
        #[arg(long)]
        title: Option<String>,
    },
    /// Compare a skill condition against the baseline.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_parser = parse_condition, default_value = "baseline")]
        baseline_condition: Condition,
        #[arg(long, value_parser = parse_condition)]
        skill_condition: Condition,
        /// Directory for `<condition>.md` and `<condition>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic corpus: events, outcome records and results.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        sessions: usize,
    },
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    Condition::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Condition::ALL.iter().map(|c| c.as_str()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_POST_CHECK: u8 = 3;

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            error: e.into(),
        }
    }
}

pub trait WithCode<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> WithCode<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let settings = settings::Settings::resolve(&cli)?;
    match cli.command {
        Command::Serve { listen } => commands::serve(&settings, listen),
        Command::Ingest { server, batch, files } => commands::ingest(&server, batch, &files),
        Command::Compile {
            keys,
            all,
            out,
            outcomes,
        } => commands::compile(&settings, &keys, all, &out, outcomes.as_deref()),
        Command::Tree { key, no_costs, graph } => commands::tree(&settings, &key, !no_costs, graph),
        Command::Timeline { key, width } => commands::timeline(&settings, &key, width),
        Command::Distill {
            cards,
            outcomes,
            condition,
            out,
            extra_patches,
            title,
        } => {
            let inputs = commands::DistillInputs::load(&settings, &cards, &outcomes, extra_patches.as_deref(), title)?;
            commands::distill(&inputs, condition, &out)
        }
        Command::Ablate {
            cards,
            outcomes,
            out,
            extra_patches,
            title,
        } => {
            let inputs = commands::DistillInputs::load(&settings, &cards, &outcomes, extra_patches.as_deref(), title)?;
            commands::ablate(&inputs, &out)
        }
        Command::Eval {
            results,
            baseline_condition,
            skill_condition,
            out,
        } => commands::eval(&results, baseline_condition, skill_condition, out.as_deref()),
        Command::Synth { out, sessions } => commands::synth(settings.seed, sessions, &out),
    }
}
