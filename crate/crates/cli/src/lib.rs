//! `invarlab` command line: reads a JSON config, runs one analysis and writes
//! `report.json`, `timing.json` and CSV data into the output directory.
//!
//! Exit codes: 0 on success, 2 when a certificate or reproduction check
//! fails, 1 on any error.

pub mod commands;
pub mod config;
pub mod output;
pub mod reproduce;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use commands::{Flags, Outcome, Status};
use config::{canonical_hash, Config, Format};
use output::Outputs;
use reproduce::Target;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 2;
const DEFAULT_OUT: &str = "invarlab-out";

#[derive(Debug, Parser)]
#[command(name = "invarlab", version, about = "Invariance certificates, envelopes and simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for sampled initial points.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Certificate or envelope grid size.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Evaluate one certificate, or search for the largest feasible level.
    Check,
    /// Sweep linear cones and build their union.
    Sweep,
    /// Star-shaped or convex envelope of a function.
    Envelope,
    /// Synthesize a tuning law.
    Synthesize,
    /// Simulate a closed loop and monitor domain membership.
    Simulate,
    /// Regenerate a worked example.
    Reproduce {
        #[arg(value_enum)]
        target: Target,
    },
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Sweep => "sweep",
            Command::Envelope => "envelope",
            Command::Synthesize => "synthesize",
            Command::Simulate => "simulate",
            Command::Reproduce { .. } => "reproduce",
        }
    }
}

#[derive(Serialize)]
struct CommandEcho {
    subcommand: &'static str,
    target: Option<Target>,
    seed: Option<u64>,
    grid: Option<usize>,
}

#[derive(Serialize)]
struct Report<'a> {
    tool: &'static str,
    version: &'static str,
    command: CommandEcho,
    config_hash: String,
    status: Status,
    summary: &'a str,
    files: &'a [String],
    result: &'a Value,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("INVARLAB_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("INVARLAB_THREADS must be a positive integer, got `{v}`"))?;
        // a pool already built in this process keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<i32> {
    let start = Instant::now();
    configure_threads()?;
    let flags = Flags {
        seed: cli.seed,
        grid: cli.grid,
    };
    let (config, hash) = match cli.command {
        Command::Reproduce { target } => (None, canonical_hash(&target.parameters(flags))),
        _ => {
            let path = cli
                .config
                .as_ref()
                .with_context(|| format!("`{}` needs --config PATH", cli.command.name()))?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg = Config::from_json(&text).with_context(|| format!("invalid config {}", path.display()))?;
            let hash = cfg.hash();
            (Some(cfg), hash)
        }
    };
    let dir = cli
        .out
        .clone()
        .or_else(|| config.as_ref().and_then(|c| c.output.dir.clone()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let csv = config.as_ref().map_or(true, |c| c.wants(Format::Csv));
    let mut out = Outputs::new(dir, csv)?;

    let outcome: Outcome = match (cli.command, &config) {
        (Command::Reproduce { target }, _) => reproduce::run(target, flags, &mut out)?,
        (Command::Check, Some(c)) => commands::check(c, flags, &mut out)?,
        (Command::Sweep, Some(c)) => commands::sweep(c, flags, &mut out)?,
        (Command::Envelope, Some(c)) => commands::envelope(c, flags, &mut out)?,
        (Command::Synthesize, Some(c)) => commands::synthesize(c, flags, &mut out)?,
        (Command::Simulate, Some(c)) => commands::simulate(c, flags, &mut out)?,
        (_, None) => unreachable!("config loaded above"),
    };

    let files = out.files().to_vec();
    let report = Report {
        tool: "invarlab",
        version: env!("CARGO_PKG_VERSION"),
        command: CommandEcho {
            subcommand: cli.command.name(),
            target: match cli.command {
                Command::Reproduce { target } => Some(target),
                _ => None,
            },
            seed: cli.seed,
            grid: cli.grid,
        },
        config_hash: hash,
        status: outcome.status,
        summary: &outcome.summary,
        files: &files,
        result: &outcome.result,
    };
    out.json("report.json", &report)?;
    let secs = start.elapsed().as_secs_f64();
    out.json_unlisted("timing.json", &json!({ "subcommand": cli.command.name(), "wall_clock_s": secs }))?;
    if !cli.quiet {
        let word = match outcome.status {
            Status::Pass => "pass",
            Status::Fail => "fail",
        };
        println!("{} [{word}] -> {}", outcome.summary, out.dir().display());
        eprintln!("wall clock {secs:.3} s");
    }
    Ok(match outcome.status {
        Status::Pass => EXIT_OK,
        Status::Fail => EXIT_FAIL,
    })
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
