//! Command-line driver for blocked Particle Gibbs experiments.
//!
//! Exit codes: 0 on success, 1 when the config fails validation, 2 on a runtime error.

mod commands;
mod config;
mod setup;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::Config;
use setup::{validate, Needs};

#[derive(Debug, Parser)]
#[command(name = "blockpg", version, about = "Blocked Particle Gibbs sampling for hidden Markov models")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Root seed; overrides the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads for parallel phases and replications.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Write the full post-sweep trace of the first chain.
    #[arg(long, global = true)]
    trace: bool,

    /// Largest joint state space the exact oracles may enumerate.
    #[arg(long, global = true, value_name = "N")]
    cap_states: Option<usize>,

    /// Dump the particles, weights and ancestors of one block update.
    #[arg(long, global = true)]
    dump_particles: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Check the config, model and cover.
    Validate,
    /// Print contraction-rate reports.
    Rates,
    /// Run the sampler and write summary and trace CSVs.
    Sample,
    /// Check that one sweep leaves the smoothing distribution invariant.
    Invariance,
    /// Compare blocked and single-block mixing across sequence lengths.
    Stability,
    /// Measure total variation decay against the contraction envelope.
    Contraction,
}

enum Failure {
    Invalid(Vec<String>),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Runtime(anyhow::anyhow!("--config PATH is required")))?;
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(Failure::Runtime)?;
    let mut cfg = Config::parse(&text).map_err(|e| Failure::Invalid(vec![format!("config: {e}")]))?;
    let base = path.parent().map(|p| p.to_path_buf()).unwrap_or_default();
    cfg.resolve_paths(&base);
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(c) = cli.cap_states {
        cfg.cap_states = c;
    }
    cfg.trace |= cli.trace;
    cfg.dump_particles |= cli.dump_particles;
    Ok(cfg)
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let needs = match cli.command {
        Command::Validate => Needs::Nothing,
        Command::Rates => Needs::Rates,
        Command::Sample | Command::Invariance | Command::Contraction => Needs::Chain,
        Command::Stability => Needs::Stability,
    };
    let setup = validate(cfg, needs).map_err(Failure::Invalid)?;
    if let Command::Validate = cli.command {
        emit(&format!("{}\n", commands::validate_report(&setup)))?;
        return Ok(());
    }
    let out = setup.cfg.out.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    std::fs::write(out.join("effective_config.toml"), setup.cfg.to_toml())
        .context("cannot write effective_config.toml")?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(setup.cfg.threads)
        .build()
        .context("cannot build thread pool")?;
    let text = match cli.command {
        Command::Validate => unreachable!(),
        Command::Rates => {
            let reports = commands::rates(&setup, &out)?;
            let mut text = String::new();
            if reports.len() == 1 {
                text.push_str(&reports[0].to_text());
            }
            text.push_str(blockpg::rates::RateReport::<f64>::CSV_HEADER);
            text.push('\n');
            for r in &reports {
                text.push_str(&r.csv_row());
                text.push('\n');
            }
            text
        }
        Command::Sample => format!("{}\n", commands::sample(&setup, &out, &pool)?),
        Command::Invariance => {
            let (text, pass) = commands::invariance(&setup, &out, &pool)?;
            format!("{text}invariance check {}\n", if pass { "PASSED" } else { "FAILED" })
        }
        Command::Stability => commands::run_stability(&setup, &out, &pool)?,
        Command::Contraction => commands::run_contraction(&setup, &out)?,
    };
    emit(&text)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(issues)) => {
            eprintln!("validation failed:");
            for i in issues {
                eprintln!("  - {i}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
