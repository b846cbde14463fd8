use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use chainsplitter::cloud_store::CloudArchive;
use chainsplitter::error::{SimError, StoreError};
use chainsplitter::sim::{
    byzantine_sweep, describe, emit_report, preset, run_with, Behavior, MetricsLog, Mode, ReportFormat, RunOptions,
    ScenarioConfig, PRESET_NAMES,
};
use chainsplitter::types::{verify_blocks, ChainBlock};

#[derive(Parser)]
#[command(name = "chainsplitter", version, about = "Overlay blockchain with cloud offload: simulator and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its metrics log.
    Run {
        /// TOML scenario file.
        #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Built-in scenario name instead of a file.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<Mode>,
        /// Output directory for the log and, when materialized, the archive.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Render a metrics log as CSV files or a JSON summary.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
    },
    /// Check a persisted archive end to end from genesis.
    Verify {
        #[arg(long)]
        archive: PathBuf,
    },
    /// List the built-in scenarios.
    Presets,
    /// Run a scenario once per seed with one node silent, then equivocating.
    Sweep {
        #[arg(long, default_value = "byzantine-sweep")]
        preset: String,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        /// Also write the per-run report as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

/// A failed check, as opposed to bad input.
struct Violation(String);

enum Failure {
    Violation(Violation),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvariantViolation { .. } => Failure::Violation(Violation(e.to_string())),
            // The display already carries the cause.
            other => Failure::Other(anyhow!(other.to_string())),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, preset, seed, mode, out } => run(config, preset, seed, mode, &out),
        Command::Report { log, format } => report(&log, format),
        Command::Verify { archive } => verify(&archive),
        Command::Presets => {
            for name in PRESET_NAMES {
                println!("{name:<16} {}", describe(name));
            }
            Ok(())
        }
        Command::Sweep { preset, seeds, json } => sweep(&preset, seeds, json.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation(Violation(msg))) => {
            eprintln!("invariant violation: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_preset(name: &str) -> Result<ScenarioConfig, Failure> {
    preset(name).ok_or_else(|| anyhow!("unknown preset {name:?}; see `chainsplitter presets`").into())
}

fn run(
    config: Option<PathBuf>,
    preset_name: Option<String>,
    seed: Option<u64>,
    mode: Option<Mode>,
    out: &Path,
) -> Result<(), Failure> {
    let mut cfg = match (config, preset_name) {
        (Some(path), _) => ScenarioConfig::load(&path).map_err(|e| anyhow!("loading {}: {e}", path.display()))?,
        (None, Some(name)) => load_preset(&name)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    cfg.validate()?;
    let archive_dir = (cfg.mode == Mode::Materialized).then(|| out.join("archive"));
    let output = run_with(&cfg, &RunOptions { archive_dir: archive_dir.clone() })?;
    let path = output.log.save(out)?;
    let log = &output.log;
    let c = &log.counters;
    println!("scenario {} seed {} over {} s", log.scenario, log.seed, log.duration_s);
    println!(
        "height {}  chain {} B  cloud {} B (head {})  peak local {} B",
        log.totals.height,
        log.totals.chain_bytes,
        log.totals.cloud_bytes,
        log.totals.cloud_head,
        log.totals.max_local_bytes
    );
    println!(
        "syncs {} regular, {} denied, {} rejected, {} exceptions; view changes {}; repairs {}",
        c.sync_regular, c.sync_denied, c.sync_rejected, c.sync_exceptions, c.view_changes, c.replica_repairs
    );
    if !log.totals.marked_nodes.is_empty() {
        println!("marked malicious: {:?}", log.totals.marked_nodes);
    }
    println!("log written to {}", path.display());
    if let Some(dir) = archive_dir {
        println!("archive written to {}", dir.display());
    }
    Ok(())
}

fn report(dir: &Path, format: ReportFormat) -> Result<(), Failure> {
    let log = MetricsLog::load(dir).map_err(|e| anyhow!("reading log in {}: {e}", dir.display()))?;
    for p in emit_report(&log, dir, format)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn verify(dir: &Path) -> Result<(), Failure> {
    let archive = match CloudArchive::load(dir) {
        Ok(a) => a,
        Err(e @ StoreError::Io(_)) => return Err(anyhow!("loading archive in {}: {e}", dir.display()).into()),
        Err(e) => return Err(Failure::Violation(Violation(format!("archive in {} is damaged: {e}", dir.display())))),
    };
    let mut problems = Vec::new();
    let consistency = archive.verify_consistency();
    for d in &consistency.divergent {
        problems.push(format!("replica {} diverges on {}..={}: {}", d.replica, d.first, d.last, d.detail));
    }
    if !archive.recorded_digests_hold() {
        problems.push("a stored segment no longer matches its recorded digest".into());
    }
    match archive.archived_blocks() {
        Ok(blocks) => {
            let genesis = ChainBlock::genesis(archive.scheme(), true);
            let report = verify_blocks(&blocks, Some(genesis.header()), archive.scheme());
            if !report.passed() {
                problems.push(format!("chain check failed: {}", report.summary()));
            }
            println!(
                "{} replicas, {} segments, {} blocks, {} bytes",
                archive.replication_factor(),
                archive.index().len(),
                blocks.len(),
                archive.bytes()
            );
        }
        Err(e) => problems.push(format!("archive unreadable: {e}")),
    }
    if problems.is_empty() {
        println!("archive ok");
        Ok(())
    } else {
        Err(Failure::Violation(Violation(problems.join("; "))))
    }
}

fn sweep(name: &str, seeds: u64, json: Option<&Path>) -> Result<(), Failure> {
    let base = load_preset(name)?;
    let report = byzantine_sweep(&base, seeds, &[Behavior::Silent, Behavior::Equivocate])?;
    if let Some(path) = json {
        let text = serde_json::to_string_pretty(&report).context("serializing report")?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    let failures: Vec<_> = report.failures().collect();
    println!(
        "{} runs, {} failed, fewest finalized blocks {}",
        report.runs.len(),
        failures.len(),
        report.min_finalized()
    );
    match failures.first() {
        None => Ok(()),
        Some(r) => Err(Failure::Violation(Violation(format!(
            "seed {} ({} node {}): {}",
            r.seed,
            r.behavior,
            r.byzantine,
            r.failure.as_deref().unwrap_or_default()
        )))),
    }
}
