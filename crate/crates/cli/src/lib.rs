//! Command-line driver: configuration, dispatch, outputs and campaigns.

pub mod campaign;
pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::io::Write;
use std::time::Instant;

use clap::Parser;

use crate::config::{Cli, Command, RunConfig};
use crate::output::{json_bytes, sibling, write_atomic, Gate, Manifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_GATE: i32 = 3;

/// Result of one in-process invocation.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub exit_code: i32,
    pub gates: Vec<Gate>,
    pub message: Option<String>,
}

impl RunReport {
    fn failed(code: i32, message: String) -> Self {
        Self { exit_code: code, gates: Vec::new(), message: Some(message) }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let report = run_report(args);
    if let Some(msg) = &report.message {
        eprintln!("{msg}");
    }
    report.exit_code
}

pub fn run_report<I, T>(args: I) -> RunReport
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return RunReport { exit_code: code, ..RunReport::default() };
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).try_init();
    match &cli.command {
        Command::Campaign(args) => campaign::run_campaign_command(args),
        other => {
            let (kind, flags) = other.kind().expect("non-campaign command");
            match RunConfig::resolve(kind, flags) {
                Ok(cfg) => dispatch(&cfg),
                Err(errors) => {
                    let mut msg = format!("error: invalid {} configuration:", kind.name());
                    for e in errors {
                        msg.push_str("\n  - ");
                        msg.push_str(&e);
                    }
                    RunReport::failed(EXIT_INVALID, msg)
                }
            }
        }
    }
}

fn with_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> anyhow::Result<(R, usize)> {
    match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build()?;
            Ok(pool.install(|| (f(), rayon::current_num_threads())))
        }
        None => Ok((f(), rayon::current_num_threads())),
    }
}

/// Runs a validated configuration and writes its outputs.
pub fn dispatch(cfg: &RunConfig) -> RunReport {
    let start = Instant::now();
    let (outcome, threads) = match with_pool(cfg.threads, || commands::execute(cfg)) {
        Ok((Ok(o), t)) => (o, t),
        Ok((Err(e), _)) | Err(e) => {
            return RunReport::failed(EXIT_RUNTIME, format!("error: {} failed: {e:#}", cfg.subcommand.name()))
        }
    };
    let wall = start.elapsed().as_secs_f64();
    let mut outputs = Vec::new();
    let write = || -> std::io::Result<()> {
        match &cfg.out {
            Some(path) => {
                write_atomic(path, &outcome.data)?;
                for (suffix, bytes) in &outcome.sidecars {
                    write_atomic(&sibling(path, suffix), bytes)?;
                }
            }
            None => std::io::stdout().lock().write_all(&outcome.data)?,
        }
        Ok(())
    };
    if let Err(e) = write() {
        return RunReport::failed(EXIT_RUNTIME, format!("error: cannot write output: {e}"));
    }
    if let Some(path) = &cfg.out {
        outputs.push(path.display().to_string());
        outputs.extend(outcome.sidecars.iter().map(|(s, _)| sibling(path, s).display().to_string()));
    }
    let manifest = Manifest {
        schema: "fracpile.manifest.v1",
        command: cfg.subcommand.name(),
        tool_version: env!("CARGO_PKG_VERSION"),
        core_version: fracpile::VERSION,
        config: serde_json::to_value(cfg).unwrap_or_default(),
        seeds: &outcome.seeds,
        threads,
        outputs,
        gates: &outcome.gates,
        summary: &outcome.summary,
        wall_time_seconds: wall,
    };
    let manifest_bytes = json_bytes(&manifest);
    let written = match &cfg.out {
        Some(path) => write_atomic(&sibling(path, ".manifest.json"), &manifest_bytes),
        None => std::io::stderr().lock().write_all(&manifest_bytes),
    };
    if let Err(e) = written {
        return RunReport::failed(EXIT_RUNTIME, format!("error: cannot write manifest: {e}"));
    }
    let mut exit_code = EXIT_OK;
    let mut message = None;
    if cfg.check {
        let mut lines = Vec::new();
        for g in &outcome.gates {
            lines.push(format!(
                "{} {} measured={:e} required {}",
                if g.passed { "PASS" } else { "FAIL" },
                g.name,
                g.measured,
                g.threshold
            ));
        }
        if outcome.gates.iter().any(|g| !g.passed) {
            exit_code = EXIT_GATE;
        }
        message = Some(lines.join("\n"));
    }
    RunReport { exit_code, gates: outcome.gates, message }
}
