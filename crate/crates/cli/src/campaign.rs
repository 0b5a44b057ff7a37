//! Scripted sequences of subcommands with a single gate summary.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::config::CampaignArgs;
use crate::output::{num, write_atomic, Csv};
use crate::{run_report, RunReport, EXIT_GATE, EXIT_INVALID, EXIT_OK, EXIT_RUNTIME};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignScript {
    pub name: String,
    pub master_seed: u64,
    pub steps: Vec<CampaignStep>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignStep {
    pub name: String,
    /// Subcommand followed by its flags. `--seed` defaults to the master
    /// seed and `--out` to `<name>.csv` (or `.json`) inside the campaign
    /// directory; a relative `--out` is placed inside that directory.
    pub args: Vec<String>,
    #[serde(default)]
    pub expect_exit: i32,
}

impl CampaignScript {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let script: Self = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut names: Vec<&str> = script.steps.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(format!("{}: step names must be unique", path.display()));
        }
        if script.steps.iter().any(|s| s.args.is_empty()) {
            return Err(format!("{}: every step needs a subcommand", path.display()));
        }
        Ok(script)
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub name: String,
    pub command: String,
    pub expected_exit: i32,
    pub report: RunReport,
}

#[derive(Debug, Clone)]
pub struct CampaignSummary {
    pub steps: Vec<StepResult>,
    /// Name of the step that aborted the campaign, if any.
    pub aborted_at: Option<String>,
}

impl CampaignSummary {
    pub fn exit_code(&self) -> i32 {
        if self.aborted_at.is_some() {
            EXIT_RUNTIME
        } else if self.steps.iter().any(|s| s.report.exit_code != s.expected_exit) {
            EXIT_GATE
        } else {
            EXIT_OK
        }
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut csv = Csv::new(
            "campaign",
            &["step", "command", "exit_code", "expected_exit", "gate", "passed", "measured", "threshold"],
        );
        for s in &self.steps {
            let head = [s.name.clone(), s.command.clone(), s.report.exit_code.to_string(), s.expected_exit.to_string()];
            if s.report.gates.is_empty() {
                let mut row = head.to_vec();
                row.extend([String::new(), String::new(), String::new(), String::new()]);
                csv.row(&row);
            }
            for g in &s.report.gates {
                let mut row = head.to_vec();
                row.extend([g.name.clone(), g.passed.to_string(), num(g.measured), quote(&g.threshold)]);
                csv.row(&row);
            }
        }
        csv.into_bytes()
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn has_flag(args: &[String], flag: &str) -> Option<usize> {
    args.iter().position(|a| a == flag || a.starts_with(&format!("{flag}=")))
}

/// Final argument vector of a step inside `dir`.
pub fn step_args(step: &CampaignStep, dir: &Path, master_seed: u64, threads: Option<usize>) -> Vec<String> {
    let mut args = vec!["fracpile".to_string()];
    args.extend(step.args.iter().cloned());
    match has_flag(&args, "--out") {
        Some(i) if args[i] == "--out" && i + 1 < args.len() => {
            let p = PathBuf::from(&args[i + 1]);
            if p.is_relative() {
                args[i + 1] = dir.join(p).display().to_string();
            }
        }
        Some(_) => {}
        None => {
            let ext = if args.windows(2).any(|w| w[0] == "--format" && w[1] == "json") { "json" } else { "csv" };
            args.push("--out".into());
            args.push(dir.join(format!("{}.{ext}", step.name)).display().to_string());
        }
    }
    if has_flag(&args, "--seed").is_none() {
        args.push("--seed".into());
        args.push(master_seed.to_string());
    }
    if let Some(t) = threads {
        if has_flag(&args, "--threads").is_none() {
            args.push("--threads".into());
            args.push(t.to_string());
        }
    }
    args
}

/// Runs every step in order. Steps exiting 1 or 2 against expectation abort
/// the campaign; gate failures are recorded and the campaign continues.
pub fn run_campaign(script: &CampaignScript, dir: &Path, seed: Option<u64>, threads: Option<usize>) -> CampaignSummary {
    let master = seed.unwrap_or(script.master_seed);
    let mut steps = Vec::new();
    let mut aborted_at = None;
    for step in &script.steps {
        let args = step_args(step, dir, master, threads);
        log::info!("campaign {}: step {}: {}", script.name, step.name, args[1..].join(" "));
        let report = run_report(args);
        if let Some(msg) = &report.message {
            eprintln!("[{}] {msg}", step.name);
        }
        let hard = report.exit_code != step.expect_exit && matches!(report.exit_code, EXIT_RUNTIME | EXIT_INVALID);
        steps.push(StepResult {
            name: step.name.clone(),
            command: step.args[0].clone(),
            expected_exit: step.expect_exit,
            report,
        });
        if hard {
            eprintln!("campaign {} aborted at step {}", script.name, step.name);
            aborted_at = Some(step.name.clone());
            break;
        }
    }
    CampaignSummary { steps, aborted_at }
}

pub fn run_campaign_command(args: &CampaignArgs) -> RunReport {
    let script = match CampaignScript::load(&args.script) {
        Ok(s) => s,
        Err(e) => {
            return RunReport { exit_code: EXIT_INVALID, gates: Vec::new(), message: Some(format!("error: {e}")) }
        }
    };
    if args.threads == Some(0) {
        return RunReport {
            exit_code: EXIT_INVALID,
            gates: Vec::new(),
            message: Some("error: threads must be at least 1".into()),
        };
    }
    let summary = run_campaign(&script, &args.out, args.seed, args.threads);
    let path = args.out.join("summary.csv");
    if let Err(e) = write_atomic(&path, &summary.to_csv()) {
        return RunReport { exit_code: EXIT_RUNTIME, gates: Vec::new(), message: Some(format!("error: {e}")) };
    }
    let failed: Vec<&str> =
        summary.steps.iter().filter(|s| s.report.exit_code != s.expected_exit).map(|s| s.name.as_str()).collect();
    let message = if failed.is_empty() {
        format!("campaign {}: {} steps as expected; summary in {}", script.name, summary.steps.len(), path.display())
    } else {
        format!("campaign {}: unexpected exit in {}; summary in {}", script.name, failed.join(", "), path.display())
    };
    RunReport {
        exit_code: summary.exit_code(),
        gates: summary.steps.iter().flat_map(|s| s.report.gates.clone()).collect(),
        message: Some(message),
    }
}
