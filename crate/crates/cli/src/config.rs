//! Command-line flags, JSON config files and their merge into a validated
//! [`RunConfig`].

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fracpile::sandpile::Weights;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "fracpile", version, about = "Long-range divisible sandpiles on the discrete torus")]
pub struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the periodized jump kernel.
    Kernel(Flags),
    /// Generator eigenvalues on one torus, or rate checks on a ladder.
    Spectrum(Flags),
    /// Stabilize a random configuration by parallel toppling.
    Stabilize(Flags),
    /// Odometer of a random configuration, spectral and/or by toppling.
    Odometer(Flags),
    /// Mean odometer growth over a ladder of torus sizes.
    OdometerStats(Flags),
    /// Variance of the rescaled odometer field against Fourier modes.
    FieldCov(Flags),
    /// Limit constants and eigenvalue convergence rates.
    EigenAsymptotics(Flags),
    /// Run a scripted sequence of subcommands.
    Campaign(CampaignArgs),
}

impl Command {
    pub fn kind(&self) -> Option<(Kind, &Flags)> {
        Some(match self {
            Command::Kernel(f) => (Kind::Kernel, f),
            Command::Spectrum(f) => (Kind::Spectrum, f),
            Command::Stabilize(f) => (Kind::Stabilize, f),
            Command::Odometer(f) => (Kind::Odometer, f),
            Command::OdometerStats(f) => (Kind::OdometerStats, f),
            Command::FieldCov(f) => (Kind::FieldCov, f),
            Command::EigenAsymptotics(f) => (Kind::EigenAsymptotics, f),
            Command::Campaign(_) => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Kernel,
    Spectrum,
    Stabilize,
    Odometer,
    OdometerStats,
    FieldCov,
    EigenAsymptotics,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Kernel => "kernel",
            Kind::Spectrum => "spectrum",
            Kind::Stabilize => "stabilize",
            Kind::Odometer => "odometer",
            Kind::OdometerStats => "odometer-stats",
            Kind::FieldCov => "field-cov",
            Kind::EigenAsymptotics => "eigen-asymptotics",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Spectral,
    Topple,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WeightsArg {
    Gaussian,
    Uniform,
}

impl From<WeightsArg> for Weights {
    fn from(w: WeightsArg) -> Self {
        match w {
            WeightsArg::Gaussian => Weights::Gaussian,
            WeightsArg::Uniform => Weights::Uniform,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON file with default values; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Torus side length.
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated torus sizes.
    #[arg(long, value_delimiter = ',')]
    pub n_ladder: Option<Vec<usize>>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Toppling stops once every site is within this of 1.
    #[arg(long, allow_negative_numbers = true)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Evaluate acceptance gates; exit 3 if any fails.
    #[arg(long)]
    pub check: bool,
    /// Fourier modes, `;`-separated, coordinates `,`-separated (e.g. `1,0;1,1`).
    #[arg(long)]
    pub modes: Option<String>,
    #[arg(long, value_enum)]
    pub weights: Option<WeightsArg>,
    /// Frequencies with ‖w‖ up to this enter the rate checks.
    #[arg(long, allow_negative_numbers = true)]
    pub w_radius: Option<f64>,
    /// Every this many replicates is re-solved by toppling (0 disables).
    #[arg(long)]
    pub audit_every: Option<usize>,
    /// Sizes with more sites than this skip toppling audits.
    #[arg(long)]
    pub audit_max_sites: Option<usize>,
    /// Relative tolerance of the kernel's periodized weights.
    #[arg(long, allow_negative_numbers = true)]
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CampaignArgs {
    /// Campaign script (JSON).
    pub script: PathBuf,
    /// Directory receiving all step outputs and the summary.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the script's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Contents of a `--config` file; every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dim: Option<usize>,
    pub n: Option<usize>,
    pub n_ladder: Option<Vec<usize>>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub eps: Option<f64>,
    pub max_steps: Option<u64>,
    pub method: Option<Method>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub threads: Option<usize>,
    pub check: Option<bool>,
    pub modes: Option<Vec<Vec<i64>>>,
    pub weights: Option<WeightsArg>,
    pub w_radius: Option<f64>,
    pub audit_every: Option<usize>,
    pub audit_max_sites: Option<usize>,
    pub rel_tol: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }
}

/// Fully merged and validated run parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub subcommand: Kind,
    pub dim: usize,
    pub n: Option<usize>,
    pub n_ladder: Option<Vec<usize>>,
    pub alpha: f64,
    pub seed: u64,
    pub replicates: usize,
    pub eps: f64,
    pub max_steps: u64,
    pub method: Method,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub threads: Option<usize>,
    pub check: bool,
    pub modes: Vec<Vec<i64>>,
    pub weights: WeightsArg,
    pub w_radius: f64,
    pub audit_every: usize,
    pub audit_max_sites: Option<usize>,
    pub rel_tol: f64,
}

fn parse_modes(text: &str) -> Result<Vec<Vec<i64>>, String> {
    text.split(';')
        .map(|m| {
            m.split(',')
                .map(|c| c.trim().parse::<i64>().map_err(|e| format!("bad mode coordinate {c:?}: {e}")))
                .collect()
        })
        .collect()
}

fn default_modes(d: usize) -> Vec<Vec<i64>> {
    let unit = |k: usize, v: i64| {
        let mut m = vec![0i64; d];
        m[k] = v;
        m
    };
    let mut diag = vec![0i64; d];
    diag[0] = 1;
    if d > 1 {
        diag[1] = 1;
    }
    let mut modes = vec![unit(0, 1)];
    if d > 1 {
        modes.push(diag);
    }
    modes.push(unit(0, 2));
    modes
}

impl RunConfig {
    /// Merges flags over the config file over defaults and validates the
    /// result. On failure returns every violation found.
    pub fn resolve(kind: Kind, flags: &Flags) -> Result<Self, Vec<String>> {
        let mut errors = Vec::new();
        let file = match &flags.config {
            Some(path) => FileConfig::load(path).unwrap_or_else(|e| {
                errors.push(e);
                FileConfig::default()
            }),
            None => FileConfig::default(),
        };
        let modes = match &flags.modes {
            Some(text) => parse_modes(text).unwrap_or_else(|e| {
                errors.push(e);
                Vec::new()
            }),
            None => file.modes.clone().unwrap_or_default(),
        };
        let dim = flags.dim.or(file.dim).unwrap_or(1);
        let alpha = flags.alpha.or(file.alpha);
        if alpha.is_none() {
            errors.push("alpha is required".to_string());
        }
        let stats_kind = matches!(kind, Kind::OdometerStats | Kind::FieldCov);
        let cfg = RunConfig {
            subcommand: kind,
            dim,
            n: flags.n.or(file.n),
            n_ladder: flags.n_ladder.clone().or(file.n_ladder),
            alpha: alpha.unwrap_or(f64::NAN),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            replicates: flags.replicates.or(file.replicates).unwrap_or(if kind == Kind::FieldCov {
                10_000
            } else {
                200
            }),
            eps: flags.eps.or(file.eps).unwrap_or(1e-12),
            max_steps: flags.max_steps.or(file.max_steps).unwrap_or(fracpile::sandpile::DEFAULT_MAX_STEPS),
            method: flags.method.or(file.method).unwrap_or(Method::Spectral),
            out: flags.out.clone().or(file.out),
            format: flags.format.or(file.format).unwrap_or(Format::Csv),
            threads: flags.threads.or(file.threads),
            check: flags.check || file.check.unwrap_or(false),
            modes: if modes.is_empty() && dim >= 1 { default_modes(dim) } else { modes },
            weights: flags.weights.or(file.weights).unwrap_or(WeightsArg::Gaussian),
            w_radius: flags.w_radius.or(file.w_radius).unwrap_or(4.0),
            audit_every: flags.audit_every.or(file.audit_every).unwrap_or(50),
            audit_max_sites: flags.audit_max_sites.or(file.audit_max_sites),
            rel_tol: flags.rel_tol.or(file.rel_tol).unwrap_or(fracpile::kernel::DEFAULT_REL_TOL),
        };
        if alpha.is_some() {
            errors.extend(cfg.violations());
        } else {
            errors.extend(cfg.violations().into_iter().filter(|e| !e.starts_with("alpha")));
        }
        if stats_kind && cfg.n.is_some() && cfg.n_ladder.is_some() {
            errors.push("give either --n or --n-ladder, not both".to_string());
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(errors)
        }
    }

    /// Every violated constraint, in a fixed order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(1..=6).contains(&self.dim) {
            v.push(format!("dim must be between 1 and 6, got {}", self.dim));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            v.push(format!("alpha must be positive and finite, got {}", self.alpha));
        }
        if self.n.is_some_and(|n| n < 2) {
            v.push(format!("n must be at least 2, got {}", self.n.unwrap_or(0)));
        }
        if let Some(ladder) = &self.n_ladder {
            if ladder.iter().any(|&n| n < 2) {
                v.push("ladder sizes must be at least 2".to_string());
            }
            if ladder.windows(2).any(|w| w[1] <= w[0]) {
                v.push("ladder must be strictly increasing".to_string());
            }
        }
        let min_ladder = match self.subcommand {
            Kind::Spectrum | Kind::EigenAsymptotics => 4,
            Kind::OdometerStats => 3,
            _ => 1,
        };
        match self.subcommand {
            Kind::Kernel | Kind::Stabilize | Kind::Odometer => {
                if self.n.is_none() {
                    v.push("n is required".to_string());
                }
                if self.n_ladder.is_some() {
                    v.push(format!("{} takes --n, not --n-ladder", self.subcommand.name()));
                }
            }
            Kind::Spectrum => {
                if self.n.is_none() == self.n_ladder.is_none() {
                    v.push("spectrum needs exactly one of --n or --n-ladder".to_string());
                }
            }
            Kind::OdometerStats | Kind::EigenAsymptotics => {
                if self.n.is_some() {
                    v.push(format!("{} takes --n-ladder, not --n", self.subcommand.name()));
                }
            }
            Kind::FieldCov => {
                if self.n.is_none() && self.n_ladder.is_none() {
                    v.push("field-cov needs --n or --n-ladder".to_string());
                }
            }
        }
        if let Some(ladder) = &self.n_ladder {
            if ladder.len() < min_ladder {
                v.push(format!("ladder needs at least {min_ladder} sizes, got {}", ladder.len()));
            }
        }
        if self.subcommand == Kind::OdometerStats && self.n_ladder.is_none() {
            v.push("n_ladder is required".to_string());
        }
        if matches!(self.subcommand, Kind::OdometerStats | Kind::FieldCov) && self.replicates < 30 {
            v.push(format!("replicates must be at least 30, got {}", self.replicates));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            v.push(format!("eps must be positive, got {}", self.eps));
        }
        if self.max_steps == 0 {
            v.push("max_steps must be positive".to_string());
        }
        if self.threads == Some(0) {
            v.push("threads must be at least 1".to_string());
        }
        if !(self.w_radius >= 1.0 && self.w_radius.is_finite()) {
            v.push(format!("w_radius must be at least 1, got {}", self.w_radius));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-6) {
            v.push(format!("rel_tol must lie in (0, 1e-6], got {}", self.rel_tol));
        }
        if self.subcommand == Kind::FieldCov {
            for m in &self.modes {
                if m.len() != self.dim {
                    v.push(format!("mode {m:?} has {} coordinates, dim is {}", m.len(), self.dim));
                } else if m.iter().all(|&c| c == 0) {
                    v.push("modes must be nonzero".to_string());
                }
            }
        }
        v
    }

    /// Ladder, or the single size as a one-point ladder.
    pub fn sizes(&self) -> Vec<usize> {
        match (&self.n_ladder, self.n) {
            (Some(l), _) => l.clone(),
            (None, Some(n)) => vec![n],
            (None, None) => Vec::new(),
        }
    }

    pub fn default_ladder(d: usize) -> Vec<usize> {
        match d {
            1 => vec![64, 128, 256, 512, 1024],
            2 => vec![16, 32, 64, 128],
            _ => vec![8, 12, 16, 24],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_parse() {
        assert_eq!(parse_modes("1,0;1,1").unwrap(), vec![vec![1, 0], vec![1, 1]]);
        assert!(parse_modes("1,x").is_err());
    }

    #[test]
    fn default_modes_by_dimension() {
        assert_eq!(default_modes(1), vec![vec![1], vec![2]]);
        assert_eq!(default_modes(2), vec![vec![1, 0], vec![1, 1], vec![2, 0]]);
    }
}
