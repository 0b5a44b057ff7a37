//! Seeded replicate streams, odometer-mean and field-covariance campaigns,
//! and scaling fits.
//!
//! Stream derivation: `seed_stream(m, i)` is ChaCha20 keyed by
//! `seed_from_u64(m)` with stream id `i`. A ladder level `n` uses the master
//! seed `splitmix64(m ^ n)`, so levels and replicates never share a stream.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::fields::{pair_with_cells, FieldSpec, TestFunction};
use crate::kernel::{build_kernel, Generator, DEFAULT_REL_TOL};
use crate::numerics::{fit_line, KahanSum};
use crate::sandpile::{init_with_rng, stabilize_with, StabilizeOptions, Weights};
use crate::solver::{min_normalize, SpectralSolver};
use crate::spectrum::Spectrum;
use crate::torus::{format_coords, norm, LatticeSpec};

/// Independent generator for replicate `replicate_index` under `master_seed`.
pub fn seed_stream(master_seed: u64, replicate_index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate_index);
    rng
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Master seed of ladder level `n`.
pub fn level_seed(master_seed: u64, n: usize) -> u64 {
    splitmix64(master_seed ^ n as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    OdometerMean,
    FieldCov,
    EigenRates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub d: usize,
    pub alpha: f64,
    pub n_ladder: Vec<usize>,
    pub replicates: usize,
    pub master_seed: u64,
    pub kind: ExperimentKind,
    #[serde(default = "default_weights")]
    pub weights: Weights,
    /// Stopping tolerance of the toppling audits.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    /// Every this many replicates is re-solved by toppling (0 disables).
    #[serde(default = "default_audit_every")]
    pub audit_every: usize,
    /// Largest accepted sup-norm gap between the two odometer routes.
    #[serde(default = "default_audit_tol")]
    pub audit_tol: f64,
    /// Levels with more sites than this skip the toppling audit.
    #[serde(default)]
    pub audit_max_sites: Option<usize>,
}

fn default_weights() -> Weights {
    Weights::Gaussian
}
fn default_eps() -> f64 {
    1e-12
}
fn default_max_steps() -> u64 {
    crate::sandpile::DEFAULT_MAX_STEPS
}
fn default_audit_every() -> usize {
    50
}
fn default_audit_tol() -> f64 {
    1e-6
}

impl ExperimentPlan {
    pub fn new(
        kind: ExperimentKind,
        d: usize,
        alpha: f64,
        n_ladder: Vec<usize>,
        replicates: usize,
        master_seed: u64,
    ) -> Self {
        Self {
            d,
            alpha,
            n_ladder,
            replicates,
            master_seed,
            kind,
            weights: default_weights(),
            eps: default_eps(),
            max_steps: default_max_steps(),
            audit_every: default_audit_every(),
            audit_tol: default_audit_tol(),
            audit_max_sites: None,
        }
    }

    /// Every violated constraint, in a fixed order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.d == 0 {
            v.push("d must be at least 1".to_string());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            v.push(format!("alpha must be positive, got {}", self.alpha));
        }
        let min_sizes = if self.kind == ExperimentKind::FieldCov { 1 } else { 3 };
        if self.n_ladder.len() < min_sizes {
            v.push(format!("ladder needs at least {min_sizes} sizes, got {}", self.n_ladder.len()));
        }
        if self.n_ladder.windows(2).any(|w| w[1] <= w[0]) {
            v.push("ladder must be strictly increasing".to_string());
        }
        if self.n_ladder.first().is_some_and(|&n| n < 2) {
            v.push("ladder sizes must be at least 2".to_string());
        }
        if self.kind != ExperimentKind::EigenRates && self.replicates < 30 {
            v.push(format!("replicates must be at least 30, got {}", self.replicates));
        }
        if !(self.eps > 0.0) {
            v.push(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.audit_tol > 0.0) {
            v.push(format!("audit_tol must be positive, got {}", self.audit_tol));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(v.join("; ")))
        }
    }
}

fn solver_for(d: usize, n: usize, alpha: f64) -> Result<(Generator, SpectralSolver)> {
    let kernel = build_kernel(LatticeSpec::new(d, n)?, alpha, DEFAULT_REL_TOL)?;
    let generator = Generator::new(&kernel);
    let solver = SpectralSolver::new(&Spectrum::from_generator(&generator, alpha));
    Ok((generator, solver))
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    let mean = values.iter().copied().collect::<KahanSum>().value() / r;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).collect::<KahanSum>().value() / (r - 1.0);
    (mean, (var / r).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdometerMeanRow {
    pub n: usize,
    pub replicates: usize,
    /// Replicate average of `n^{−d} Σ_x u(x)`.
    pub mean: f64,
    pub stderr: f64,
    pub level_seed: u64,
    pub audits: usize,
    /// Largest sup-norm gap between the spectral and toppling odometers.
    pub max_audit_gap: f64,
    /// Largest residual `‖s + L u − 1‖_∞` among spectral solves.
    pub max_residual: f64,
}

struct ReplicateOdometer {
    site_mean: f64,
    residual: f64,
    audit_gap: Option<f64>,
}

/// Mean site-averaged odometer per ladder level, spectral route with
/// toppling audits.
pub fn run_odometer_mean(plan: &ExperimentPlan) -> Result<Vec<OdometerMeanRow>> {
    plan.validate()?;
    let mut rows = Vec::with_capacity(plan.n_ladder.len());
    for &n in &plan.n_ladder {
        let (generator, solver) = solver_for(plan.d, n, plan.alpha)?;
        let spec = solver.spec();
        let seed = level_seed(plan.master_seed, n);
        let audit_every = match plan.audit_max_sites {
            Some(cap) if spec.site_count() > cap => {
                log::info!("n={n}: {} sites exceed the audit cap {cap}; toppling audits skipped", spec.site_count());
                0
            }
            _ => plan.audit_every,
        };
        let results: Vec<Result<ReplicateOdometer>> = (0..plan.replicates)
            .into_par_iter()
            .map(|r| {
                let fail = |reason: String| Error::ReplicateFailed { index: r as u64, seed, reason };
                let state = init_with_rng(spec, plan.weights, &mut seed_stream(seed, r as u64));
                let od = solver.odometer(state.masses()).map_err(|e| fail(e.to_string()))?;
                let audit_gap = if audit_every > 0 && r % audit_every == 0 {
                    let opts =
                        StabilizeOptions { eps: plan.eps, max_steps: plan.max_steps, ..StabilizeOptions::default() };
                    let res = stabilize_with(state, &generator, &opts).map_err(|e| fail(e.to_string()))?;
                    if !res.converged {
                        return Err(fail(format!("toppling audit did not converge in {} steps", res.iterations)));
                    }
                    let topple = res.state.odometer_min_normalized();
                    let gap = topple.iter().zip(&od.u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                    if gap > plan.audit_tol {
                        return Err(fail(format!("odometer routes differ by {gap:e}")));
                    }
                    Some(gap)
                } else {
                    None
                };
                Ok(ReplicateOdometer {
                    site_mean: od.u.iter().copied().collect::<KahanSum>().value() / spec.site_count() as f64,
                    residual: od.residual,
                    audit_gap,
                })
            })
            .collect();
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        let means: Vec<f64> = results.iter().map(|r| r.site_mean).collect();
        let (mean, stderr) = mean_and_stderr(&means);
        let gaps: Vec<f64> = results.iter().filter_map(|r| r.audit_gap).collect();
        rows.push(OdometerMeanRow {
            n,
            replicates: plan.replicates,
            mean,
            stderr,
            level_seed: seed,
            audits: gaps.len(),
            max_audit_gap: gaps.iter().copied().fold(0.0, f64::max),
            max_residual: results.iter().map(|r| r.residual).fold(0.0, f64::max),
        });
        log::info!("n={n}: mean odometer {mean:.6} ± {stderr:.2e}");
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldCovRow {
    pub n: usize,
    pub nu: Vec<i64>,
    pub replicates: usize,
    /// Sample variance of `⟨Ξ_n, φ_ν⟩` (mean of `|X − X̄|²`).
    pub empirical_var: f64,
    pub stderr: f64,
    /// `‖ν‖^{−2γ}`.
    pub limit_var: f64,
    pub ratio: f64,
    /// Largest `|⟨u, φ_ν⟩ − ⟨η, φ_ν⟩|` over replicates.
    pub min_shift_gap: f64,
}

impl FieldCovRow {
    pub fn nu_label(&self) -> String {
        format_coords(&self.nu)
    }
}

/// Variance of single-mode pairings of the rescaled odometer per ladder level.
pub fn run_field_cov(plan: &ExperimentPlan, modes: &[Vec<i64>], fs: &FieldSpec) -> Result<Vec<FieldCovRow>> {
    plan.validate()?;
    if modes.is_empty() {
        return Err(Error::InvalidParameter("at least one mode is required".into()));
    }
    let tests = modes.iter().map(|nu| TestFunction::mode(nu)).collect::<Result<Vec<_>>>()?;
    if fs.d != plan.d || fs.alpha != plan.alpha {
        return Err(Error::InvalidParameter("field normalization does not match the plan".into()));
    }
    let mut rows = Vec::new();
    for &n in &plan.n_ladder {
        let (_, solver) = solver_for(plan.d, n, plan.alpha)?;
        let spec = solver.spec();
        let cells = tests.iter().map(|t| t.cell_integrals(spec)).collect::<Result<Vec<_>>>()?;
        let seed = level_seed(plan.master_seed, n);
        let draws: Vec<Result<(Vec<Complex64>, f64)>> = (0..plan.replicates)
            .into_par_iter()
            .map(|r| {
                let fail = |e: Error| Error::ReplicateFailed { index: r as u64, seed, reason: e.to_string() };
                let sample = solver.sample_eta_with(plan.weights, &mut seed_stream(seed, r as u64)).map_err(fail)?;
                let u = min_normalize(&sample.eta);
                let mut pairs = Vec::with_capacity(cells.len());
                let mut gap = 0.0f64;
                for c in &cells {
                    let pu = pair_with_cells(&u, c, spec, fs).map_err(fail)?;
                    let pe = pair_with_cells(&sample.eta, c, spec, fs).map_err(fail)?;
                    gap = gap.max((pu - pe).norm());
                    pairs.push(pu);
                }
                Ok((pairs, gap))
            })
            .collect();
        let draws = draws.into_iter().collect::<Result<Vec<_>>>()?;
        let gap = draws.iter().map(|d| d.1).fold(0.0, f64::max);
        for (k, nu) in modes.iter().enumerate() {
            let xs: Vec<Complex64> = draws.iter().map(|d| d.0[k]).collect();
            let r = xs.len() as f64;
            let mean = xs.iter().fold(Complex64::new(0.0, 0.0), |a, b| a + b) / r;
            let sq: Vec<f64> = xs.iter().map(|x| (x - mean).norm_sqr()).collect();
            let (m, se) = mean_and_stderr(&sq);
            let var = m * r / (r - 1.0);
            let limit = norm(nu).powf(-2.0 * fs.gamma);
            rows.push(FieldCovRow {
                n,
                nu: nu.clone(),
                replicates: plan.replicates,
                empirical_var: var,
                stderr: se * r / (r - 1.0),
                limit_var: limit,
                ratio: var / limit,
                min_shift_gap: gap,
            });
        }
        log::info!("n={n}: field covariance over {} modes done", modes.len());
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingModel {
    /// `log y = a + b log n`.
    PowerInN,
    /// `y = a + b log n`.
    LinearInLogN,
    /// `y = a + b (log n)^{1/2}`.
    SqrtLogN,
}

impl ScalingModel {
    fn abscissa(self, n: f64) -> f64 {
        match self {
            ScalingModel::PowerInN | ScalingModel::LinearInLogN => n.ln(),
            ScalingModel::SqrtLogN => n.ln().sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: f64,
    pub value: f64,
    pub stderr: f64,
}

impl From<&OdometerMeanRow> for ScalingPoint {
    fn from(r: &OdometerMeanRow) -> Self {
        Self { n: r.n as f64, value: r.mean, stderr: r.stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub model: ScalingModel,
    pub intercept: f64,
    pub slope: f64,
    pub intercept_stderr: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    pub chi_squared: f64,
    pub dof: usize,
    /// Upper tail probability of `chi_squared`.
    pub lack_of_fit_p: f64,
    /// Ladder sizes dropped after a failed lack-of-fit test.
    pub excluded_n: Vec<f64>,
}

/// Significance level of the lack-of-fit test that drops the smallest size.
pub const LACK_OF_FIT_LEVEL: f64 = 0.01;

fn fit_once(points: &[ScalingPoint], model: ScalingModel) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!("{} points, need at least 3", points.len())));
    }
    let x: Vec<f64> = points.iter().map(|p| model.abscissa(p.n)).collect();
    let (y, sigma): (Vec<f64>, Vec<f64>) = match model {
        ScalingModel::PowerInN => {
            if points.iter().any(|p| p.value <= 0.0) {
                return Err(Error::InvalidParameter("power-law fit needs positive values".into()));
            }
            points.iter().map(|p| (p.value.ln(), p.stderr / p.value)).unzip()
        }
        _ => points.iter().map(|p| (p.value, p.stderr)).unzip(),
    };
    let weighted = sigma.iter().all(|s| *s > 0.0 && s.is_finite());
    let fit = fit_line(&x, &y, weighted.then_some(sigma.as_slice()))
        .ok_or_else(|| Error::SingularDesign("ladder abscissae do not vary".into()))?;
    let dof = points.len() - 2;
    let p =
        if weighted { 1.0 - ChiSquared::new(dof as f64).map(|c| c.cdf(fit.chi_squared)).unwrap_or(0.0) } else { 1.0 };
    Ok(ScalingFit {
        model,
        intercept: fit.intercept,
        slope: fit.slope,
        intercept_stderr: fit.intercept_stderr,
        slope_stderr: fit.slope_stderr,
        r_squared: fit.r_squared,
        chi_squared: fit.chi_squared,
        dof,
        lack_of_fit_p: p,
        excluded_n: Vec::new(),
    })
}

/// Weighted least squares fit; the smallest sizes are dropped while the
/// lack-of-fit test rejects at [`LACK_OF_FIT_LEVEL`] and 3 points remain.
pub fn fit_scaling(points: &[ScalingPoint], model: ScalingModel) -> Result<ScalingFit> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.n.total_cmp(&b.n));
    let mut fit = fit_once(&sorted, model)?;
    let mut start = 0;
    while fit.lack_of_fit_p < LACK_OF_FIT_LEVEL && sorted.len() - start > 3 {
        log::info!("lack of fit (p = {:.3e}) under {model:?}: excluding n = {}", fit.lack_of_fit_p, sorted[start].n);
        start += 1;
        fit = fit_once(&sorted[start..], model)?;
    }
    fit.excluded_n = sorted[..start].iter().map(|p| p.n).collect();
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| seed_stream(5, 0).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(seed_stream(5, 0).next_u64(), seed_stream(5, 1).next_u64());
        assert_ne!(seed_stream(5, 0).next_u64(), seed_stream(6, 0).next_u64());
        assert_ne!(level_seed(1, 16), level_seed(1, 32));
    }

    #[test]
    fn plan_lists_every_violation() {
        let mut plan = ExperimentPlan::new(ExperimentKind::OdometerMean, 2, -1.0, vec![16, 8], 10, 1);
        assert_eq!(plan.violations().len(), 4);
        plan.alpha = 1.0;
        plan.n_ladder = vec![8, 16, 32];
        plan.replicates = 30;
        assert!(plan.validate().is_ok());
    }

    #[test]
    fn exact_power_law_is_recovered() {
        let pts: Vec<ScalingPoint> = [8.0, 16.0, 32.0, 64.0]
            .iter()
            .map(|&n: &f64| ScalingPoint { n, value: 3.0 * n.powf(1.25), stderr: 0.0 })
            .collect();
        let fit = fit_scaling(&pts, ScalingModel::PowerInN).unwrap();
        assert!((fit.slope - 1.25).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(fit.r_squared > 1.0 - 1e-12);
        let flat: Vec<ScalingPoint> = pts.iter().map(|p| ScalingPoint { n: 8.0, ..*p }).collect();
        assert!(matches!(fit_scaling(&flat, ScalingModel::PowerInN), Err(Error::SingularDesign(_))));
        assert!(fit_scaling(&pts[..2], ScalingModel::PowerInN).is_err());
    }
}
