//! Subcommand implementations. Each returns an [`Outcome`] holding the data
//! bytes, gate results and a summary for the manifest.

use std::path::PathBuf;

use fracpile::fields::{phi_reference, FieldSpec};
use fracpile::kernel::{build_kernel, Generator, LongRangeKernel};
use fracpile::montecarlo::{
    fit_scaling, level_seed, run_field_cov, run_odometer_mean, ExperimentKind, ExperimentPlan, ScalingModel,
    ScalingPoint,
};
use fracpile::numerics::KahanSum;
use fracpile::sandpile::{init_random, stabilize_with, StabilizeOptions};
use fracpile::solver::SpectralSolver;
use fracpile::spectrum::{limit_constant, verify_rate_lemmas, LimitMethod, RateReport, Spectrum};
use fracpile::LatticeSpec;
use serde::Serialize;
use serde_json::json;

use crate::config::{Format, Kind, Method, RunConfig};
use crate::output::{coords, json_bytes, num, write_atomic, Csv, Gate, Outcome};

pub fn execute(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    match cfg.subcommand {
        Kind::Kernel => kernel(cfg),
        Kind::Spectrum => spectrum(cfg),
        Kind::Stabilize => stabilize(cfg),
        Kind::Odometer => odometer(cfg),
        Kind::OdometerStats => odometer_stats(cfg),
        Kind::FieldCov => field_cov(cfg),
        Kind::EigenAsymptotics => eigen_asymptotics(cfg),
    }
}

fn cache_path(spec: LatticeSpec, alpha: f64, rel_tol: f64) -> Option<PathBuf> {
    let dir = std::env::var_os("FRACPILE_CACHE_DIR")?;
    Some(PathBuf::from(dir).join(format!(
        "kernel-d{}-n{}-a{:016x}-t{:016x}.bin",
        spec.dim(),
        spec.side(),
        alpha.to_bits(),
        rel_tol.to_bits()
    )))
}

/// Builds the kernel, reading and filling the on-disk cache when
/// `FRACPILE_CACHE_DIR` is set.
pub fn load_kernel(spec: LatticeSpec, alpha: f64, rel_tol: f64) -> anyhow::Result<LongRangeKernel> {
    let path = cache_path(spec, alpha, rel_tol);
    if let Some(p) = &path {
        if let Ok(file) = std::fs::File::open(p) {
            match LongRangeKernel::read_binary(std::io::BufReader::new(file)) {
                Ok(k) if k.spec() == spec && k.alpha() == alpha && k.rel_tol() == rel_tol => {
                    log::info!("kernel read from cache {}", p.display());
                    return Ok(k);
                }
                Ok(_) => log::warn!("cache entry {} does not match; rebuilding", p.display()),
                Err(e) => log::warn!("unreadable cache entry {}: {e}; rebuilding", p.display()),
            }
        }
    }
    let kernel = build_kernel(spec, alpha, rel_tol)?;
    if let Some(p) = &path {
        let mut bytes = Vec::new();
        kernel.write_binary(&mut bytes)?;
        if let Err(e) = write_atomic(p, &bytes) {
            log::warn!("cannot write kernel cache {}: {e}", p.display());
        }
    }
    Ok(kernel)
}

fn single_spec(cfg: &RunConfig) -> anyhow::Result<LatticeSpec> {
    Ok(LatticeSpec::new(cfg.dim, cfg.n.expect("validated"))?)
}

fn kernel_gates(kernel: &LongRangeKernel) -> Vec<Gate> {
    let w = kernel.weights();
    let mass: f64 = w.iter().copied().collect::<KahanSum>().value();
    let asymmetric =
        kernel.spec().negation_table().iter().enumerate().filter(|&(i, &j)| w[i].to_bits() != w[j].to_bits()).count();
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    vec![
        Gate::at_most("kernel-mass", (mass - 1.0).abs(), 1e-12),
        Gate::new("kernel-symmetry", asymmetric == 0, asymmetric as f64, "0 asymmetric pairs"),
        Gate::new("kernel-positivity", min > 0.0, min, "> 0"),
    ]
}

fn kernel(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let kernel = load_kernel(single_spec(cfg)?, cfg.alpha, cfg.rel_tol)?;
    let data = match cfg.format {
        Format::Csv => {
            let mut buf = Vec::new();
            kernel.write_csv(&mut buf)?;
            buf
        }
        Format::Json => json_bytes(&json!({
            "schema": "fracpile.kernel.v1",
            "d": cfg.dim,
            "n": cfg.n,
            "alpha": cfg.alpha,
            "rel_tol": cfg.rel_tol,
            "truncation_radius": kernel.truncation_radius(),
            "tail_bound": kernel.tail_bound(),
            "weights": kernel.weights(),
        })),
    };
    Ok(Outcome {
        data,
        summary: json!({
            "truncation_radius": kernel.truncation_radius(),
            "tail_bound": kernel.tail_bound(),
        }),
        gates: kernel_gates(&kernel),
        ..Outcome::default()
    })
}

fn spectrum(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    match &cfg.n_ladder {
        None => single_spectrum(cfg),
        Some(ladder) => {
            let report = verify_rate_lemmas(cfg.dim, ladder, cfg.alpha, cfg.w_radius)?;
            let gates = rate_gates(&report);
            let data = match cfg.format {
                Format::Csv => rate_samples_csv(&report),
                Format::Json => json_bytes(&json!({ "schema": "fracpile.rates.v1", "report": report })),
            };
            Ok(Outcome {
                data,
                summary: json!({ "c_tilde": report.c_tilde, "c_tilde_method": report.c_tilde_method }),
                gates,
                ..Outcome::default()
            })
        }
    }
}

fn single_spectrum(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let kernel = load_kernel(single_spec(cfg)?, cfg.alpha, cfg.rel_tol)?;
    let sp = Spectrum::from_generator(&Generator::new(&kernel), cfg.alpha);
    let spec = sp.spec();
    let zero = sp.values()[spec.index_of(&vec![0; cfg.dim])];
    let worst_sign = sp
        .values()
        .iter()
        .enumerate()
        .filter(|&(i, _)| !spec.point(i).is_origin())
        .map(|(_, &l)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let asym = spec
        .negation_table()
        .iter()
        .enumerate()
        .map(|(i, &j)| (sp.values()[i] - sp.values()[j]).abs())
        .fold(0.0, f64::max);
    let data = match cfg.format {
        Format::Csv => {
            let mut buf = Vec::new();
            sp.write_csv(&mut buf)?;
            buf
        }
        Format::Json => json_bytes(&json!({
            "schema": "fracpile.spectrum.v1",
            "d": cfg.dim,
            "n": cfg.n,
            "alpha": cfg.alpha,
            "lambda": sp.values(),
        })),
    };
    let mut gates = kernel_gates(&kernel);
    gates.extend([
        Gate::at_most("imaginary-residue", sp.max_imag(), 1e-12),
        Gate::at_most("zero-mode", zero.abs(), 1e-12),
        Gate::new("nonzero-modes-negative", worst_sign < 0.0, worst_sign, "< 0"),
        Gate::at_most("spectrum-symmetry", asym, 1e-15),
    ]);
    Ok(Outcome {
        data,
        summary: json!({ "max_imag": sp.max_imag(), "largest_nonzero_eigenvalue": worst_sign }),
        gates,
        ..Outcome::default()
    })
}

/// Acceptance gates on a ladder report, by regime of `α`.
pub fn rate_gates(report: &RateReport) -> Vec<Gate> {
    let mut gates = Vec::new();
    let label = |w: &Option<Vec<i64>>| coords(w.as_deref().unwrap_or(&[]));
    if report.alpha < 2.0 {
        for c in report.checks_named("limit-ratio") {
            let top = *c.values.last().unwrap_or(&f64::NAN);
            gates.push(Gate::within(format!("limit-ratio w={}", label(&c.w)), top, 0.8, 1.25));
        }
        for c in report.checks_named("riemann-rate") {
            let expected = c.expected_exponent.unwrap_or(f64::NAN);
            let fitted = c.fitted_exponent.unwrap_or(f64::NAN);
            gates.push(Gate::within(format!("riemann-rate w={}", label(&c.w)), fitted, expected - 0.3, expected + 0.3));
        }
    } else {
        let name = if report.alpha == 2.0 { "log-correction" } else { "membrane-limit" };
        let limit = if report.alpha == 2.0 { 0.10 } else { 0.05 };
        for c in report.checks_named(name) {
            let v = &c.values;
            let change = match v.len() {
                0 | 1 => f64::NAN,
                k => (v[k - 1] - v[k - 2]).abs() / v[k - 2],
            };
            gates.push(Gate::at_most(format!("{name} w={}", label(&c.w)), change, limit));
            if report.alpha > 2.0 {
                let top = *v.last().unwrap_or(&f64::NAN);
                gates.push(Gate::new(format!("membrane-positive w={}", label(&c.w)), top > 0.0, top, "> 0"));
            }
        }
    }
    gates
}

fn rate_samples_csv(report: &RateReport) -> Vec<u8> {
    let mut csv = Csv::new("rates", &["n", "w_coords", "lambda", "scaled"]);
    for s in &report.samples {
        csv.row(&[s.n.to_string(), coords(&s.w), num(s.lambda), num(s.scaled)]);
    }
    csv.into_bytes()
}

fn eigen_asymptotics(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let ladder = cfg.n_ladder.clone().unwrap_or_else(|| RunConfig::default_ladder(cfg.dim));
    let report = verify_rate_lemmas(cfg.dim, &ladder, cfg.alpha, cfg.w_radius)?;
    let mut gates = rate_gates(&report);
    let mut constants = Vec::new();
    if cfg.alpha < 2.0 {
        let quad = limit_constant(cfg.dim, cfg.alpha, LimitMethod::Quadrature)?;
        let extra = limit_constant(cfg.dim, cfg.alpha, LimitMethod::Extrapolation)?;
        let gap = (quad.c_tilde - extra.c_tilde).abs() / quad.c_tilde;
        let allowed = ((quad.error_estimate + extra.error_estimate) / quad.c_tilde).max(1e-6);
        gates.push(Gate::at_most("c-tilde-routes", gap, allowed));
        constants.push(quad);
        constants.push(extra);
    }
    let data = match cfg.format {
        Format::Json => json_bytes(&json!({
            "schema": "fracpile.eigen-asymptotics.v1",
            "constants": constants,
            "report": report,
        })),
        Format::Csv => {
            let mut csv = Csv::new(
                "eigen-asymptotics",
                &["check", "w_coords", "fitted_exponent", "expected_exponent", "band_lo", "band_hi", "values"],
            );
            for c in &constants {
                csv.row(&[
                    format!("c-tilde-{:?}", c.method).to_lowercase(),
                    String::new(),
                    String::new(),
                    String::new(),
                    num(c.c_tilde - c.error_estimate),
                    num(c.c_tilde + c.error_estimate),
                    num(c.c_tilde),
                ]);
            }
            for c in &report.checks {
                csv.row(&[
                    c.lemma.clone(),
                    coords(c.w.as_deref().unwrap_or(&[])),
                    num(c.fitted_exponent.unwrap_or(f64::NAN)),
                    num(c.expected_exponent.unwrap_or(f64::NAN)),
                    num(c.band.map_or(f64::NAN, |b| b[0])),
                    num(c.band.map_or(f64::NAN, |b| b[1])),
                    c.values.iter().map(|v| num(*v)).collect::<Vec<_>>().join(";"),
                ]);
            }
            csv.into_bytes()
        }
    };
    Ok(Outcome { data, summary: json!({ "ladder": ladder, "c_tilde": report.c_tilde }), gates, ..Outcome::default() })
}

fn field_rows(csv: &mut Csv, spec: LatticeSpec, s: &[f64], columns: &[&[f64]]) {
    let mut c = vec![0i64; spec.dim()];
    for (i, &si) in s.iter().enumerate().take(spec.site_count()) {
        spec.coords_into(i, &mut c);
        let mut row = vec![i.to_string(), coords(&c), num(si)];
        row.extend(columns.iter().map(|col| col.get(i).map_or(String::new(), |v| num(*v))));
        csv.row(&row);
    }
}

fn stabilize(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let spec = single_spec(cfg)?;
    let kernel = load_kernel(spec, cfg.alpha, cfg.rel_tol)?;
    let generator = Generator::new(&kernel);
    let initial = init_random(spec, cfg.weights.into(), cfg.seed);
    let s0 = initial.masses().to_vec();
    let opts = StabilizeOptions { eps: cfg.eps, max_steps: cfg.max_steps, ..StabilizeOptions::default() };
    let result = stabilize_with(initial, &generator, &opts)?;
    let u = result.state.odometer_min_normalized();
    let data = match cfg.format {
        Format::Csv => {
            let mut csv = Csv::new("stabilize", &["index", "coords", "s_initial", "s_final", "u"]);
            field_rows(&mut csv, spec, &s0, &[result.state.masses(), &u]);
            csv.into_bytes()
        }
        Format::Json => json_bytes(&json!({
            "schema": "fracpile.stabilize.v1",
            "d": cfg.dim,
            "n": cfg.n,
            "alpha": cfg.alpha,
            "s_initial": s0,
            "s_final": result.state.masses(),
            "u": u,
            "iterations": result.iterations,
            "sup_deviation": result.sup_deviation,
            "converged": result.converged,
        })),
    };
    Ok(Outcome {
        data,
        summary: json!({
            "iterations": result.iterations,
            "sup_deviation": result.sup_deviation,
            "max_residual_excess": result.max_residual_excess,
            "converged": result.converged,
            "decay_ratio": result.decay_ratio,
        }),
        gates: vec![
            Gate::new("converged", result.converged, result.iterations as f64, "iterations <= max_steps"),
            Gate::at_most("flatness", result.sup_deviation, 1e-9),
        ],
        seeds: vec![cfg.seed],
        ..Outcome::default()
    })
}

fn odometer(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let spec = single_spec(cfg)?;
    let kernel = load_kernel(spec, cfg.alpha, cfg.rel_tol)?;
    let generator = Generator::new(&kernel);
    let initial = init_random(spec, cfg.weights.into(), cfg.seed);
    let s0 = initial.masses().to_vec();
    let mut gates = Vec::new();
    let mut summary = serde_json::Map::new();
    let spectral = if cfg.method != Method::Topple {
        let solver = SpectralSolver::new(&Spectrum::from_generator(&generator, cfg.alpha));
        let od = solver.odometer(&s0)?;
        gates.push(Gate::at_most("spectral-residual", od.residual, 1e-9));
        summary.insert("spectral_residual".into(), json!(od.residual));
        Some(od.u)
    } else {
        None
    };
    let toppled = if cfg.method != Method::Spectral {
        let opts = StabilizeOptions { eps: cfg.eps, max_steps: cfg.max_steps, ..StabilizeOptions::default() };
        let result = stabilize_with(initial, &generator, &opts)?;
        gates.push(Gate::new("converged", result.converged, result.iterations as f64, "iterations <= max_steps"));
        gates.push(Gate::at_most("flatness", result.sup_deviation, 1e-9));
        summary.insert("iterations".into(), json!(result.iterations));
        summary.insert("sup_deviation".into(), json!(result.sup_deviation));
        Some(result.state.odometer_min_normalized())
    } else {
        None
    };
    if let (Some(a), Some(b)) = (&spectral, &toppled) {
        let gap = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        log::info!("sup-norm discrepancy between routes: {gap:e}");
        eprintln!("odometer discrepancy (sup norm): {gap:e}");
        gates.push(Gate::at_most("route-discrepancy", gap, 1e-6));
        summary.insert("discrepancy".into(), json!(gap));
    }
    let empty = Vec::new();
    let us = spectral.as_ref().unwrap_or(&empty);
    let ut = toppled.as_ref().unwrap_or(&empty);
    let data = match cfg.format {
        Format::Csv => {
            let mut csv = Csv::new("odometer", &["index", "coords", "s", "u_spectral", "u_topple"]);
            field_rows(&mut csv, spec, &s0, &[us, ut]);
            csv.into_bytes()
        }
        Format::Json => json_bytes(&json!({
            "schema": "fracpile.odometer.v1",
            "d": cfg.dim,
            "n": cfg.n,
            "alpha": cfg.alpha,
            "s": s0,
            "u_spectral": spectral,
            "u_topple": toppled,
            "discrepancy": summary.get("discrepancy"),
        })),
    };
    Ok(Outcome {
        data,
        summary: serde_json::Value::Object(summary),
        gates,
        seeds: vec![cfg.seed],
        ..Outcome::default()
    })
}

fn plan(cfg: &RunConfig, kind: ExperimentKind) -> ExperimentPlan {
    ExperimentPlan {
        weights: cfg.weights.into(),
        eps: cfg.eps,
        max_steps: cfg.max_steps,
        audit_every: cfg.audit_every,
        audit_max_sites: cfg.audit_max_sites,
        ..ExperimentPlan::new(kind, cfg.dim, cfg.alpha, cfg.sizes(), cfg.replicates, cfg.seed)
    }
}

#[derive(Serialize)]
struct GrowthSummary {
    schema: &'static str,
    d: usize,
    alpha: f64,
    gamma: f64,
    regime: &'static str,
    fits: Vec<serde_json::Value>,
    reference_ratio: Vec<(usize, f64)>,
}

fn odometer_stats(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let plan = plan(cfg, ExperimentKind::OdometerMean);
    let rows = run_odometer_mean(&plan)?;
    let d = cfg.dim as f64;
    let gamma = cfg.alpha.min(2.0);
    let points: Vec<ScalingPoint> = rows.iter().map(ScalingPoint::from).collect();
    let fits: Vec<serde_json::Value> = [ScalingModel::PowerInN, ScalingModel::LinearInLogN, ScalingModel::SqrtLogN]
        .into_iter()
        .map(|m| match fit_scaling(&points, m) {
            Ok(f) => serde_json::to_value(f).expect("serializable fit"),
            Err(e) => json!({ "model": m, "error": e.to_string() }),
        })
        .collect();
    let regime = if (gamma - d / 2.0).abs() < 1e-12 {
        "critical"
    } else if gamma > d / 2.0 {
        "power"
    } else {
        "descriptive"
    };
    let mut gates = Vec::new();
    match regime {
        "critical" => {
            let fit = fit_scaling(&points, ScalingModel::LinearInLogN)?;
            gates.push(Gate::new("log-fit-r2", fit.r_squared >= 0.95, fit.r_squared, ">= 0.95"));
        }
        "power" => {
            let fit = fit_scaling(&points, ScalingModel::PowerInN)?;
            let want = gamma - d / 2.0;
            gates.push(Gate::within("power-slope", fit.slope, want - 0.15, want + 0.15));
        }
        _ => log::info!("gamma < d/2: growth is reported without a gate"),
    }
    let audits: usize = rows.iter().map(|r| r.audits).sum();
    if audits > 0 {
        let gap = rows.iter().map(|r| r.max_audit_gap).fold(0.0, f64::max);
        gates.push(Gate::at_most("audit-discrepancy", gap, plan.audit_tol));
    }
    let residual = rows.iter().map(|r| r.max_residual).fold(0.0, f64::max);
    gates.push(Gate::at_most("spectral-residual", residual, 1e-9));
    let reference_ratio = rows
        .iter()
        .map(|r| Ok((r.n, r.mean / phi_reference(cfg.dim, gamma, r.n)?)))
        .collect::<fracpile::Result<Vec<_>>>()?;
    let summary = GrowthSummary {
        schema: "fracpile.odometer-stats-fits.v1",
        d: cfg.dim,
        alpha: cfg.alpha,
        gamma,
        regime,
        fits,
        reference_ratio,
    };
    let data = match cfg.format {
        Format::Csv => {
            let mut csv = Csv::new(
                "odometer-stats",
                &["n", "replicates", "mean", "stderr", "level_seed", "audits", "max_audit_gap", "max_residual"],
            );
            for r in &rows {
                csv.row(&[
                    r.n.to_string(),
                    r.replicates.to_string(),
                    num(r.mean),
                    num(r.stderr),
                    r.level_seed.to_string(),
                    r.audits.to_string(),
                    num(r.max_audit_gap),
                    num(r.max_residual),
                ]);
            }
            csv.into_bytes()
        }
        Format::Json => json_bytes(&json!({ "schema": "fracpile.odometer-stats.v1", "rows": rows, "fits": summary })),
    };
    let mut seeds = vec![cfg.seed];
    seeds.extend(rows.iter().map(|r| r.level_seed));
    Ok(Outcome {
        data,
        sidecars: vec![(".fits.json".into(), json_bytes(&summary))],
        summary: serde_json::to_value(&summary)?,
        gates,
        seeds,
    })
}

fn field_cov(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let plan = plan(cfg, ExperimentKind::FieldCov);
    let fs = FieldSpec::new(cfg.dim, cfg.alpha)?;
    let rows = run_field_cov(&plan, &cfg.modes, &fs)?;
    let top = *plan.n_ladder.last().expect("validated ladder");
    let ratios: Vec<f64> = rows.iter().filter(|r| r.n == top).map(|r| r.ratio).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let mut gates = vec![Gate::at_most("shape-spread", (hi - lo) / mean, 0.10)];
    for r in rows.iter().filter(|r| r.n == top) {
        gates.push(Gate::within(format!("variance-ratio nu={}", coords(&r.nu)), r.ratio, 0.5, 2.0));
    }
    let data = match cfg.format {
        Format::Csv => {
            let mut csv =
                Csv::new("field-cov", &["nu_coords", "n", "replicates", "empirical_var", "limit_var", "ratio"]);
            for r in &rows {
                csv.row(&[
                    coords(&r.nu),
                    r.n.to_string(),
                    r.replicates.to_string(),
                    num(r.empirical_var),
                    num(r.limit_var),
                    num(r.ratio),
                ]);
            }
            csv.into_bytes()
        }
        Format::Json => json_bytes(&json!({ "schema": "fracpile.field-cov.v1", "field": fs, "rows": rows })),
    };
    let mut seeds = vec![cfg.seed];
    seeds.extend(plan.n_ladder.iter().map(|&n| level_seed(cfg.seed, n)));
    Ok(Outcome {
        data,
        summary: json!({
            "gamma": fs.gamma,
            "c_tilde": fs.c_tilde,
            "c_tilde_error": fs.c_tilde_error,
            "stderr": rows.iter().map(|r| r.stderr).collect::<Vec<_>>(),
            "min_shift_gap": rows.iter().map(|r| r.min_shift_gap).fold(0.0, f64::max),
        }),
        gates,
        seeds,
        ..Outcome::default()
    })
}
