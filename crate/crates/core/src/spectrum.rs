//! Eigenvalues of the generator, the limiting constant `c̃`, and empirical
//! convergence-rate checks.
//!
//! The generator `(p * ·) − id` is diagonal in the Fourier basis
//! `ψ_w(x) = e^{2πi x·w/n}` with eigenvalue
//! `λ_w = Σ_x p(x) cos(2π x·w/n) − 1 = −2 Σ_x p(x) sin²(π x·w/n)`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{
    build_kernel, epstein_zeta, for_each_in_box, lattice_constant, tail_bound, Generator, LongRangeKernel,
    DEFAULT_REL_TOL,
};
use crate::numerics::{fit_line, gamma, integrate, sphere_area, KahanSum};
use crate::torus::{format_coords, norm, LatticeSpec, TorusPoint};

#[derive(Debug, Clone)]
pub struct Spectrum {
    spec: LatticeSpec,
    alpha: f64,
    lambda: Vec<f64>,
    max_imag: f64,
}

/// All eigenvalues via the DFT of the weight field.
pub fn eigenvalues(kernel: &LongRangeKernel) -> Spectrum {
    let generator = Generator::new(kernel);
    Spectrum::from_generator(&generator, kernel.alpha())
}

impl Spectrum {
    pub fn from_generator(generator: &Generator, alpha: f64) -> Self {
        let mut lambda = generator.symbol().to_vec();
        let spec = generator.spec();
        lambda[spec.index_of(&vec![0; spec.dim()])] = 0.0;
        Self { spec, alpha, lambda, max_imag: generator.max_imag() }
    }

    pub fn spec(&self) -> LatticeSpec {
        self.spec
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Eigenvalues in flat frequency order; the zero mode is exactly 0.
    pub fn values(&self) -> &[f64] {
        &self.lambda
    }

    pub fn lambda(&self, w: &TorusPoint) -> Result<f64> {
        Ok(self.lambda[self.spec.flat_index(w)?])
    }

    /// Largest imaginary part of the kernel transform (zero up to rounding).
    pub fn max_imag(&self) -> f64 {
        self.max_imag
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "#schema=fracpile.spectrum.v1")?;
        writeln!(out, "w_coords,lambda")?;
        let mut c = vec![0i64; self.spec.dim()];
        for (i, l) in self.lambda.iter().enumerate() {
            self.spec.coords_into(i, &mut c);
            writeln!(out, "{},{l:e}", format_coords(&c))?;
        }
        out.flush()
    }
}

/// `λ_w` as the compensated sum `−2 Σ_x p(x) sin²(π x·w/n)`, with the phase
/// reduced exactly modulo `n`. More accurate than the DFT for small `|λ_w|`.
pub fn eigenvalue_from_weights(kernel: &LongRangeKernel, w: &[i64]) -> Result<f64> {
    let spec = kernel.spec();
    if w.len() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: w.len() });
    }
    let n = spec.side() as i64;
    let mut c = vec![0i64; spec.dim()];
    let mut acc = KahanSum::new();
    for (i, p) in kernel.weights().iter().enumerate() {
        spec.coords_into(i, &mut c);
        let dot: i64 = c.iter().zip(w).map(|(a, b)| a * b).sum::<i64>().rem_euclid(n);
        let s = (PI * dot as f64 / n as f64).sin();
        acc.add(p * s * s);
    }
    Ok(-2.0 * acc.value())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirectEigenvalue {
    pub value: f64,
    /// Certified bound on `|value − λ_w|` for the untruncated lattice sum.
    pub certificate: f64,
}

/// `λ_w` from the unfolded lattice sum `−2c Σ_{x ≠ 0} sin²(π x·w/n)/‖x‖^{d+α}`
/// truncated at `‖x‖_∞ ≤ R`.
///
/// The dropped terms are split as `½ ‖x‖^{−s} − ½ ‖x‖^{−s} cos(2π x·w/n)`. The
/// first part is exact through `1/c`; the oscillating part is bounded by Abel
/// summation along the axis where `w` oscillates fastest.
pub fn eigenvalue_direct(spec: LatticeSpec, alpha: f64, w: &TorusPoint, radius: usize) -> Result<DirectEigenvalue> {
    let d = spec.dim();
    if w.coords.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: w.coords.len() });
    }
    let w = spec.canonical(&w.coords)?;
    if w.is_origin() {
        return Err(Error::InvalidParameter("eigenvalue_direct needs w != 0; λ_0 = 0".into()));
    }
    if radius < 2 {
        return Err(Error::InvalidParameter("radius must be at least 2".into()));
    }
    let lc = lattice_constant(d, alpha, 1e-14)?;
    let c = lc.c_alpha;
    let n = spec.side() as i64;
    let s = d as f64 + alpha;
    let r = radius as i64;
    let f = |r2: f64| r2.powf(-s / 2.0);

    // Σ_{0<‖x‖_∞≤R} f·sin² and Σ f, parallel over the first coordinate.
    let rows: Vec<(f64, f64)> = (-r..=r)
        .into_par_iter()
        .map(|x0| {
            let mut osc = KahanSum::new();
            let mut plain = KahanSum::new();
            let mut ranges = vec![(-r, r, 1); d];
            ranges[0] = (x0, x0, 1);
            for_each_in_box(&ranges, |x| {
                let r2: f64 = x.iter().map(|&v| (v * v) as f64).sum();
                if r2 == 0.0 {
                    return;
                }
                let dot = x.iter().zip(&w.coords).map(|(a, b)| a * b).sum::<i64>().rem_euclid(n);
                let sn = (PI * dot as f64 / n as f64).sin();
                let fx = f(r2);
                osc.add(fx * sn * sn);
                plain.add(fx);
            });
            (osc.value(), plain.value())
        })
        .collect();
    let osc_sum = rows.iter().map(|r| r.0).collect::<KahanSum>().value();
    let plain_sum = rows.iter().map(|r| r.1).collect::<KahanSum>().value();
    let value = -2.0 * c * osc_sum - (1.0 - c * plain_sum);

    // Abel summation along axis j: |Σ_{k≥k0} f_k cos(kθ + φ)| ≤ f_{k0}/|sin(θ/2)|.
    let sin_j = w.coords.iter().map(|&wj| (PI * wj as f64 / n as f64).sin().abs()).fold(0.0, f64::max);
    let edge = (r + 1) as f64;
    let half_lines = if d == 1 {
        2.0 * f(edge * edge)
    } else {
        let mut acc = KahanSum::new();
        for_each_in_box(&vec![(-r, r, 1); d - 1], |xp| {
            let r2: f64 = xp.iter().map(|&v| (v * v) as f64).sum::<f64>() + edge * edge;
            acc.add(2.0 * f(r2));
        });
        acc.value()
    };
    let full_lines = if d == 1 { 0.0 } else { 2.0 * tail_bound(radius, d - 1, alpha + 1.0) };
    let oscillation = c * (half_lines + full_lines) / sin_j;
    let constant = c * lc.tail_certificate * (2.0 * osc_sum + plain_sum);
    let rounding = 1e-15 * (1.0 + (2.0 * r as f64 + 1.0).powi(d as i32).sqrt());
    Ok(DirectEigenvalue { value, certificate: oscillation + constant + rounding })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LimitMethod {
    Extrapolation,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitConstant {
    pub d: usize,
    pub alpha: f64,
    pub c_tilde: f64,
    pub method: LimitMethod,
    pub error_estimate: f64,
}

pub fn default_extrapolation_ladder(d: usize) -> Vec<usize> {
    match d {
        1 => vec![32, 64, 128, 256, 512, 1024],
        2 => vec![16, 32, 64, 128, 256],
        _ => vec![8, 16, 32, 64],
    }
}

/// `c̃` with `n^α(−λ_w) → c̃ ‖w‖^α`, for `α ∈ (0, 2)`.
pub fn limit_constant(d: usize, alpha: f64, method: LimitMethod) -> Result<LimitConstant> {
    match method {
        LimitMethod::Extrapolation => limit_constant_extrapolated(d, alpha, &default_extrapolation_ladder(d)),
        LimitMethod::Quadrature => limit_constant_quadrature(d, alpha),
    }
}

fn check_stable_range(d: usize, alpha: f64) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::InvalidParameter(format!("the limit constant is defined for alpha in (0, 2), got {alpha}")));
    }
    Ok(())
}

/// Extrapolates `c + Σ_j a_j n^{−(2j−α)}` through the given points. Returns
/// `c` and the weights `a_i` with `c = Σ_i a_i v_i`.
fn richardson(ns: &[f64], values: &[f64], alpha: f64) -> Option<(f64, Vec<f64>)> {
    let k = ns.len();
    let n0 = ns[0];
    let m = DMatrix::from_fn(k, k, |i, j| if j == 0 { 1.0 } else { (ns[i] / n0).powf(-(2.0 * j as f64 - alpha)) });
    let mut e0 = DVector::zeros(k);
    e0[0] = 1.0;
    let weights = m.transpose().lu().solve(&e0)?;
    let value = weights.iter().zip(values).map(|(a, v)| a * v).collect::<KahanSum>().value();
    Some((value, weights.iter().copied().collect()))
}

/// `n^α(−λ_{e_1})` on a ladder, extrapolated to `n → ∞`.
///
/// The error estimate adds the change from dropping the smallest `n` to the
/// propagated uncertainty of the individual eigenvalues.
pub fn limit_constant_extrapolated(d: usize, alpha: f64, ladder: &[usize]) -> Result<LimitConstant> {
    check_stable_range(d, alpha)?;
    check_ladder(ladder, 3)?;
    let measured = ladder
        .iter()
        .map(|&n| {
            let spec = LatticeSpec::new(d, n)?;
            let kernel = build_kernel(spec, alpha, DEFAULT_REL_TOL)?;
            let mut e1 = vec![0i64; d];
            e1[0] = 1;
            let scale = (n as f64).powf(alpha);
            let value = scale * -eigenvalue_from_weights(&kernel, &e1)?;
            let noise = scale * (2.0 * kernel.tail_bound() + 4e-16 * (spec.site_count() as f64).sqrt()) + 4e-16 * value;
            Ok((value, noise))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let values: Vec<f64> = measured.iter().map(|m| m.0).collect();
    let ns: Vec<f64> = ladder.iter().map(|&n| n as f64).collect();
    let singular = || Error::SingularDesign("extrapolation system".into());
    let (full, weights) = richardson(&ns, &values, alpha).ok_or_else(singular)?;
    let (reduced, _) = richardson(&ns[1..], &values[1..], alpha).ok_or_else(singular)?;
    let propagated: f64 = weights.iter().zip(&measured).map(|(a, m)| a.abs() * m.1).sum();
    Ok(LimitConstant {
        d,
        alpha,
        c_tilde: full,
        method: LimitMethod::Extrapolation,
        error_estimate: (full - reduced).abs() + propagated,
    })
}

/// `c̃ = 2c ∫_{R^d} sin²(π z_1)/‖z‖^{d+α} dz`, factored in polar coordinates
/// as `2c · ∫_{S^{d−1}} |θ_1|^α dθ · ∫_0^∞ sin²(πr) r^{−1−α} dr`.
pub fn limit_constant_quadrature(d: usize, alpha: f64) -> Result<LimitConstant> {
    check_stable_range(d, alpha)?;
    let lc = lattice_constant(d, alpha, if d <= 2 { 1e-13 } else { 1e-10 })?;

    // angular factor
    let (angular, angular_err) = if d == 1 {
        (2.0, 0.0)
    } else {
        let q = integrate(|phi: f64| phi.cos().powf(alpha) * phi.sin().powi(d as i32 - 2), 0.0, PI / 2.0, 1e-15, 1e-14);
        let area = sphere_area(d - 2);
        (2.0 * area * q.value, 2.0 * area * q.error)
    };

    // radial factor: [0,1] with r = t^{1/(2−α)} removing the r^{1−α} singularity
    let g = |r: f64| {
        if r == 0.0 {
            PI * PI
        } else {
            let s = (PI * r).sin() / r;
            s * s
        }
    };
    let p = 1.0 / (2.0 - alpha);
    let inner = integrate(|t: f64| g(t.powf(p)), 0.0, 1.0, 1e-15, 1e-14);
    let mut radial = KahanSum::new();
    radial.add(p * inner.value);
    let mut err = p * inner.error;
    const CUTOFF: usize = 20_000;
    let pieces: Vec<(f64, f64)> = (1..CUTOFF)
        .into_par_iter()
        .map(|k| {
            let q = integrate(
                |r: f64| {
                    let s = (PI * r).sin();
                    s * s * r.powf(-1.0 - alpha)
                },
                k as f64,
                k as f64 + 1.0,
                1e-18,
                1e-14,
            );
            (q.value, q.error)
        })
        .collect();
    for (v, e) in pieces {
        radial.add(v);
        err += e;
    }
    let k = CUTOFF as f64;
    radial.add(0.5 * k.powf(-alpha) / alpha);
    err += (1.0 + alpha) * k.powf(-2.0 - alpha) / (4.0 * PI * PI);
    let radial = radial.value();

    let c = lc.c_alpha;
    let c_tilde = 2.0 * c * angular * radial;
    let rel = lc.tail_certificate + angular_err / angular + err / radial;
    Ok(LimitConstant {
        d,
        alpha,
        c_tilde,
        method: LimitMethod::Quadrature,
        error_estimate: c_tilde * rel + 1e-13 * c_tilde,
    })
}

/// Constant `c̃` in the leading behaviour for `α ≥ 2`:
/// `n²(−λ_w) ≈ c̃ ‖w‖² log(n/‖w‖)` at `α = 2` and `n²(−λ_w) → c̃ ‖w‖²` for `α > 2`.
pub fn membrane_constant(d: usize, alpha: f64) -> Result<f64> {
    if d == 0 || !(alpha >= 2.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("membrane constant needs alpha >= 2, got {alpha}")));
    }
    let s = d as f64 + alpha;
    let c = 1.0 / epstein_zeta(d, s);
    let df = d as f64;
    if alpha == 2.0 {
        Ok(2.0 * PI * PI * c * sphere_area(d - 1) / df)
    } else {
        Ok(2.0 * PI * PI * c * epstein_zeta(d, s - 2.0) / df)
    }
}

/// Closed form of `∫_{R^d} sin²(π z_1)/‖z‖^{d+α} dz` for `α ∈ (0, 2)`.
pub fn sine_integral_closed_form(d: usize, alpha: f64) -> f64 {
    PI.powf(alpha + d as f64 / 2.0) * gamma(-alpha / 2.0).abs() / (2.0 * gamma((d as f64 + alpha) / 2.0))
}

fn check_ladder(ladder: &[usize], min_len: usize) -> Result<()> {
    if ladder.len() < min_len {
        return Err(Error::InsufficientData(format!("ladder has {} points, need at least {min_len}", ladder.len())));
    }
    if ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("ladder must be strictly increasing".into()));
    }
    if ladder[0] < 2 {
        return Err(Error::InvalidParameter("ladder entries must be at least 2".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSample {
    pub n: usize,
    pub w: Vec<i64>,
    pub lambda: f64,
    /// `n^γ(−λ_w)` normalized by `‖w‖^γ` (and by `log(n/‖w‖)` at `α = 2`).
    pub scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaCheck {
    pub lemma: String,
    pub w: Option<Vec<i64>>,
    pub fitted_exponent: Option<f64>,
    pub stderr: Option<f64>,
    pub expected_exponent: Option<f64>,
    pub band: Option<[f64; 2]>,
    /// Per-ladder values of the checked quantity.
    pub values: Vec<f64>,
    pub note: String,
}

impl LemmaCheck {
    fn new(lemma: &str) -> Self {
        Self {
            lemma: lemma.into(),
            w: None,
            fitted_exponent: None,
            stderr: None,
            expected_exponent: None,
            band: None,
            values: Vec::new(),
            note: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub d: usize,
    pub alpha: f64,
    pub ladder: Vec<usize>,
    pub c_tilde: f64,
    pub c_tilde_error: f64,
    pub c_tilde_method: String,
    pub checks: Vec<LemmaCheck>,
    pub samples: Vec<RateSample>,
}

impl RateReport {
    pub fn checks_named<'a>(&'a self, lemma: &'a str) -> impl Iterator<Item = &'a LemmaCheck> + 'a {
        self.checks.iter().filter(move |c| c.lemma == lemma)
    }
}

/// Nonzero frequencies with `‖w‖ ≤ radius` that fit in the window of every ladder size.
fn small_frequencies(d: usize, radius: f64, n_min: usize) -> Vec<Vec<i64>> {
    let spec = LatticeSpec::new(d, n_min).expect("valid ladder");
    let r = radius.floor() as i64;
    let mut out = Vec::new();
    for_each_in_box(&vec![(-r, r, 1); d], |w| {
        let nrm = norm(w);
        if nrm > 0.0 && nrm <= radius + 1e-12 && w.iter().all(|&c| c >= spec.low() && c <= spec.high()) {
            out.push(w.to_vec());
        }
    });
    out
}

/// Measures the eigenvalue asymptotics over an `n`-ladder for fixed `α`.
///
/// For `α < 2`: the band of `n^α(−λ_w)/‖w‖^α` over all `(n, w ≠ 0)`, the ratio
/// to `c̃‖w‖^α` at the top of the ladder, the decay exponent of
/// `|n^α(−λ_w) − c̃‖w‖^α|`, and the band of `‖w‖^{2α}/(n^α λ_w)²`.
/// For `α = 2`: the stabilization of `n²(−λ_w)/(‖w‖² log(n/‖w‖))`.
/// For `α > 2`: convergence of `n²(−λ_w)` and the decay exponent of its correction.
/// Frequencies with `‖w‖ ≤ w_radius` are tracked individually.
pub fn verify_rate_lemmas(d: usize, ladder: &[usize], alpha: f64, w_radius: f64) -> Result<RateReport> {
    check_ladder(ladder, 4)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let freqs = small_frequencies(d, w_radius, ladder[0]);
    if freqs.is_empty() {
        return Err(Error::InvalidParameter("no frequencies within w_radius".into()));
    }
    let stable = alpha < 2.0;
    let (c_tilde, c_err, method) = if stable {
        let lc = limit_constant_quadrature(d, alpha)?;
        (lc.c_tilde, lc.error_estimate, "quadrature".to_string())
    } else {
        (membrane_constant(d, alpha)?, 0.0, "closed-form".to_string())
    };
    let gamma = alpha.min(2.0);

    struct Level {
        n: usize,
        tracked: Vec<f64>,
        band: [f64; 2],
        inverse_square_max: f64,
        max_imag: f64,
    }
    let levels = ladder
        .iter()
        .map(|&n| {
            let spec = LatticeSpec::new(d, n)?;
            let kernel = build_kernel(spec, alpha, DEFAULT_REL_TOL)?;
            let spectrum = eigenvalues(&kernel);
            let nf = n as f64;
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            let mut inv = 0.0f64;
            let mut c = vec![0i64; d];
            for (i, &l) in spectrum.values().iter().enumerate() {
                spec.coords_into(i, &mut c);
                let nw = norm(&c);
                if nw == 0.0 {
                    continue;
                }
                let ratio = nf.powf(gamma) * -l / nw.powf(gamma);
                lo = lo.min(ratio);
                hi = hi.max(ratio);
                inv = inv.max(1.0 / (ratio * ratio));
            }
            let tracked = freqs.iter().map(|w| eigenvalue_from_weights(&kernel, w)).collect::<Result<Vec<f64>>>()?;
            Ok(Level { n, tracked, band: [lo, hi], inverse_square_max: inv, max_imag: spectrum.max_imag() })
        })
        .collect::<Result<Vec<Level>>>()?;

    let mut samples = Vec::new();
    for level in &levels {
        let nf = level.n as f64;
        for (w, &l) in freqs.iter().zip(&level.tracked) {
            let nw = norm(w);
            let scaled = if alpha == 2.0 {
                nf * nf * -l / (nw * nw * (nf / nw).ln())
            } else {
                nf.powf(gamma) * -l / nw.powf(gamma)
            };
            samples.push(RateSample { n: level.n, w: w.clone(), lambda: l, scaled });
        }
    }
    let per_w = |k: usize| -> Vec<f64> { samples.iter().skip(k).step_by(freqs.len()).map(|s| s.scaled).collect() };
    let log_n: Vec<f64> = ladder.iter().map(|&n| (n as f64).ln()).collect();

    let mut checks = Vec::new();
    let mut band = LemmaCheck::new("ratio-band");
    let lo = levels.iter().map(|l| l.band[0]).fold(f64::INFINITY, f64::min);
    let hi = levels.iter().map(|l| l.band[1]).fold(0.0, f64::max);
    band.band = Some([lo, hi]);
    band.values = levels.iter().map(|l| l.band[1] / l.band[0]).collect();
    band.note = format!(
        "n^γ(−λ_w)/‖w‖^γ over all (n, w≠0); values are max/min per n; max imaginary residue {:e}",
        levels.iter().map(|l| l.max_imag).fold(0.0, f64::max)
    );
    checks.push(band);

    if stable {
        let mut inv = LemmaCheck::new("inverse-square");
        inv.values = levels.iter().map(|l| l.inverse_square_max).collect();
        inv.band = Some([0.0, inv.values.iter().copied().fold(0.0, f64::max)]);
        inv.note = "max over w≠0 of ‖w‖^{2α}/(n^α λ_w)² per n".into();
        checks.push(inv);
    }

    for (k, w) in freqs.iter().enumerate() {
        let vals = per_w(k);
        let nw = norm(w);
        if stable {
            let mut lim = LemmaCheck::new("limit-ratio");
            lim.w = Some(w.clone());
            lim.values = vals.iter().map(|v| v / c_tilde).collect();
            let top = *lim.values.last().expect("ladder non-empty");
            lim.band = Some([top, top]);
            lim.note = "n^α(−λ_w)/(c̃‖w‖^α) per n".into();
            checks.push(lim);

            let residuals: Vec<f64> = vals.iter().map(|v| ((v - c_tilde) * nw.powf(alpha)).abs()).collect();
            let mut rate = LemmaCheck::new("riemann-rate");
            rate.w = Some(w.clone());
            rate.expected_exponent = Some(-(2.0 - alpha));
            rate.values = residuals.clone();
            if residuals.iter().all(|r| *r > 0.0) {
                let y: Vec<f64> = residuals.iter().map(|r| r.ln()).collect();
                if let Some(fit) = fit_line(&log_n, &y, None) {
                    rate.fitted_exponent = Some(fit.slope);
                    rate.stderr = Some(fit.slope_stderr);
                }
            }
            rate.note = "|n^α(−λ_w) − c̃‖w‖^α| against n".into();
            checks.push(rate);
        } else if alpha == 2.0 {
            let mut logc = LemmaCheck::new("log-correction");
            logc.w = Some(w.clone());
            logc.values = vals.clone();
            let changes: Vec<f64> = vals.windows(2).map(|p| (p[1] - p[0]).abs() / p[0]).collect();
            logc.band = Some([
                changes.iter().copied().fold(f64::INFINITY, f64::min),
                changes.iter().copied().fold(0.0, f64::max),
            ]);
            logc.note = format!(
                "n²(−λ_w)/(‖w‖² log(n/‖w‖)) per n; band holds relative successive changes; leading constant {c_tilde}"
            );
            checks.push(logc);
        } else {
            let mut lead = LemmaCheck::new("membrane-limit");
            lead.w = Some(w.clone());
            lead.values = vals.clone();
            let changes: Vec<f64> = vals.windows(2).map(|p| (p[1] - p[0]).abs() / p[0]).collect();
            lead.band = Some([
                changes.iter().copied().fold(f64::INFINITY, f64::min),
                changes.iter().copied().fold(0.0, f64::max),
            ]);
            let y: Vec<f64> =
                levels.iter().zip(&vals).map(|(l, v)| (v * nw * nw / (l.n as f64).powi(2)).ln()).collect();
            if let Some(fit) = fit_line(&log_n, &y, None) {
                lead.fitted_exponent = Some(fit.slope);
                lead.stderr = Some(fit.slope_stderr);
            }
            lead.expected_exponent = Some(-2.0);
            lead.note = format!("n²(−λ_w)/‖w‖² per n (limit {c_tilde}); exponent is the slope of log(−λ_w)");
            checks.push(lead);

            let residuals: Vec<f64> = vals.iter().map(|v| (v - c_tilde).abs()).collect();
            let mut corr = LemmaCheck::new("membrane-correction");
            corr.w = Some(w.clone());
            corr.values = residuals.clone();
            corr.expected_exponent = Some(-(alpha.min(3.0) - 2.0));
            if residuals.iter().all(|r| *r > 0.0) {
                let y: Vec<f64> = residuals.iter().map(|r| r.ln()).collect();
                if let Some(fit) = fit_line(&log_n, &y, None) {
                    corr.fitted_exponent = Some(fit.slope);
                    corr.stderr = Some(fit.slope_stderr);
                }
            }
            corr.note = "|n²(−λ_w)/‖w‖² − c̃| against n; the expected exponent is an upper bound on the decay".into();
            checks.push(corr);
        }
    }

    Ok(RateReport {
        d,
        alpha,
        ladder: ladder.to_vec(),
        c_tilde,
        c_tilde_error: c_err,
        c_tilde_method: method,
        checks,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_site_spectrum() {
        let spec = LatticeSpec::new(1, 2).unwrap();
        let k = build_kernel(spec, 1.0, 1e-12).unwrap();
        let sp = eigenvalues(&k);
        assert_eq!(sp.lambda(&TorusPoint { coords: vec![0] }).unwrap(), 0.0);
        let l1 = sp.lambda(&TorusPoint { coords: vec![-1] }).unwrap();
        assert!((l1 + 1.5).abs() < 1e-13);
        assert!((eigenvalue_from_weights(&k, &[1]).unwrap() + 1.5).abs() < 1e-13);
    }

    #[test]
    fn richardson_recovers_exact_model() {
        let alpha = 0.7;
        let ns = [16.0, 32.0, 64.0, 128.0];
        let vals: Vec<f64> =
            ns.iter().map(|n: &f64| 3.0 + 0.5 * n.powf(-(2.0 - alpha)) - 2.0 * n.powf(-(4.0 - alpha))).collect();
        let (c, _) = richardson(&ns, &vals, alpha).unwrap();
        assert!((c - 3.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_integral_one_dimension() {
        // ∫ sin²(πz)/z² dz = π²
        assert!((sine_integral_closed_form(1, 1.0) - PI * PI).abs() < 1e-12);
    }

    #[test]
    fn membrane_constant_one_dimension_alpha_three() {
        // c = 45/π⁴ and Σ_{k≠0} k^{-2} = π²/3 give 2π²·c·π²/3 = 30.
        let m = membrane_constant(1, 3.0).unwrap();
        assert!((m - 30.0).abs() < 1e-11, "{m}");
    }

    #[test]
    fn rejects_unstable_alpha() {
        assert!(limit_constant(1, 2.0, LimitMethod::Quadrature).is_err());
        assert!(limit_constant(1, 0.0, LimitMethod::Extrapolation).is_err());
    }
}
