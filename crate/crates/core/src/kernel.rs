//! Periodized long-range transition kernel and the generator `(p * f) − f`.
//!
//! The weight of a site `x` is proportional to the image sum
//! `Σ_{z ≡ x mod n, z ≠ 0} ‖z‖^{−(d+α)}`. Image sums are evaluated with Ewald
//! splitting: after rescaling by `n`, the sum over images equals
//! `n^{−(d+α)} E(x/n)` where `E(y) = Σ_{k ∈ Z^d} ‖y + k‖^{−(d+α)}`, and `E`
//! is split into a rapidly converging real-space part and a rapidly
//! converging reciprocal part. Both are truncated at `‖k‖_∞ ≤ R` with an
//! explicit certificate on the dropped terms.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::TorusFft;
use crate::numerics::{gamma, gauss_legendre, upper_gamma, KahanSum};
use crate::torus::{format_coords, LatticeSpec, TorusPoint};

pub const DEFAULT_REL_TOL: f64 = 1e-12;
const MAX_EWALD_RADIUS: usize = 40;
const WEIGHT_MARGIN: f64 = 1e-4;
const CACHE_MAGIC: &[u8; 8] = b"FPKERNEL";
const CACHE_VERSION: u32 = 1;

/// Number of integer points with `‖k‖_∞ = t`.
fn shell_count(t: usize, d: usize) -> f64 {
    if t == 0 {
        return 1.0;
    }
    let t = t as f64;
    (2.0 * t + 1.0).powi(d as i32) - (2.0 * t - 1.0).powi(d as i32)
}

/// `∫_{[−1,1]^{d−1}} (1 + ‖v‖²)^{−p/2} dv` by tensor Gauss–Legendre.
fn face_integral(d: usize, p: f64) -> f64 {
    let m = d - 1;
    if m == 0 {
        return 1.0;
    }
    let order = match m {
        1 | 2 => 32,
        3 => 16,
        _ => 8,
    };
    let (nodes, weights) = gauss_legendre(order);
    let mut idx = vec![0usize; m];
    let mut acc = KahanSum::new();
    loop {
        let mut r2 = 1.0;
        let mut w = 1.0;
        for &i in &idx {
            r2 += nodes[i] * nodes[i];
            w *= weights[i];
        }
        acc.add(w * r2.powf(-p / 2.0));
        let mut axis = 0;
        loop {
            if axis == m {
                return acc.value();
            }
            idx[axis] += 1;
            if idx[axis] < order {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}

/// `J_d(p)` with `∫_{‖y‖_∞ > a} ‖y‖^{−p} dy = J_d(p) a^{d−p}` for `p > d`.
pub fn cube_exterior_constant(d: usize, p: f64) -> f64 {
    debug_assert!(p > d as f64);
    if d == 1 {
        2.0 / (p - 1.0)
    } else {
        2.0 * d as f64 / (p - d as f64) * face_integral(d, p)
    }
}

/// Upper bound on `Σ_{‖z‖_∞ > R} ‖z‖^{−(d+α)}` by comparison with the integral
/// over the exterior of a cube.
pub fn tail_bound(radius: usize, d: usize, alpha: f64) -> f64 {
    assert!(radius >= 1 && d >= 1 && alpha > 0.0);
    let r = radius as f64;
    let s = d as f64 + alpha;
    if d == 1 {
        return 2.0 * r.powf(-alpha) / alpha;
    }
    let stretch = 1.0 + (d as f64).sqrt() / (2.0 * (r + 1.0));
    stretch.powf(s) * cube_exterior_constant(d, s) * (r + 0.5).powf(-alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LatticeConstant {
    pub d: usize,
    pub alpha: f64,
    pub c_alpha: f64,
    pub radius: usize,
    /// Certified relative error of `c_alpha`.
    pub tail_certificate: f64,
}

fn max_direct_radius(d: usize) -> usize {
    match d {
        1 => 1 << 22,
        2 => 8192,
        3 => 512,
        _ => 64,
    }
}

/// Certified absolute error of the corrected direct sum truncated at `R`.
fn direct_certificate(radius: usize, d: usize, alpha: f64) -> f64 {
    let s = d as f64 + alpha;
    let df = d as f64;
    let rising = s * (s + 1.0) * (s + 2.0) * (s + 3.0);
    let k_d = (df / 80.0 + df * (df - 1.0) / 144.0) / 24.0 + df * df / 576.0;
    let shrink = 1.0 - df.sqrt() / (2.0 * (radius as f64 + 1.0));
    rising * k_d * shrink.powf(-(s + 4.0)) * tail_bound(radius, d, alpha + 4.0)
}

/// Calls `f` on every integer vector of a box given per axis as `(lo, hi, step)`.
pub(crate) fn for_each_in_box<F: FnMut(&[i64])>(ranges: &[(i64, i64, i64)], mut f: F) {
    if ranges.iter().any(|r| r.0 > r.1) {
        return;
    }
    let mut k: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        f(&k);
        let mut axis = ranges.len();
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            let (lo, hi, step) = ranges[axis];
            if k[axis] + step <= hi {
                k[axis] += step;
                break;
            }
            k[axis] = lo;
        }
    }
}

/// Sum of `f(‖k‖²)` over the integer shell `‖k‖_∞ = t`, `t ≥ 1`.
///
/// Visits one representative `0 ≤ k_1 ≤ … ≤ k_{d−1} ≤ k_d = t` per orbit of
/// coordinate permutations and sign flips, weighted by the orbit size.
pub(crate) fn shell_sum<F: Fn(f64) -> f64>(t: usize, d: usize, f: F) -> f64 {
    let t = t as i64;
    let mut factorial = vec![1.0f64; d + 1];
    for i in 1..=d {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let mut acc = KahanSum::new();
    let mut k = vec![0i64; d];
    k[d - 1] = t;
    loop {
        // orbit size: d!/Π(run lengths)! · 2^{#nonzero}
        let mut orbit = factorial[d];
        let mut run = 1;
        for i in 1..=d {
            if i < d && k[i] == k[i - 1] {
                run += 1;
            } else {
                orbit /= factorial[run];
                run = 1;
            }
        }
        let nonzero = k.iter().filter(|&&c| c != 0).count();
        orbit *= (1u64 << nonzero) as f64;
        let r2: f64 = k.iter().map(|&c| (c * c) as f64).sum();
        acc.add(orbit * f(r2));
        // next nondecreasing tuple in the first d−1 slots, bounded by t
        let mut axis = d - 1;
        loop {
            if axis == 0 {
                return acc.value();
            }
            axis -= 1;
            if k[axis] < t {
                k[axis] += 1;
                let v = k[axis];
                for slot in k.iter_mut().take(d - 1).skip(axis + 1) {
                    *slot = v;
                }
                break;
            }
        }
    }
}

/// `Σ_{0 < ‖k‖_∞ ≤ R} g(‖k‖²)` accumulated shell by shell.
pub(crate) fn lattice_partial_sum<F: Fn(f64) -> f64 + Sync>(radius: usize, d: usize, g: F) -> f64 {
    let shells: Vec<f64> = (1..=radius)
        .into_par_iter()
        .map(|t| if d == 1 { 2.0 * g((t * t) as f64) } else { shell_sum(t, d, &g) })
        .collect();
    shells.into_iter().collect::<KahanSum>().value()
}

/// Normalizer `c = (Σ_{z ≠ 0} ‖z‖^{−(d+α)})^{−1}` by a direct lattice sum with
/// an integral tail correction. Independent of the Ewald route used by
/// [`build_kernel`].
pub fn lattice_constant(d: usize, alpha: f64, rel_tol: f64) -> Result<LatticeConstant> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidParameter(format!("rel_tol must be positive, got {rel_tol}")));
    }
    // Σ ≥ 2d from the nearest neighbours, so a relative certificate follows.
    let floor = 2.0 * d as f64;
    let max_r = max_direct_radius(d);
    let mut radius = 8;
    let mut cert = direct_certificate(radius, d, alpha) / floor;
    while cert > rel_tol {
        if radius >= max_r {
            return Err(Error::ToleranceUnattainable { rel_tol, max_radius: max_r, best: cert });
        }
        radius = (radius * 2).min(max_r);
        cert = direct_certificate(radius, d, alpha) / floor;
    }
    let total = corrected_direct_sum(radius, d, alpha);
    Ok(LatticeConstant {
        d,
        alpha,
        c_alpha: 1.0 / total,
        radius,
        tail_certificate: direct_certificate(radius, d, alpha) / total,
    })
}

/// `Σ_{0<‖k‖_∞≤R} ‖k‖^{−s}` plus the midpoint-rule corrected exterior integral.
pub(crate) fn corrected_direct_sum(radius: usize, d: usize, alpha: f64) -> f64 {
    let s = d as f64 + alpha;
    let df = d as f64;
    let partial = lattice_partial_sum(radius, d, |r2| r2.powf(-s / 2.0));
    let a = radius as f64 + 0.5;
    let tail = cube_exterior_constant(d, s) * a.powf(df - s)
        - s * (s + 2.0 - df) / 24.0 * cube_exterior_constant(d, s + 2.0) * a.powf(df - s - 2.0);
    partial + tail
}

/// Ewald evaluation of `E(y) = Σ_k ‖y + k‖^{−s}` for `y ∈ [−½, ½]^d`, `s > d`.
#[derive(Debug, Clone)]
pub(crate) struct EwaldSum {
    d: usize,
    s: f64,
    radius: usize,
    gamma_half_s: f64,
    recip_prefactor: f64,
}

impl EwaldSum {
    pub(crate) fn new(d: usize, s: f64, radius: usize) -> Self {
        let gamma_half_s = gamma(s / 2.0);
        Self { d, s, radius, gamma_half_s, recip_prefactor: PI.powf(s / 2.0) / gamma_half_s }
    }

    fn alpha(&self) -> f64 {
        self.s - self.d as f64
    }

    fn real_term(&self, r2: f64) -> f64 {
        upper_gamma(self.s / 2.0, PI * r2) / (self.gamma_half_s * r2.powf(self.s / 2.0))
    }

    fn recip_term(&self, m2: f64) -> f64 {
        let a = self.alpha();
        (PI * m2).powf(a / 2.0) * upper_gamma(-a / 2.0, PI * m2)
    }

    /// Uniform bound on the terms dropped by truncating both parts at `radius`.
    pub(crate) fn truncation_error(&self, radius: usize) -> f64 {
        let mut total = 0.0;
        for t in radius + 1..radius + 200 {
            let count = shell_count(t, self.d);
            let rr = t as f64 - 0.5;
            let term = count * (self.real_term(rr * rr) + self.recip_prefactor * self.recip_term((t * t) as f64));
            total += term;
            if term < 1e-300 || term < total * 1e-18 {
                break;
            }
        }
        total
    }

    pub(crate) fn eval(&self, y: &[f64]) -> f64 {
        let d = self.d;
        let r = self.radius as i64;
        let at_origin = y.iter().all(|&v| v == 0.0);
        let mut real = KahanSum::new();
        let mut recip = KahanSum::new();
        for_each_in_box(&vec![(-r, r, 1); d], |k| {
            let mut r2 = 0.0;
            let mut m2 = 0.0;
            let mut phase = 0.0;
            for i in 0..d {
                let v = y[i] + k[i] as f64;
                r2 += v * v;
                let kf = k[i] as f64;
                m2 += kf * kf;
                phase += kf * y[i];
            }
            if r2 > 0.0 {
                real.add(self.real_term(r2));
            }
            if m2 > 0.0 {
                recip.add((2.0 * PI * phase).cos() * self.recip_term(m2));
            }
        });
        recip.add(2.0 / self.alpha());
        if at_origin {
            recip.add(-2.0 / self.s);
        }
        real.value() + self.recip_prefactor * recip.value()
    }
}

/// Epstein zeta `Σ_{k ∈ Z^d ∖ {0}} ‖k‖^{−s}` for `s > d`, by Ewald summation.
pub fn epstein_zeta(d: usize, s: f64) -> f64 {
    let mut radius = 2;
    loop {
        let ew = EwaldSum::new(d, s, radius);
        let value = ew.eval(&vec![0.0; d]);
        if ew.truncation_error(radius) <= 1e-16 * value || radius >= MAX_EWALD_RADIUS {
            return value;
        }
        radius += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongRangeKernel {
    spec: LatticeSpec,
    alpha: f64,
    rel_tol: f64,
    weights: Vec<f64>,
    truncation_radius: usize,
    tail_bound: f64,
}

/// Builds the normalized periodized kernel.
pub fn build_kernel(spec: LatticeSpec, alpha: f64, rel_tol: f64) -> Result<LongRangeKernel> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    if !(rel_tol > 0.0 && rel_tol <= 1e-6) {
        return Err(Error::InvalidParameter(format!("rel_tol must lie in (0, 1e-6], got {rel_tol}")));
    }
    let d = spec.dim();
    let n = spec.side() as f64;
    let s = d as f64 + alpha;
    // Σ_x n^{-s} E(x/n) = Z_d(s) ≥ 2d. Eigenvalues are differences of weights
    // of order n^{-α}, so the radius is pushed well below the mass tolerance.
    let floor = 2.0 * d as f64;
    let target = rel_tol * WEIGHT_MARGIN;
    let mut radius = 1;
    let mut bound;
    loop {
        let ew = EwaldSum::new(d, s, radius);
        bound = n.powf(-alpha) * ew.truncation_error(radius) / floor;
        if bound <= target {
            break;
        }
        if radius >= MAX_EWALD_RADIUS {
            return Err(Error::ToleranceUnattainable { rel_tol, max_radius: MAX_EWALD_RADIUS, best: bound });
        }
        radius += 1;
    }
    let ew = EwaldSum::new(d, s, radius);

    // One evaluation per hyperoctahedral orbit: sorted absolute coordinates.
    let count = spec.site_count();
    let mut classes: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut reps: Vec<Vec<i64>> = Vec::new();
    let mut class_of = Vec::with_capacity(count);
    let mut c = vec![0i64; d];
    for i in 0..count {
        spec.coords_into(i, &mut c);
        let mut key: Vec<i64> = c.iter().map(|v| v.abs()).collect();
        key.sort_unstable_by(|a, b| b.cmp(a));
        let id = *classes.entry(key.clone()).or_insert_with(|| {
            reps.push(key);
            reps.len() - 1
        });
        class_of.push(id);
    }
    let scale = n.powf(-s);
    let values: Vec<f64> = reps
        .par_iter()
        .map(|key| {
            let y: Vec<f64> = key.iter().map(|&v| v as f64 / n).collect();
            scale * ew.eval(&y)
        })
        .collect();
    let raw: Vec<f64> = class_of.iter().map(|&id| values[id]).collect();
    let total = raw.iter().copied().collect::<KahanSum>().value();
    let weights = raw.iter().map(|v| v / total).collect();
    let tail = n.powf(-alpha) * ew.truncation_error(radius) / total;
    log::debug!("kernel d={d} n={} alpha={alpha}: R={radius}, classes={}, tail={tail:e}", spec.side(), reps.len());
    Ok(LongRangeKernel { spec, alpha, rel_tol, weights, truncation_radius: radius, tail_bound: tail })
}

impl LongRangeKernel {
    pub fn spec(&self) -> LatticeSpec {
        self.spec
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rel_tol(&self) -> f64 {
        self.rel_tol
    }

    /// Weights in flat-index order.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, x: &TorusPoint) -> Result<f64> {
        Ok(self.weights[self.spec.flat_index(x)?])
    }

    /// Image truncation radius, in units of the torus side.
    pub fn truncation_radius(&self) -> usize {
        self.truncation_radius
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.spec.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.spec.side() as u64).to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        w.write_all(&self.rel_tol.to_le_bytes())?;
        w.write_all(&(self.truncation_radius as u64).to_le_bytes())?;
        w.write_all(&self.tail_bound.to_le_bytes())?;
        for v in &self.weights {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf).map_err(|e| Error::Cache(e.to_string()))?;
            Ok(buf)
        }
        if &take::<8, _>(&mut r)? != CACHE_MAGIC {
            return Err(Error::Cache("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != CACHE_VERSION {
            return Err(Error::Cache(format!("unsupported version {version}")));
        }
        let d = u32::from_le_bytes(take(&mut r)?) as usize;
        let n = u64::from_le_bytes(take(&mut r)?) as usize;
        let spec = LatticeSpec::new(d, n).map_err(|e| Error::Cache(e.to_string()))?;
        let alpha = f64::from_le_bytes(take(&mut r)?);
        let rel_tol = f64::from_le_bytes(take(&mut r)?);
        let truncation_radius = u64::from_le_bytes(take(&mut r)?) as usize;
        let tail_bound = f64::from_le_bytes(take(&mut r)?);
        let mut weights = Vec::with_capacity(spec.site_count());
        for _ in 0..spec.site_count() {
            weights.push(f64::from_le_bytes(take(&mut r)?));
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(|e| Error::Cache(e.to_string()))? != 0 {
            return Err(Error::Cache("trailing bytes".into()));
        }
        Ok(Self { spec, alpha, rel_tol, weights, truncation_radius, tail_bound })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "#schema=fracpile.kernel.v1")?;
        writeln!(w, "index,coords,weight")?;
        let mut c = vec![0i64; self.spec.dim()];
        for (i, v) in self.weights.iter().enumerate() {
            self.spec.coords_into(i, &mut c);
            writeln!(w, "{i},{},{v:e}", format_coords(&c))?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorMethod {
    /// Direct circular convolution, `O(n^{2d})`.
    Dense,
    /// Multiplication by the symbol in Fourier space, `O(n^d log n)`.
    Transform,
}

/// The generator `f ↦ (p * f) − f` diagonalized by the torus DFT.
#[derive(Debug)]
pub struct Generator {
    fft: TorusFft,
    symbol: Vec<f64>,
    max_imag: f64,
}

impl Generator {
    pub fn new(kernel: &LongRangeKernel) -> Self {
        let spec = kernel.spec();
        let fft = TorusFft::new(spec);
        let scale = spec.site_count() as f64;
        let hat = fft.forward_real(kernel.weights());
        let max_imag = hat.iter().fold(0.0f64, |m, c| m.max((c.im * scale).abs()));
        let symbol = hat.iter().map(|c| c.re * scale - 1.0).collect();
        Self { fft, symbol, max_imag }
    }

    pub fn spec(&self) -> LatticeSpec {
        self.fft.spec()
    }

    pub fn fft(&self) -> &TorusFft {
        &self.fft
    }

    /// Eigenvalue `λ_w` for each frequency, flat-index order.
    pub fn symbol(&self) -> &[f64] {
        &self.symbol
    }

    /// Largest imaginary part seen in the kernel transform.
    pub fn max_imag(&self) -> f64 {
        self.max_imag
    }

    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.spec().check_field(f.len())?;
        let mut hat = self.fft.forward_real(f);
        for (h, l) in hat.iter_mut().zip(&self.symbol) {
            *h *= *l;
        }
        Ok(self.fft.inverse_real(&hat).0)
    }

    /// Applies `Σ_w m(w) f̂(w) e^{2πi x·w/n}` for an arbitrary real multiplier.
    pub fn apply_multiplier(&self, f: &[f64], multiplier: &[f64]) -> Result<Vec<f64>> {
        self.spec().check_field(f.len())?;
        self.spec().check_field(multiplier.len())?;
        let mut hat = self.fft.forward_real(f);
        for (h, m) in hat.iter_mut().zip(multiplier) {
            *h *= *m;
        }
        Ok(self.fft.inverse_real(&hat).0)
    }

    pub fn transform(&self, f: &[f64]) -> Vec<Complex64> {
        self.fft.forward_real(f)
    }
}

/// `(p * f) − f` by the chosen route.
pub fn apply_generator_with(kernel: &LongRangeKernel, f: &[f64], method: GeneratorMethod) -> Result<Vec<f64>> {
    let spec = kernel.spec();
    spec.check_field(f.len())?;
    match method {
        GeneratorMethod::Transform => Generator::new(kernel).apply(f),
        GeneratorMethod::Dense => {
            let count = spec.site_count();
            let d = spec.dim();
            let mut coords = vec![0i64; count * d];
            for (i, chunk) in coords.chunks_mut(d).enumerate() {
                spec.coords_into(i, chunk);
            }
            let w = kernel.weights();
            Ok((0..count)
                .into_par_iter()
                .map(|x| {
                    let cx = &coords[x * d..(x + 1) * d];
                    let mut diff = vec![0i64; d];
                    let mut acc = KahanSum::new();
                    for (y, fy) in f.iter().enumerate() {
                        let cy = &coords[y * d..(y + 1) * d];
                        for i in 0..d {
                            diff[i] = cx[i] - cy[i];
                        }
                        acc.add(w[spec.index_of(&diff)] * fy);
                    }
                    acc.add(-f[x]);
                    acc.value()
                })
                .collect())
        }
    }
}

/// `(p * f) − f`; dense for small tori, transform-based otherwise.
pub fn apply_generator(kernel: &LongRangeKernel, f: &[f64]) -> Result<Vec<f64>> {
    let method = if kernel.spec().site_count() <= 64 { GeneratorMethod::Dense } else { GeneratorMethod::Transform };
    apply_generator_with(kernel, f, method)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_site_kernel() {
        let spec = LatticeSpec::new(1, 2).unwrap();
        let k = build_kernel(spec, 1.0, 1e-12).unwrap();
        let w = k.weights();
        // flat order is x = -1, 0
        assert!((w[1] - 0.25).abs() < 1e-13, "{w:?}");
        assert!((w[0] - 0.75).abs() < 1e-13);
        let out = apply_generator(&k, &[0.0, 1.0]).unwrap();
        assert!((out[1] + 0.75).abs() < 1e-13 && (out[0] - 0.75).abs() < 1e-13);
    }

    #[test]
    fn shell_sums_count_points() {
        for d in 1..=4 {
            for t in 1..5 {
                let got = shell_sum(t, d, |_| 1.0);
                assert_eq!(got, shell_count(t, d), "d={d} t={t}");
            }
        }
        // second moment of the 2-d shell t=1: four points at r²=1, four at r²=2
        assert_eq!(shell_sum(1, 2, |r2| r2), 12.0);
    }

    #[test]
    fn tail_bound_dominates_direct_tail_in_one_dimension() {
        for &alpha in &[0.5, 1.0, 2.5] {
            for r in [2usize, 5, 20] {
                let direct: f64 = (r + 1..2_000_000).map(|k| 2.0 * (k as f64).powf(-1.0 - alpha)).sum();
                let b = tail_bound(r, 1, alpha);
                assert!(b >= direct, "alpha={alpha} R={r}");
                assert!(b <= 2.0 * ((r - 1) as f64).powf(-alpha) / alpha);
            }
        }
    }

    #[test]
    fn tail_bound_dominates_direct_tail_in_two_dimensions() {
        let alpha = 1.0;
        let r = 4;
        let far = 3000;
        let mid = lattice_partial_sum(far, 2, |r2| r2.powf(-1.5)) - lattice_partial_sum(r, 2, |r2| r2.powf(-1.5));
        assert!(tail_bound(r, 2, alpha) >= mid);
        assert!(tail_bound(r, 2, alpha) > tail_bound(r + 1, 2, alpha));
    }

    #[test]
    fn ewald_matches_riemann_zeta_in_one_dimension() {
        // Σ_{k≠0} |k|^{-2} = π²/3
        let z = epstein_zeta(1, 2.0);
        assert!((z - PI * PI / 3.0).abs() < 1e-14, "{z}");
        // Σ_{k≠0} |k|^{-4} = π⁴/45
        let z4 = epstein_zeta(1, 4.0);
        assert!((z4 - PI.powi(4) / 45.0).abs() < 1e-13);
    }

    #[test]
    fn direct_route_matches_zeta() {
        let lc = lattice_constant(1, 1.0, 1e-13).unwrap();
        assert!((lc.c_alpha - 3.0 / (PI * PI)).abs() < 1e-13 * lc.c_alpha);
    }

    #[test]
    fn cache_roundtrip() {
        let spec = LatticeSpec::new(2, 5).unwrap();
        let k = build_kernel(spec, 1.5, 1e-12).unwrap();
        let mut buf = Vec::new();
        k.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 4 + 8 * 5 + 25 * 8);
        let back = LongRangeKernel::read_binary(&buf[..]).unwrap();
        assert_eq!(back, k);
        buf[0] = b'X';
        assert!(LongRangeKernel::read_binary(&buf[..]).is_err());
    }
}
