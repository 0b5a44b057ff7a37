//! Transform-domain odometer, Green's function and η-field covariance.
//!
//! The stabilized odometer solves `s + L u = 1` with `min u = 0`; with
//! `λ_w` the eigenvalues of `L` this is `û(w) = (1 − s)^(w) / λ_w` for `w ≠ 0`
//! and a zero mode fixed by the minimum.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::fft::TorusFft;
use crate::montecarlo::seed_stream;
use crate::sandpile::{check_mass, init_with_rng, Weights};
use crate::spectrum::Spectrum;
use crate::torus::{LatticeSpec, TorusPoint};

/// Min-normalized odometer with its residual `‖s + L u − 1‖_∞`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdometerField {
    pub spec: LatticeSpec,
    pub alpha: f64,
    pub u: Vec<f64>,
    pub residual: f64,
}

/// Translation-invariant Green's function `G(z)`, flat-index order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenTable {
    pub spec: LatticeSpec,
    pub alpha: f64,
    pub values: Vec<f64>,
    /// Largest imaginary part discarded by the inverse transform.
    pub max_imag: f64,
}

impl GreenTable {
    /// `G(torus_diff(x, y))`.
    pub fn value(&self, x: &TorusPoint, y: &TorusPoint) -> Result<f64> {
        let z = self.spec.torus_diff(x, y)?;
        Ok(self.values[self.spec.flat_index(&z)?])
    }
}

/// One draw of the η field together with the masses it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaSample {
    pub s: Vec<f64>,
    pub eta: Vec<f64>,
}

/// Shifts a field so that its minimum is exactly 0.
pub fn min_normalize(f: &[f64]) -> Vec<f64> {
    let m = f.iter().copied().fold(f64::INFINITY, f64::min);
    f.iter().map(|v| v - m).collect()
}

/// Reusable transform-domain solver for one spectrum.
#[derive(Debug)]
pub struct SpectralSolver {
    spectrum: Spectrum,
    fft: TorusFft,
    green: GreenTable,
    green_hat: Vec<Complex64>,
}

impl SpectralSolver {
    pub fn new(spectrum: &Spectrum) -> Self {
        let spec = spectrum.spec();
        let fft = TorusFft::new(spec);
        let scale = 1.0 / spec.site_count() as f64;
        let hat: Vec<Complex64> = spectrum
            .values()
            .iter()
            .map(|&l| if l == 0.0 { Complex64::new(0.0, 0.0) } else { Complex64::new(-scale / l, 0.0) })
            .collect();
        let (values, max_imag) = fft.inverse_real(&hat);
        let green = GreenTable { spec, alpha: spectrum.alpha(), values, max_imag };
        // convolution with the stored table: (G ⊛ f)^ = n^d Ĝ f̂
        let count = spec.site_count() as f64;
        let green_hat = fft.forward_real(&green.values).into_iter().map(|c| c * count).collect();
        Self { spectrum: spectrum.clone(), fft, green, green_hat }
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn spec(&self) -> LatticeSpec {
        self.spectrum.spec()
    }

    pub fn green(&self) -> &GreenTable {
        &self.green
    }

    /// `L f` through the eigenvalues.
    pub fn apply_generator(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.spec().check_field(f.len())?;
        let mut hat = self.fft.forward_real(f);
        for (h, l) in hat.iter_mut().zip(self.spectrum.values()) {
            *h *= *l;
        }
        Ok(self.fft.inverse_real(&hat).0)
    }

    pub fn odometer(&self, s: &[f64]) -> Result<OdometerField> {
        let spec = self.spec();
        check_mass(spec, s)?;
        let deficit: Vec<f64> = s.iter().map(|v| 1.0 - v).collect();
        let mut hat = self.fft.forward_real(&deficit);
        for (h, &l) in hat.iter_mut().zip(self.spectrum.values()) {
            *h = if l == 0.0 { Complex64::new(0.0, 0.0) } else { *h / l };
        }
        let u = min_normalize(&self.fft.inverse_real(&hat).0);
        let residual = self.residual(s, &u)?;
        Ok(OdometerField { spec, alpha: self.spectrum.alpha(), u, residual })
    }

    /// `‖s + L u − 1‖_∞`.
    pub fn residual(&self, s: &[f64], u: &[f64]) -> Result<f64> {
        let lu = self.apply_generator(u)?;
        Ok(s.iter().zip(&lu).fold(0.0, |m, (a, b)| m.max((a + b - 1.0).abs())))
    }

    /// `η(x) = Σ_z G(x − z)(s(z) − 1)`.
    pub fn eta(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.spec().check_field(s.len())?;
        let excess: Vec<f64> = s.iter().map(|v| v - 1.0).collect();
        let mut hat = self.fft.forward_real(&excess);
        for (h, g) in hat.iter_mut().zip(&self.green_hat) {
            *h *= *g;
        }
        Ok(self.fft.inverse_real(&hat).0)
    }

    pub fn sample_eta_with<R: Rng>(&self, weights: Weights, rng: &mut R) -> Result<EtaSample> {
        let state = init_with_rng(self.spec(), weights, rng);
        let s = state.masses().to_vec();
        let eta = self.eta(&s)?;
        Ok(EtaSample { s, eta })
    }

    /// Covariance row `C(0, y)` for all `y` through the transform.
    pub fn covariance_row(&self) -> Vec<f64> {
        let scale = 1.0 / self.spec().site_count() as f64;
        let hat: Vec<Complex64> = self
            .spectrum
            .values()
            .iter()
            .map(|&l| if l == 0.0 { Complex64::new(0.0, 0.0) } else { Complex64::new(scale / (l * l), 0.0) })
            .collect();
        self.fft.inverse_real(&hat).0
    }
}

pub fn spectral_odometer(spectrum: &Spectrum, s: &[f64]) -> Result<OdometerField> {
    SpectralSolver::new(spectrum).odometer(s)
}

/// `G(z) = −n^{−d} Σ_{w≠0} e^{2πi z·w/n} / λ_w`.
pub fn green_function(spectrum: &Spectrum) -> GreenTable {
    SpectralSolver::new(spectrum).green
}

/// `e^{2πi k/n}` phase of an integer dot product, reduced mod `n` first.
fn phase(dot: i64, n: usize) -> f64 {
    2.0 * PI * dot.rem_euclid(n as i64) as f64 / n as f64
}

fn dot(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `C(x, y) = n^{−d} Σ_{w≠0} cos(2π (y − x)·w/n) / λ_w²`, summed directly.
pub fn eta_covariance(spectrum: &Spectrum, x: &TorusPoint, y: &TorusPoint) -> Result<f64> {
    let spec = spectrum.spec();
    let z = spec.torus_diff(y, x)?;
    let n = spec.side();
    let mut w = vec![0i64; spec.dim()];
    let mut acc = crate::numerics::KahanSum::new();
    for (i, &l) in spectrum.values().iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        spec.coords_into(i, &mut w);
        acc.add(phase(dot(&z.coords, &w), n).cos() / (l * l));
    }
    Ok(acc.value() / spec.site_count() as f64)
}

/// η for a fresh Gaussian initial condition drawn from stream 0 of `seed`.
pub fn sample_eta(spectrum: &Spectrum, seed: u64) -> Result<Vec<f64>> {
    let solver = SpectralSolver::new(spectrum);
    Ok(solver.sample_eta_with(Weights::Gaussian, &mut seed_stream(seed, 0))?.eta)
}
