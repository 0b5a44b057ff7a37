//! Reference growth curves, the Gaussian distance `M`, test-function
//! pairings of the rescaled odometer, and the limiting fractional Gaussian
//! field covariance.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::KahanSum;
use crate::solver::SpectralSolver;
use crate::spectrum::{limit_constant, membrane_constant, LimitMethod, Spectrum};
use crate::torus::{norm, LatticeSpec, TorusPoint};

/// Normalization of the rescaled odometer field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldSpec {
    pub d: usize,
    pub alpha: f64,
    /// `min(α, 2)`.
    pub gamma: f64,
    /// Leading eigenvalue constant: `c̃` for α < 2, the log coefficient at
    /// α = 2, and the membrane limit for α > 2.
    pub c_tilde: f64,
    pub c_tilde_error: f64,
}

impl FieldSpec {
    /// Computes the leading constant (extrapolated `c̃` for α < 2).
    pub fn new(d: usize, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || d == 0 {
            return Err(Error::InvalidParameter(format!("need d ≥ 1 and α > 0, got d={d}, α={alpha}")));
        }
        let (c, err) = if alpha < 2.0 {
            let lc = limit_constant(d, alpha, LimitMethod::Extrapolation)?;
            (lc.c_tilde, lc.error_estimate)
        } else {
            (membrane_constant(d, alpha)?, 0.0)
        };
        Self::with_constant(d, alpha, c, err)
    }

    pub fn with_constant(d: usize, alpha: f64, c_tilde: f64, c_tilde_error: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || d == 0 || !(c_tilde > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need d ≥ 1, α > 0 and a positive constant, got d={d}, α={alpha}, c={c_tilde}"
            )));
        }
        Ok(Self { d, alpha, gamma: alpha.min(2.0), c_tilde, c_tilde_error })
    }

    /// `a_α(n)`: `n^{(d−2α)/2}` for α < 2, `n^{(d−4)/2} log n` at α = 2,
    /// `n^{(d−4)/2}` for α > 2.
    pub fn a_of_n(&self, n: usize) -> f64 {
        let n = n as f64;
        let d = self.d as f64;
        if self.alpha < 2.0 {
            n.powf((d - 2.0 * self.alpha) / 2.0)
        } else if self.alpha == 2.0 {
            n.powf((d - 4.0) / 2.0) * n.ln()
        } else {
            n.powf((d - 4.0) / 2.0)
        }
    }
}

/// `Φ_{d,γ}(n)`: `n^{γ−d/2}` if γ > d/2, `log n` if γ = d/2, `(log n)^{1/2}` if γ < d/2.
pub fn phi_reference(d: usize, gamma: f64, n: usize) -> Result<f64> {
    if n < 2 || !(gamma > 0.0 && gamma <= 2.0) {
        return Err(Error::InvalidParameter(format!("need n ≥ 2 and γ ∈ (0, 2], got n={n}, γ={gamma}")));
    }
    if gamma == 2.0 {
        log::warn!("γ = 2 lies outside the range where the odometer growth law is stated");
    }
    let half = d as f64 / 2.0;
    let n = n as f64;
    Ok(if gamma > half {
        n.powf(gamma - half)
    } else if gamma == half {
        n.ln()
    } else {
        n.ln().sqrt()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiCase {
    /// α > d/2 + 1: `n^{2α−d−2} r²`.
    Quadratic,
    /// α = d/2 + 1: `log(n/r) r²`.
    QuadraticLog,
    /// d/2 < α < d/2 + 1: `r^{2α−d}`.
    Power,
    /// α = d/2: `log r`.
    Log,
    /// α < d/2: `1`.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiValue {
    pub value: f64,
    pub case: PsiCase,
    /// Set at r = 1 in the `log r` case, where the reference vanishes.
    pub degenerate: bool,
}

pub fn psi_case(d: usize, alpha: f64) -> PsiCase {
    let half = d as f64 / 2.0;
    if alpha > half + 1.0 {
        PsiCase::Quadratic
    } else if alpha == half + 1.0 {
        PsiCase::QuadraticLog
    } else if alpha > half {
        PsiCase::Power
    } else if alpha == half {
        PsiCase::Log
    } else {
        PsiCase::Constant
    }
}

/// `Ψ_{d,α}(n, r)`, the order of `E[(η_0 − η_x)²]` at distance `r`.
pub fn psi_reference(d: usize, alpha: f64, n: usize, r: f64) -> Result<PsiValue> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::InvalidParameter(format!("α must lie in (0, 2), got {alpha}")));
    }
    if !(r >= 1.0 && r <= n as f64) {
        return Err(Error::InvalidParameter(format!("need 1 ≤ r ≤ n, got r={r}, n={n}")));
    }
    let case = psi_case(d, alpha);
    let nf = n as f64;
    let df = d as f64;
    let value = match case {
        PsiCase::Quadratic => nf.powf(2.0 * alpha - df - 2.0) * r * r,
        PsiCase::QuadraticLog => (nf / r).ln() * r * r,
        PsiCase::Power => r.powf(2.0 * alpha - df),
        PsiCase::Log => r.ln(),
        PsiCase::Constant => 1.0,
    };
    let degenerate = case == PsiCase::Log && r == 1.0;
    if degenerate {
        log::warn!("Ψ vanishes at r = 1 in the log case");
    }
    Ok(PsiValue { value, case, degenerate })
}

/// `M(x) = n^{−d} Σ_{w≠0} sin²(π x·w/n) / λ_w²`, summed directly.
pub fn gaussian_distance_sq(spectrum: &Spectrum, x: &TorusPoint) -> Result<f64> {
    let spec = spectrum.spec();
    let xi = spec.flat_index(x)?;
    let xc = spec.point(xi).coords;
    let n = spec.side() as i64;
    let mut w = vec![0i64; spec.dim()];
    let mut acc = KahanSum::new();
    for (i, &l) in spectrum.values().iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        spec.coords_into(i, &mut w);
        let k = xc.iter().zip(&w).map(|(a, b)| a * b).sum::<i64>().rem_euclid(n);
        let sn = (PI * k as f64 / n as f64).sin();
        acc.add(sn * sn / (l * l));
    }
    Ok(acc.value() / spec.site_count() as f64)
}

/// `M(x)` for every site through the covariance row: `M(x) = (C(0) − C(x))/2`.
pub fn gaussian_distance_table(solver: &SpectralSolver) -> Vec<f64> {
    let row = solver.covariance_row();
    let c0 = row[solver.spec().index_of(&vec![0; solver.spec().dim()])];
    row.iter().map(|c| 0.5 * (c0 - c)).collect()
}

/// Finite trigonometric polynomial `f(x) = Σ_ν c_ν e^{2πi ν·x}` on `[0,1)^d`
/// without a constant term.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestFunction {
    modes: Vec<(Vec<i64>, Complex64)>,
}

impl TestFunction {
    pub fn new(modes: Vec<(Vec<i64>, Complex64)>) -> Result<Self> {
        let Some(d) = modes.first().map(|m| m.0.len()) else {
            return Err(Error::InvalidParameter("test function needs at least one mode".into()));
        };
        for (nu, _) in &modes {
            if nu.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: nu.len() });
            }
            if nu.iter().all(|&v| v == 0) {
                return Err(Error::InvalidParameter("test functions must have zero mean (no ν = 0 mode)".into()));
            }
        }
        Ok(Self { modes })
    }

    /// `φ_ν(x) = e^{2πi ν·x}`.
    pub fn mode(nu: &[i64]) -> Result<Self> {
        Self::new(vec![(nu.to_vec(), Complex64::new(1.0, 0.0))])
    }

    pub fn dim(&self) -> usize {
        self.modes[0].0.len()
    }

    pub fn modes(&self) -> &[(Vec<i64>, Complex64)] {
        &self.modes
    }

    /// Fourier coefficient at `w` (zero when absent).
    pub fn coefficient(&self, w: &[i64]) -> Complex64 {
        self.modes.iter().filter(|(nu, _)| nu.as_slice() == w).map(|(_, c)| *c).sum()
    }

    /// True when the coefficients are conjugate-symmetric.
    pub fn is_real(&self, tol: f64) -> bool {
        self.modes.iter().all(|(nu, c)| {
            let neg: Vec<i64> = nu.iter().map(|v| -v).collect();
            (self.coefficient(&neg) - c.conj()).norm() <= tol
        })
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        self.modes
            .iter()
            .map(|(nu, c)| {
                let t: f64 = nu.iter().zip(x).map(|(a, b)| *a as f64 * b).sum();
                c * Complex64::from_polar(1.0, 2.0 * PI * t)
            })
            .sum()
    }

    /// `T_n(z) = ∫_{B(z, 1/2n)} f` for every cell center `z = x/n`, in closed form.
    pub fn cell_integrals(&self, spec: LatticeSpec) -> Result<Vec<Complex64>> {
        if spec.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: spec.dim(), got: self.dim() });
        }
        let n = spec.side() as f64;
        let h = 0.5 / n;
        let mut out = vec![Complex64::new(0.0, 0.0); spec.site_count()];
        let mut x = vec![0i64; spec.dim()];
        for (nu, c) in &self.modes {
            // ∫_a^b e^{2πiνt} dt = (e^{2πiνb} − e^{2πiνa}) / (2πiν), or b − a when ν = 0
            let factor = |j: usize, xj: i64| -> Complex64 {
                let z = xj as f64 / n;
                if nu[j] == 0 {
                    return Complex64::new(2.0 * h, 0.0);
                }
                let k = 2.0 * PI * nu[j] as f64;
                (Complex64::from_polar(1.0, k * (z + h)) - Complex64::from_polar(1.0, k * (z - h)))
                    / Complex64::new(0.0, k)
            };
            for (i, o) in out.iter_mut().enumerate() {
                spec.coords_into(i, &mut x);
                let mut t = *c;
                for (j, &xj) in x.iter().enumerate() {
                    t *= factor(j, xj);
                }
                *o += t;
            }
        }
        Ok(out)
    }
}

/// `⟨Ξ_n, f⟩ = c̃ a_α(n) Σ_z u(nz) T_n(z)` with precomputed cell integrals.
pub fn pair_with_cells(u: &[f64], cells: &[Complex64], spec: LatticeSpec, fs: &FieldSpec) -> Result<Complex64> {
    spec.check_field(u.len())?;
    spec.check_field(cells.len())?;
    let (mut re, mut im) = (KahanSum::new(), KahanSum::new());
    for (v, t) in u.iter().zip(cells) {
        re.add(v * t.re);
        im.add(v * t.im);
    }
    Ok(Complex64::new(re.value(), im.value()) * (fs.c_tilde * fs.a_of_n(spec.side())))
}

pub fn pair_field(u: &[f64], spec: LatticeSpec, f: &TestFunction, fs: &FieldSpec) -> Result<Complex64> {
    if fs.d != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: fs.d });
    }
    pair_with_cells(u, &f.cell_integrals(spec)?, spec, fs)
}

/// `Σ_{w≠0} f̂(w) conj(ĝ(w)) ‖w‖^{−2γ}` over the modes present.
pub fn limit_covariance(f: &TestFunction, g: &TestFunction, gamma: f64) -> Result<Complex64> {
    if f.dim() != g.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), got: g.dim() });
    }
    let mut seen: Vec<&Vec<i64>> = Vec::new();
    let mut acc = Complex64::new(0.0, 0.0);
    for (nu, _) in f.modes() {
        if seen.contains(&nu) {
            continue;
        }
        seen.push(nu);
        acc += f.coefficient(nu) * g.coefficient(nu).conj() * norm(nu).powf(-2.0 * gamma);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_curves() {
        assert!((phi_reference(1, 1.5, 100).unwrap() - 100.0).abs() < 1e-10);
        assert!((phi_reference(2, 1.0, 100).unwrap() - 100f64.ln()).abs() < 1e-14);
        assert!((phi_reference(4, 1.5, 100).unwrap() - 100f64.ln().sqrt()).abs() < 1e-14);
        assert!(phi_reference(1, 2.5, 100).is_err());
        let p = psi_reference(2, 1.0, 64, 5.0).unwrap();
        assert_eq!(p.case, PsiCase::Log);
        assert!((p.value - 5f64.ln()).abs() < 1e-15);
        assert!(psi_reference(2, 1.0, 64, 1.0).unwrap().degenerate);
        assert_eq!(psi_reference(3, 1.0, 64, 7.0).unwrap().value, 1.0);
        assert!((psi_reference(1, 1.25, 64, 4.0).unwrap().value - 8.0).abs() < 1e-12);
        let b = psi_reference(1, 1.5, 64, 3.0).unwrap();
        assert_eq!(b.case, PsiCase::QuadraticLog);
        assert!((b.value - 9.0 * (64.0f64 / 3.0).ln()).abs() < 1e-12);
        assert_eq!(psi_case(1, 1.75), PsiCase::Quadratic);
        assert!(psi_reference(1, 1.0, 8, 9.0).is_err());
    }

    #[test]
    fn normalization_cases() {
        let fs = FieldSpec::with_constant(2, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(fs.a_of_n(64), 1.0);
        let fs = FieldSpec::with_constant(2, 2.0, 1.0, 0.0).unwrap();
        assert!((fs.a_of_n(64) - 64f64.ln() / 64.0).abs() < 1e-15);
        let fs = FieldSpec::with_constant(3, 2.5, 1.0, 0.0).unwrap();
        assert!((fs.a_of_n(16) - 0.25).abs() < 1e-15);
        assert_eq!(fs.gamma, 2.0);
    }

    #[test]
    fn test_functions_need_zero_mean() {
        assert!(TestFunction::mode(&[0, 0]).is_err());
        assert!(TestFunction::new(vec![]).is_err());
        let f =
            TestFunction::new(vec![(vec![1, 2], Complex64::new(0.5, 0.5)), (vec![-1, -2], Complex64::new(0.5, -0.5))])
                .unwrap();
        assert!(f.is_real(0.0));
        assert!(!TestFunction::mode(&[1, 0]).unwrap().is_real(1e-12));
        let g = TestFunction::mode(&[1, 1]).unwrap();
        assert!((limit_covariance(&g, &g, 1.0).unwrap().re - 0.5).abs() < 1e-15);
        let h = TestFunction::mode(&[1, 0]).unwrap();
        assert_eq!(limit_covariance(&g, &h, 1.0).unwrap(), Complex64::new(0.0, 0.0));
    }
}
