//! Small numerical building blocks shared by the lattice sums, quadratures and fits.

use std::f64::consts::PI;

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Compensated sum of a slice.
pub fn ksum(xs: &[f64]) -> f64 {
    xs.iter().copied().collect::<KahanSum>().value()
}

pub fn gamma(a: f64) -> f64 {
    statrs::function::gamma::gamma(a)
}

/// Upper incomplete gamma function Γ(a, x) for x > 0 and any real `a`.
///
/// Series for the lower function when `a > 0` and `x < a + 1`, Lentz continued
/// fraction otherwise. Negative `a` with small `x` is lifted with the
/// recurrence Γ(a, x) = (Γ(a + 1, x) − x^a e^{−x}) / a.
pub fn upper_gamma(a: f64, x: f64) -> f64 {
    assert!(x > 0.0, "upper_gamma needs x > 0");
    if a > 0.0 && x < a + 1.0 {
        return gamma(a) - lower_gamma_series(a, x);
    }
    if a <= 0.0 && x < 1.0 {
        // a is never a non-positive integer in this crate; the recurrence is exact.
        return (upper_gamma(a + 1.0, x) - x.powf(a) * (-x).exp()) / a;
    }
    upper_gamma_cf(a, x)
}

fn lower_gamma_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..1000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum * (a * x.ln() - x).exp()
}

fn upper_gamma_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..2000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (a * x.ln() - x).exp() * h
}

/// Surface area of the unit sphere S^{k} ⊂ R^{k+1}.
pub fn sphere_area(k: usize) -> f64 {
    let m = (k + 1) as f64;
    2.0 * PI.powf(m / 2.0) / gamma(m / 2.0)
}

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let nf = order as f64;
    for i in 0..order.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..order {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = nf * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[order - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

const GK_XK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * GK_WK[7];
    let mut gauss = fc * GK_WG[3];
    for j in 0..7 {
        let dx = h * GK_XK[j];
        let s = f(c - dx) + f(c + dx);
        kron += GK_WK[j] * s;
        if j % 2 == 1 {
            gauss += GK_WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Result of an adaptive quadrature.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

/// Globally adaptive Gauss–Kronrod (7/15) quadrature on a finite interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Quadrature {
    let mut pieces = vec![{
        let (v, e) = gk15(&f, a, b);
        (a, b, v, e)
    }];
    for _ in 0..5000 {
        let total: f64 = pieces.iter().map(|p| p.2).sum();
        let err: f64 = pieces.iter().map(|p| p.3).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            break;
        }
        let (idx, _) = pieces.iter().enumerate().max_by(|x, y| x.1 .3.total_cmp(&y.1 .3)).expect("non-empty");
        let (lo, hi, _, _) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
    let value = pieces.iter().map(|p| p.2).collect::<KahanSum>().value();
    let error = pieces.iter().map(|p| p.3).sum();
    Quadrature { value, error }
}

/// Weighted straight-line least squares `y ≈ a + b x`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_stderr: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    /// Weighted residual sum of squares (a χ² when the sigmas are absolute).
    pub chi_squared: f64,
}

/// Fits `y = a + b x`. With `sigma` given, the parameter covariance is the
/// absolute `(XᵀWX)⁻¹`; without it, the unit-weight covariance is rescaled by
/// the residual variance.
pub fn fit_line(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n || sigma.is_some_and(|s| s.len() != n) {
        return None;
    }
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|&e| 1.0 / (e * e)).collect(),
        None => vec![1.0; n],
    };
    if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return None;
    }
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let xm = sx / sw;
    let ym = sy / sw;
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = (0..n).map(|i| w[i] * (x[i] - xm) * (y[i] - ym)).sum();
    let syy: f64 = w.iter().zip(y).map(|(w, y)| w * (y - ym).powi(2)).sum();
    if sxx <= f64::EPSILON * sw * (1.0 + xm * xm) {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let chi2: f64 = (0..n).map(|i| w[i] * (y[i] - intercept - slope * x[i]).powi(2)).sum();
    let scale = if sigma.is_some() {
        1.0
    } else if n > 2 {
        chi2 / (n - 2) as f64
    } else {
        0.0
    };
    let var_slope = scale / sxx;
    let var_intercept = scale * (1.0 / sw + xm * xm / sxx);
    let r2 = if syy > 0.0 { (1.0 - chi2 / syy).clamp(0.0, 1.0) } else { 1.0 };
    Some(LineFit {
        intercept,
        slope,
        intercept_stderr: var_intercept.sqrt(),
        slope_stderr: var_slope.sqrt(),
        r_squared: r2,
        chi_squared: chi2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upper_gamma_matches_known_values() {
        // Γ(1, x) = e^{-x}
        for &x in &[0.01, 0.5, 1.0, 3.0, 20.0] {
            let v = upper_gamma(1.0, x);
            assert!((v - (-x).exp()).abs() < 1e-14 * (1.0 + v), "x={x}");
        }
        // reference values from 30-digit arithmetic
        let cases = [
            (0.5, 0.1, 1.160_462_484_793_744_2),
            (0.5, 1.0, 0.278_805_585_280_661_98),
            (0.5, 4.0, 0.008_291_069_380_672_667),
            (-0.25, 3.5, 0.004_855_191_843_714_536_8),
            (-0.75, 0.3, 1.331_320_643_921_345_7),
            (-1.0, 4.0, 0.000_799_557_312_334_638_6),
            (1.25, 0.7, 0.552_629_840_705_994_25),
        ];
        for (a, x, want) in cases {
            let got = upper_gamma(a, x);
            assert!((got - want).abs() < 1e-14 * want, "a={a} x={x} got={got}");
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(12);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_quadrature_handles_endpoint_singularity() {
        let q = integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-12, 1e-12);
        assert!((q.value - 2.0).abs() < 1e-9, "{q:?}");
        let q = integrate(|x| (PI * x).sin().powi(2), 0.0, 3.0, 1e-14, 1e-14);
        assert!((q.value - 1.5).abs() < 1e-13);
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let x: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| 2.5 - 0.75 * x).collect();
        let fit = fit_line(&x, &y, None).unwrap();
        assert!((fit.slope + 0.75).abs() < 1e-14);
        assert!((fit.intercept - 2.5).abs() < 1e-14);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit_line(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], None).is_none());
    }

    #[test]
    fn kahan_beats_naive_on_mixed_magnitudes() {
        let mut xs = vec![1.0];
        xs.extend(std::iter::repeat_n(1e-16, 10_000));
        assert!((ksum(&xs) - (1.0 + 1e-12)).abs() < 1e-15);
    }
}
