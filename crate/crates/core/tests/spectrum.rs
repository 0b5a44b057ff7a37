use std::f64::consts::PI;

use fracpile::kernel::{apply_generator, build_kernel, epstein_zeta};
use fracpile::spectrum::{
    eigenvalue_direct, eigenvalue_from_weights, eigenvalues, limit_constant, limit_constant_extrapolated,
    sine_integral_closed_form, verify_rate_lemmas, LimitMethod,
};
use fracpile::{LatticeSpec, TorusPoint};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn point(c: &[i64]) -> TorusPoint {
    TorusPoint { coords: c.to_vec() }
}

#[test]
fn spectrum_invariants() {
    for (d, n) in [(1usize, 2usize), (1, 9), (1, 64), (2, 8), (2, 15), (3, 6)] {
        for alpha in [0.5, 1.0, 1.5, 2.0, 3.0] {
            let spec = LatticeSpec::new(d, n).unwrap();
            let sp = eigenvalues(&build_kernel(spec, alpha, 1e-12).unwrap());
            assert!(sp.max_imag() <= 1e-12);
            let neg = spec.negation_table();
            for (i, &l) in sp.values().iter().enumerate() {
                if spec.point(i).is_origin() {
                    assert_eq!(l, 0.0);
                } else {
                    assert!(l < 0.0);
                }
                assert!((l - sp.values()[neg[i]]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn spectral_decomposition_reproduces_generator() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (d, n) in [(1usize, 12usize), (2, 9), (2, 16)] {
        let spec = LatticeSpec::new(d, n).unwrap();
        let kernel = build_kernel(spec, 1.3, 1e-12).unwrap();
        let sp = eigenvalues(&kernel);
        let f: Vec<f64> = (0..spec.site_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let direct = apply_generator(&kernel, &f).unwrap();
        // synthesize Σ_w λ_w f̂(w) ψ_w(x) by explicit sums
        let nf = n as f64;
        for x in 0..spec.site_count() {
            let xc = spec.point(x).coords;
            let mut acc = Complex64::new(0.0, 0.0);
            for w in 0..spec.site_count() {
                let wc = spec.point(w).coords;
                let mut fh = Complex64::new(0.0, 0.0);
                for (y, fy) in f.iter().enumerate() {
                    let yc = spec.point(y).coords;
                    let dot: i64 = yc.iter().zip(&wc).map(|(a, b)| a * b).sum();
                    fh += Complex64::from_polar(*fy, -2.0 * PI * dot as f64 / nf);
                }
                fh /= spec.site_count() as f64;
                let dot: i64 = xc.iter().zip(&wc).map(|(a, b)| a * b).sum();
                acc += fh * sp.values()[w] * Complex64::from_polar(1.0, 2.0 * PI * dot as f64 / nf);
            }
            assert!((acc.re - direct[x]).abs() < 1e-10);
        }
    }
}

#[test]
fn direct_eigenvalue_agrees_with_spectral_route() {
    let spec = LatticeSpec::new(1, 8).unwrap();
    let sp = eigenvalues(&build_kernel(spec, 1.0, 1e-12).unwrap());
    for i in 0..8 {
        let w = spec.point(i);
        if w.is_origin() {
            assert!(eigenvalue_direct(spec, 1.0, &w, 100).is_err());
            continue;
        }
        let de = eigenvalue_direct(spec, 1.0, &w, 1_000_000).unwrap();
        assert!(de.certificate < 1e-8);
        assert!((de.value - sp.values()[i]).abs() < 1e-8);
        assert!(de.value < 0.0);
    }
}

#[test]
fn direct_eigenvalue_within_certificates_on_small_grids() {
    for (d, n, radius) in [(1usize, 5usize, 20_000usize), (1, 16, 20_000), (2, 4, 300), (2, 7, 300)] {
        for alpha in [0.5, 1.0, 1.7] {
            let spec = LatticeSpec::new(d, n).unwrap();
            let kernel = build_kernel(spec, alpha, 1e-12).unwrap();
            let sp = eigenvalues(&kernel);
            for i in 0..spec.site_count() {
                let w = spec.point(i);
                if w.is_origin() {
                    continue;
                }
                let de = eigenvalue_direct(spec, alpha, &w, radius).unwrap();
                let budget = de.certificate + kernel.tail_bound() + 1e-12;
                let gap = (de.value - sp.values()[i]).abs();
                assert!(gap <= budget, "d={d} n={n} alpha={alpha} w={:?}: gap {gap:e} > {budget:e}", w.coords);
            }
        }
    }
}

#[test]
fn direct_eigenvalue_is_invariant_under_joint_scaling() {
    for alpha in [0.5, 1.0, 1.5] {
        let a = eigenvalue_direct(LatticeSpec::new(1, 10).unwrap(), alpha, &point(&[3]), 200_000).unwrap();
        let b = eigenvalue_direct(LatticeSpec::new(1, 20).unwrap(), alpha, &point(&[6]), 200_000).unwrap();
        assert!((a.value - b.value).abs() <= a.certificate + b.certificate);
    }
}

#[test]
fn one_dimensional_alpha_one_closed_form() {
    // Σ_{z≥1} sin²(zθ)/z² = θ(π − θ)/2 gives n(−λ_w) = 6|w|(1 − |w|/n).
    for n in [8usize, 33, 100] {
        let kernel = build_kernel(LatticeSpec::new(1, n).unwrap(), 1.0, 1e-12).unwrap();
        for w in 1..(n / 2) as i64 {
            let got = n as f64 * -eigenvalue_from_weights(&kernel, &[w]).unwrap();
            let want = 6.0 * w as f64 * (1.0 - w as f64 / n as f64);
            assert!((got - want).abs() < 1e-10 * want, "n={n} w={w}: {got} vs {want}");
        }
    }
}

#[test]
fn limit_constant_routes_agree_one_dimension() {
    let q = limit_constant(1, 1.0, LimitMethod::Quadrature).unwrap();
    let e = limit_constant(1, 1.0, LimitMethod::Extrapolation).unwrap();
    assert!((q.c_tilde - 6.0).abs() <= q.error_estimate, "{q:?}");
    assert!((q.c_tilde - e.c_tilde).abs() <= q.error_estimate + e.error_estimate, "{q:?} {e:?}");
    for alpha in [0.5, 1.5] {
        let q = limit_constant(1, alpha, LimitMethod::Quadrature).unwrap();
        let e = limit_constant(1, alpha, LimitMethod::Extrapolation).unwrap();
        let tol = q.error_estimate + e.error_estimate;
        assert!((q.c_tilde - e.c_tilde).abs() <= tol, "alpha={alpha}: {q:?} {e:?}");
        assert!(q.c_tilde > 0.0 && e.c_tilde > 0.0);
        assert!(q.error_estimate < 1e-6 * q.c_tilde);
    }
}

#[test]
fn limit_constant_routes_agree_two_dimensions() {
    for alpha in [0.5, 1.0, 1.5] {
        let q = limit_constant(2, alpha, LimitMethod::Quadrature).unwrap();
        let e = limit_constant(2, alpha, LimitMethod::Extrapolation).unwrap();
        assert!((q.c_tilde - e.c_tilde).abs() <= q.error_estimate + e.error_estimate, "alpha={alpha}: {q:?} {e:?}");
    }
}

#[test]
fn quadrature_matches_gamma_closed_form() {
    for d in 1..=3 {
        for alpha in [0.3, 1.0, 1.9] {
            let q = limit_constant(d, alpha, LimitMethod::Quadrature).unwrap();
            let c = 1.0 / epstein_zeta(d, d as f64 + alpha);
            let closed = 2.0 * c * sine_integral_closed_form(d, alpha);
            assert!((q.c_tilde - closed).abs() <= q.error_estimate + 1e-12 * closed, "d={d} alpha={alpha}");
        }
    }
}

#[test]
fn scaled_eigenvalue_approaches_limit_monotonically() {
    let c = limit_constant(1, 1.0, LimitMethod::Quadrature).unwrap().c_tilde;
    let ratios: Vec<f64> = [32usize, 64, 128, 256, 512, 1024]
        .iter()
        .map(|&n| {
            let k = build_kernel(LatticeSpec::new(1, n).unwrap(), 1.0, 1e-12).unwrap();
            n as f64 * -eigenvalue_from_weights(&k, &[1]).unwrap() / c
        })
        .collect();
    let gaps: Vec<f64> = ratios.iter().map(|r| (1.0 - r).abs()).collect();
    assert!(gaps.windows(2).all(|g| g[1] < g[0]), "{ratios:?}");
    assert!(gaps[5] < 1e-2);
}

#[test]
fn extrapolation_needs_three_points() {
    assert!(limit_constant_extrapolated(1, 1.0, &[32, 64]).is_err());
    assert!(limit_constant_extrapolated(1, 1.0, &[64, 32, 128]).is_err());
}

#[test]
fn rate_report_alpha_one() {
    let report = verify_rate_lemmas(1, &[64, 128, 256, 512, 1024], 1.0, 4.0).unwrap();
    assert!((report.c_tilde - 6.0).abs() < 1e-8);
    for check in report.checks_named("riemann-rate") {
        let slope = check.fitted_exponent.unwrap();
        assert!((-1.3..=-0.7).contains(&slope), "{check:?}");
        assert!(check.stderr.unwrap().is_finite());
    }
    let band = report.checks_named("ratio-band").next().unwrap();
    let [lo, hi] = band.band.unwrap();
    assert!(lo > 0.0 && hi.is_finite());
    // max/min per ladder level settles as the ladder extends
    let v = &band.values;
    assert!((v[v.len() - 1] - v[v.len() - 2]).abs() < 0.05 * v[v.len() - 2]);
    assert!(verify_rate_lemmas(1, &[64, 128, 256], 1.0, 4.0).is_err());
}

#[test]
fn rate_report_alpha_three_converges() {
    let report = verify_rate_lemmas(1, &[64, 128, 256, 512, 1024], 3.0, 2.0).unwrap();
    assert!((report.c_tilde - 30.0).abs() < 1e-10);
    let lead = report.checks_named("membrane-limit").find(|c| c.w.as_deref() == Some(&[1][..])).unwrap();
    let v = &lead.values;
    assert!(v.iter().all(|x| *x > 0.0));
    assert!((v[v.len() - 1] - 30.0).abs() < 0.05 * 30.0);
    assert!((lead.fitted_exponent.unwrap() + 2.0).abs() < 0.05);
}

#[test]
fn rate_report_alpha_two_log_stabilizes() {
    let report = verify_rate_lemmas(1, &[64, 128, 256, 512], 2.0, 2.0).unwrap();
    for check in report.checks_named("log-correction") {
        let v = &check.values;
        let change = (v[3] - v[2]).abs() / v[2];
        assert!(change < 0.1, "{check:?}");
    }
}
