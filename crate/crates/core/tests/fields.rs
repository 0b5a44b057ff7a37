use fracpile::fields::{
    gaussian_distance_sq, gaussian_distance_table, limit_covariance, pair_field, phi_reference, psi_reference,
    FieldSpec, TestFunction,
};
use fracpile::kernel::build_kernel;
use fracpile::montecarlo::seed_stream;
use fracpile::sandpile::Weights;
use fracpile::solver::{eta_covariance, min_normalize, SpectralSolver};
use fracpile::spectrum::{eigenvalues, Spectrum};
use fracpile::LatticeSpec;
use num_complex::Complex64;
use proptest::prelude::*;

fn spectrum(d: usize, n: usize, alpha: f64) -> Spectrum {
    eigenvalues(&build_kernel(LatticeSpec::new(d, n).unwrap(), alpha, 1e-12).unwrap())
}

#[test]
fn gaussian_distance_is_a_quarter_of_the_polarized_covariance() {
    for (d, n) in [(1usize, 2usize), (1, 8), (2, 5), (2, 8)] {
        for alpha in [0.5, 1.0, 1.5, 3.0] {
            let sp = spectrum(d, n, alpha);
            let spec = sp.spec();
            let o = spec.point(spec.index_of(&vec![0; d]));
            let table = gaussian_distance_table(&SpectralSolver::new(&sp));
            for i in 0..spec.site_count() {
                let x = spec.point(i);
                let m = gaussian_distance_sq(&sp, &x).unwrap();
                let c = eta_covariance(&sp, &o, &o).unwrap() + eta_covariance(&sp, &x, &x).unwrap()
                    - 2.0 * eta_covariance(&sp, &o, &x).unwrap();
                assert!((m - 0.25 * c).abs() < 1e-10 * (1.0 + c), "d={d} n={n} alpha={alpha} x={:?}", x.coords);
                assert!((table[i] - m).abs() < 1e-10 * (1.0 + m));
                if x.is_origin() {
                    assert_eq!(m, 0.0);
                }
            }
        }
    }
}

#[test]
fn gaussian_distance_matches_sample_increments() {
    let sp = spectrum(2, 8, 1.0);
    let spec = sp.spec();
    let solver = SpectralSolver::new(&sp);
    let o = spec.index_of(&[0, 0]);
    let x = spec.index_of(&[2, 1]);
    let reps = 4000u64;
    let sq: Vec<f64> = (0..reps)
        .map(|r| {
            let eta = solver.sample_eta_with(Weights::Gaussian, &mut seed_stream(77, r)).unwrap().eta;
            (eta[o] - eta[x]).powi(2)
        })
        .collect();
    let mean = sq.iter().sum::<f64>() / reps as f64;
    let se = (sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps * (reps - 1)) as f64).sqrt();
    let want = 4.0 * gaussian_distance_sq(&sp, &spec.point(x)).unwrap();
    assert!((mean - want).abs() < 3.0 * se, "{mean} vs {want} ± {se}");
}

#[test]
fn gaussian_distance_ratio_to_reference_is_bounded() {
    let n = 64;
    for alpha in [0.75, 1.0, 1.5] {
        let sp = spectrum(2, n, alpha);
        let spec = sp.spec();
        let table = gaussian_distance_table(&SpectralSolver::new(&sp));
        let mut ratios = Vec::new();
        for (i, m) in table.iter().enumerate() {
            let r = spec.point(i).norm();
            if (2.0..=n as f64 / 4.0).contains(&r) {
                ratios.push(m / psi_reference(2, alpha, n, r).unwrap().value);
            }
        }
        let hi = ratios.iter().copied().fold(0.0, f64::max);
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(lo > 0.0 && hi / lo < 5.0, "alpha={alpha}: {lo} .. {hi}");
    }
}

#[test]
fn reference_curves_are_nondecreasing() {
    for d in 1..=4 {
        for gamma in [0.5, 1.0, 1.5, 2.0] {
            let v: Vec<f64> = (2..200).map(|n| phi_reference(d, gamma, n).unwrap()).collect();
            assert!(v.windows(2).all(|w| w[1] >= w[0]), "d={d} gamma={gamma}");
        }
    }
}

#[test]
fn cell_integrals_sum_to_the_integral() {
    let spec = LatticeSpec::new(2, 7).unwrap();
    let f = TestFunction::new(vec![(vec![1, 0], Complex64::new(0.3, -0.2)), (vec![2, -3], Complex64::new(1.0, 0.5))])
        .unwrap();
    let cells = f.cell_integrals(spec).unwrap();
    let total: Complex64 = cells.iter().sum();
    assert!(total.norm() < 1e-15);
    // a mode with a zero component integrates to the cell side along that axis
    let g = TestFunction::mode(&[0, 1]).unwrap();
    let cells = g.cell_integrals(spec).unwrap();
    let x = spec.index_of(&[2, 3]);
    let h = 1.0 / 14.0;
    let want = (Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (3.0 / 7.0 + h))
        - Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (3.0 / 7.0 - h)))
        / Complex64::new(0.0, 2.0 * std::f64::consts::PI)
        * (2.0 * h);
    assert!((cells[x] - want).norm() < 1e-16);
}

#[test]
fn pairing_is_linear_and_ignores_constants() {
    let spec = LatticeSpec::new(2, 9).unwrap();
    let fs = FieldSpec::with_constant(2, 1.2, 3.0, 0.0).unwrap();
    let f = TestFunction::mode(&[1, 2]).unwrap();
    let g = TestFunction::mode(&[-1, 0]).unwrap();
    let fg = TestFunction::new(vec![(vec![1, 2], Complex64::new(1.0, 0.0)), (vec![-1, 0], Complex64::new(2.0, 0.0))])
        .unwrap();
    let u: Vec<f64> = (0..81).map(|i| ((i * 7 % 13) as f64).sin()).collect();
    let v: Vec<f64> = (0..81).map(|i| (i as f64 * 0.3).cos()).collect();
    let p = |w: &[f64], t: &TestFunction| pair_field(w, spec, t, &fs).unwrap();
    assert!(p(&vec![4.2; 81], &f).norm() < 1e-13);
    assert!((p(&u, &fg) - p(&u, &f) - p(&u, &g) * 2.0).norm() < 1e-13);
    let uv: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 2.0 * a - b).collect();
    assert!((p(&uv, &f) - (p(&u, &f) * 2.0 - p(&v, &f))).norm() < 1e-13);
    let shifted: Vec<f64> = u.iter().map(|a| a + 10.0).collect();
    assert!((p(&shifted, &f) - p(&u, &f)).norm() < 1e-12);
}

#[test]
fn pairing_converges_to_the_integral() {
    // U(z) = exp(cos 2πz): ∫ U(z) e^{2πiz} dz = I_1(1)
    let i1 = 0.565_159_103_992_485_f64;
    let mut prev = f64::INFINITY;
    for n in [8usize, 16, 32, 64, 128] {
        let spec = LatticeSpec::new(1, n).unwrap();
        let fs = FieldSpec::with_constant(1, 0.5, 1.0, 0.0).unwrap();
        assert_eq!(fs.a_of_n(n), 1.0);
        let u: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * spec.point(i).coords[0] as f64 / n as f64).cos().exp())
            .collect();
        let got = pair_field(&u, spec, &TestFunction::mode(&[1]).unwrap(), &fs).unwrap();
        let err = (got - Complex64::new(i1, 0.0)).norm();
        assert!(err < 1.0 / n as f64, "n={n}: {err}");
        assert!(err < prev);
        prev = err;
    }
}

#[test]
fn single_mode_limit_variance() {
    for gamma in [0.5, 1.0, 2.0] {
        let f = TestFunction::mode(&[1, 2]).unwrap();
        let v = limit_covariance(&f, &f, gamma).unwrap();
        assert!((v.re - 5f64.powf(-gamma)).abs() < 1e-15 && v.im == 0.0);
    }
    let f = TestFunction::new(vec![(vec![1], Complex64::new(0.5, 0.0)), (vec![-1], Complex64::new(0.5, 0.0))]).unwrap();
    assert!((limit_covariance(&f, &f, 1.0).unwrap().re - 0.5).abs() < 1e-15);
}

#[test]
fn mode_variances_follow_the_limit_shape() {
    // Var⟨Ξ_n, φ_ν⟩·‖ν‖^{2γ} should not depend on ν and should be close to 1
    let n = 32;
    let alpha = 1.0;
    let sp = spectrum(2, n, alpha);
    let solver = SpectralSolver::new(&sp);
    let spec = sp.spec();
    let fs = FieldSpec::new(2, alpha).unwrap();
    let modes = [[1i64, 0], [0, 1], [1, 1], [2, 0]];
    let reps = 3000u64;
    let mut vars = Vec::new();
    for nu in modes {
        let f = TestFunction::mode(&nu).unwrap();
        let cells = f.cell_integrals(spec).unwrap();
        let xs: Vec<Complex64> = (0..reps)
            .map(|r| {
                let eta = solver.sample_eta_with(Weights::Gaussian, &mut seed_stream(5, r)).unwrap().eta;
                fracpile::fields::pair_with_cells(&min_normalize(&eta), &cells, spec, &fs).unwrap()
            })
            .collect();
        let var = xs.iter().map(|x| x.norm_sqr()).sum::<f64>() / reps as f64;
        vars.push(var * (nu[0] * nu[0] + nu[1] * nu[1]) as f64);
    }
    let hi = vars.iter().copied().fold(0.0, f64::max);
    let lo = vars.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(hi / lo < 1.2, "{vars:?}");
    assert!(vars.iter().all(|v| (0.5..2.0).contains(v)), "{vars:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn distance_is_symmetric_and_nonnegative(n in 2usize..10, alpha in 0.3f64..2.5, i in 0usize..100) {
        let sp = spectrum(2, n, alpha);
        let spec = sp.spec();
        let x = spec.point(i % spec.site_count());
        let neg = spec.point(spec.negated_index(i % spec.site_count()));
        let a = gaussian_distance_sq(&sp, &x).unwrap();
        let b = gaussian_distance_sq(&sp, &neg).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }
}
