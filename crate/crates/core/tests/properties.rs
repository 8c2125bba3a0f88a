use std::sync::Arc;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use effhyp::bezout::{bezout_matrix, spectral};
use effhyp::cubic::{discriminant, is_hyperbolic, roots, CubicSymbol, Multiplicity};
use effhyp::discriminant::{delta_of_t, nu_roots, psi_from, verify_lower_bound, Backend, C1};
use effhyp::report::Grid;
use effhyp::solver::{integrate, integrate_mode, integrate_mode_fixed, reduce, scalar, ModelProblem};
use effhyp::symbols::{builtin, builtin_unchecked, hamilton_spectrum, localize, FamilyName, FamilyParams, LocalizedFamily, TriplePoint};
use effhyp::weights::PointWeights;

fn rel(x: f64, y: f64) -> f64 {
    (x - y).abs() / x.abs().max(y.abs()).max(1e-300)
}

fn example16() -> LocalizedFamily {
    let f = builtin(FamilyName::Example16, &FamilyParams::default()).unwrap();
    localize(&f, 8.0, 64.0, &[1.0]).unwrap()
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn vieta_relations(a in -1e3f64..1e3, b in -1e3f64..1e3) {
        let r = roots(CubicSymbol::new(a, b), 1e-9).unwrap().roots;
        let prod = r[0] * r[1] * r[2];
        let pairs = r[0] * r[1] + r[0] * r[2] + r[1] * r[2];
        let scale = a.abs().max(b.abs().powf(2.0 / 3.0)).max(1e-12);
        prop_assert!((prod - b).norm() <= 1e-9 * b.abs().max(scale.powf(1.5)));
        prop_assert!((pairs + a).norm() <= 1e-9 * scale);
    }

    #[test]
    fn roots_recover_a_real_triple(r1 in -10f64..10.0, r2 in -10f64..10.0) {
        let r3 = -r1 - r2;
        let a = -(r1 * r2 + r1 * r3 + r2 * r3);
        let b = r1 * r2 * r3;
        let got = roots(CubicSymbol::new(a, b), 1e-9).unwrap();
        let mut want = [r1, r2, r3];
        want.sort_by(f64::total_cmp);
        let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (g, w) in got.roots.iter().zip(want) {
            // a double root is only determined to about sqrt(eps)
            let sep = want.iter().filter(|&&o| o != w).map(|o| (o - w).abs()).fold(f64::INFINITY, f64::min);
            let tol = if sep < 1e-4 * scale { 1e-7 } else { 1e-9 };
            prop_assert!((g - w).norm() <= tol * scale, "{:?} vs {:?}", got.roots, want);
        }
    }

    #[test]
    fn bezout_determinant_and_trace(a in -2f64..2.0, b in -2f64..2.0) {
        let s = bezout_matrix(a, b);
        let delta = discriminant(CubicSymbol::new(a, b)).unwrap();
        let scale = 4.0 * a.abs().powi(3) + 27.0 * b * b;
        prop_assert!((s.det() - delta).abs() <= 1e-12 * scale.max(1e-300));
        prop_assert_eq!(s.trace(), 3.0 + 2.0 * a + a * a);
    }

    #[test]
    fn bezout_spectrum_on_hyperbolic_region(a in 1e-6f64..0.05, s in -1f64..1.0) {
        let b = s * 2.0 / (3.0 * 3f64.sqrt()) * a.powf(1.5);
        let m = bezout_matrix(a, b);
        let d = spectral(&m).unwrap();
        prop_assert!(rel(d.lambda.iter().sum(), m.trace()) <= 1e-12);
        prop_assert!(d.lambda[0] <= 2.0 * a && 2.0 * a <= d.lambda[2]);

        let flipped = spectral(&bezout_matrix(a, -b)).unwrap();
        for j in 0..3 {
            prop_assert!((flipped.lambda[j] - d.lambda[j]).abs() <= 1e-15 * (1.0 + d.lambda[j].abs()));
            let sign = [1.0, -1.0, 1.0];
            let dot: f64 = (0..3).map(|i| sign[i] * d.t[i][j] * flipped.t[i][j]).sum();
            prop_assert!((dot.abs() - 1.0).abs() <= 1e-9, "column {} overlap {}", j, dot);
        }
    }

    #[test]
    fn hamilton_spectrum_comes_in_pairs(a2 in 0.2f64..3.0, b3 in -1f64..1.0, e in 0.5f64..2.0) {
        let params = FamilyParams { a2, b3, e_scale: e, ..FamilyParams::default() };
        let f = builtin_unchecked(FamilyName::Bbp, &params);
        let r = hamilton_spectrum(&f, &TriplePoint::at(vec![0.0], vec![1.0]), 1e-5).unwrap();
        for z in &r.eigenvalues {
            let partner = r.eigenvalues.iter().map(|w| (w + z).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(partner <= 1e-8, "{:?}", r.eigenvalues);
        }
    }

    #[test]
    fn monic_factor_reconstructs_discriminant(x in -0.5f64..0.5, eps in 0.01f64..0.2) {
        let lf = example16();
        let nu = nu_roots(&lf, &[x], &[1.0], eps, 1.0, Backend::Polynomial).unwrap();
        let cof = nu.cofactor.clone().unwrap();
        let (xs, xis) = ([x], [1.0]);
        let delta = delta_of_t(&lf, &xs, &xis, eps);
        let probes: Vec<f64> = (0..20).map(|k| -1.0 + 2.0 * k as f64 / 19.0).collect();
        let scale = probes.iter().map(|&t| delta(t).abs()).fold(0.0, f64::max);
        for &t in &probes {
            let e = cof.iter().rev().fold(0.0, |acc, c| acc * t + c);
            prop_assert!(e > 0.0);
            prop_assert!((e * nu.delta_bar(t) - delta(t)).abs() <= 1e-8 * scale, "t={}", t);
        }
    }

    #[test]
    fn psi_vanishes_off_the_cutoff(x in -0.5f64..0.5, eps in 0.01f64..0.2) {
        let lf = example16();
        let nu = nu_roots(&lf, &[x], &[1.0], eps, 1.0, Backend::Auto).unwrap();
        let psi = psi_from(&nu);
        if nu.a_cap1() >= 2.0 * C1 * nu.rho {
            prop_assert_eq!(psi, 0.0);
        }
        prop_assert!(psi.abs() <= nu.max_abs());
    }

    #[test]
    fn lower_bound_is_monotone_in_c_bar(c_bar in 1e-3f64..0.5, shrink in 0.1f64..1.0) {
        let lf = example16();
        let grid = Grid::line((0.0, 0.5, 25), (-0.5, 0.5, 11), 1.0);
        let strong = verify_lower_bound(&lf, &grid, 0.05, c_bar);
        let weak = verify_lower_bound(&lf, &grid, 0.05, c_bar * shrink);
        prop_assert!(weak.violating_points.len() <= strong.violating_points.len());
    }

    #[test]
    fn weight_definitions(
        rho in 1e-6f64..1.0,
        psi in -0.2f64..0.2,
        bracket in 1f64..1e4,
        m in 1f64..16.0,
        t in 1e-4f64..0.5,
    ) {
        let pw = PointWeights { rho, psi, bracket, m };
        let v = pw.at(t);
        prop_assert!(v.omega >= (t - psi).abs());
        prop_assert!(v.omega >= pw.floor().sqrt());
        if t < psi {
            prop_assert!(rel(v.phi * (v.omega + psi - t), pw.floor()) <= 1e-12);
        }
        prop_assert!(v.kappa >= 2.0 / (t * v.omega).sqrt() * (1.0 - 1e-15));
        let later = t * 1.001;
        prop_assert!(later * pw.at(later).phi > t * v.phi);
    }
}

#[test]
fn hyperbolicity_matches_real_roots() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for _ in 0..100_000 {
        let a: f64 = rng.gen_range(-10.0..10.0);
        let b: f64 = rng.gen_range(-10.0..10.0);
        let c = CubicSymbol::new(a, b);
        let d = discriminant(c).unwrap();
        if d.abs() <= 1e-10 * (4.0 * a.abs().powi(3) + 27.0 * b * b) {
            continue;
        }
        let real = roots(c, 1e-9).unwrap().multiplicity_class != Multiplicity::ComplexPair;
        assert_eq!(is_hyperbolic(c, 0.0).unwrap(), real, "a={a} b={b}");
        checked += 1;
    }
    assert!(checked > 99_000);
}

#[test]
fn localization_constants() {
    let lf = example16();
    let xs: Vec<Vec<f64>> = (0..21).map(|k| vec![-0.5 + 0.05 * k as f64]).collect();
    let xis: Vec<Vec<f64>> = [1.0, 10.0, 100.0].iter().map(|&v| vec![v]).collect();
    let g = lf.glaeser_constant(&xs, &xis);
    assert!(g.is_finite() && g > 0.0);
    let ts: Vec<f64> = (0..26).map(|k| 0.02 * k as f64).collect();
    assert!(lf.dm_over_am_constant(&ts, &xs, &xis) > 0.0);
}

#[test]
fn psi_is_of_order_rho() {
    let lf = example16();
    let mut delta: f64 = 0.0;
    for eps in [0.1, 0.05, 0.01] {
        for k in 0..101 {
            let x = -0.5 + 0.01 * k as f64;
            let nu = nu_roots(&lf, &[x], &[1.0], eps, 1.0, Backend::Auto).unwrap();
            delta = delta.max(psi_from(&nu).abs() / nu.rho);
        }
    }
    eprintln!("fitted psi/rho {delta}");
    assert!(delta < 4.0, "delta = {delta}");
}

#[test]
fn psi_derivative_is_controlled_by_rho() {
    let lf = example16();
    let eps = 0.05;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..41 {
        let x = -0.5 + 0.025 * k as f64;
        let p = |x: f64| psi_from(&nu_roots(&lf, &[x], &[1.0], eps, 1.0, Backend::Auto).unwrap());
        let nu = nu_roots(&lf, &[x], &[1.0], eps, 1.0, Backend::Auto).unwrap();
        let dx = (p(x + h) - p(x - h)) / (2.0 * h);
        worst = worst.max(dx.abs() / nu.rho.sqrt());
    }
    eprintln!("fitted derivative constant {worst}");
    assert!(worst.is_finite() && worst < 10.0, "C = {worst}");
}

fn problem() -> ModelProblem {
    let lf = example16();
    ModelProblem::regularized(&lf, &[0.1], 8).unwrap()
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn integration_is_linear(
        u in prop::array::uniform6(-1f64..1.0),
        w in prop::array::uniform6(-1f64..1.0),
        alpha in -2f64..2.0,
        beta in -2f64..2.0,
        xi in 0i64..8,
    ) {
        let p = problem();
        let k = p.bracket(xi as f64);
        let u0 = reduce(k, c(u[0], u[1]), c(u[2], u[3]), c(u[4], u[5]));
        let w0 = reduce(k, c(w[0], w[1]), c(w[2], w[3]), c(w[4], w[5]));
        let mix: [Complex64; 3] = std::array::from_fn(|i| u0[i] * alpha + w0[i] * beta);
        let times = [0.0, 0.25, 0.5];
        let rtol = 1e-10;
        let su = integrate_mode(&p, xi, u0, None, &times, rtol).unwrap();
        let sw = integrate_mode(&p, xi, w0, None, &times, rtol).unwrap();
        let sm = integrate_mode(&p, xi, mix, None, &times, rtol).unwrap();
        for j in 0..times.len() {
            let scale = effhyp::ode::norm(&sm[j]).max(effhyp::ode::norm(&su[j])).max(effhyp::ode::norm(&sw[j]));
            for i in 0..3 {
                let want = su[j][i] * alpha + sw[j][i] * beta;
                prop_assert!((sm[j][i] - want).norm() <= 10.0 * rtol * scale * (alpha.abs() + beta.abs() + 1.0));
            }
        }
    }

    #[test]
    fn permuting_modes_permutes_outputs(seed in 0u64..1000) {
        let p = problem();
        let modes: Vec<i64> = (-8..=8).collect();
        let k = |m: i64| p.bracket(m as f64);
        let u0: Vec<_> = modes.iter().map(|&m| reduce(k(m), c(1.0, 0.0), c(0.5, -0.1), c(0.0, 0.2))).collect();
        let mut order: Vec<usize> = (0..modes.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let pm: Vec<i64> = order.iter().map(|&i| modes[i]).collect();
        let pu: Vec<_> = order.iter().map(|&i| u0[i]).collect();
        let times = [0.0, 0.2, 0.4];
        let a = integrate(&p, &modes, &u0, None, &times, 1e-9).unwrap();
        let b = integrate(&p, &pm, &pu, None, &times, 1e-9).unwrap();
        for (slot, &i) in order.iter().enumerate() {
            prop_assert_eq!(&b.states[slot], &a.states[i]);
        }
    }
}

#[test]
fn real_data_stays_conjugate_symmetric() {
    let lf = example16();
    let base = ModelProblem::regularized(&lf, &[0.1], 8).unwrap();
    let times = [0.0, 0.1, 0.3, 0.5];
    for xi in 1..=8i64 {
        let k = base.bracket(xi as f64);
        let data = reduce(k, c(1.0, 0.0), c(-0.4, 0.0), c(0.3, 0.0));
        let plus = integrate_mode(&base, xi, data, None, &times, 1e-12).unwrap();
        let minus = integrate_mode(&base, -xi, data, None, &times, 1e-12).unwrap();
        for (p, m) in plus.iter().zip(&minus) {
            let (up, _, _) = scalar(k, p);
            let (um, _, _) = scalar(k, m);
            assert!((up - um.conj()).norm() <= 1e-9 * up.norm().max(1.0), "xi={xi}: {up} vs {um}");
        }
    }
}

#[test]
fn fixed_step_convergence_matches_design_order() {
    let p = ModelProblem::from_principal("smooth", Arc::new(|t, _| (1.0 + t, 0.2 * t)), 1.0, 4);
    let xi = 4;
    let k = p.bracket(xi as f64);
    let u0 = reduce(k, c(1.0, 0.0), c(0.0, 1.0), c(0.5, 0.0));
    let reference = integrate_mode(&p, xi, u0, None, &[0.0, 1.0], 1e-12).unwrap()[1];
    let err = |steps: usize| {
        let y = integrate_mode_fixed(&p, xi, u0, 0.0, 1.0, steps);
        effhyp::ode::norm(&std::array::from_fn(|i| y[i] - reference[i]))
    };
    let ratio = err(40) / err(80);
    assert!((32.0 / 4.0..=32.0 * 4.0).contains(&ratio), "ratio {ratio}");
}
