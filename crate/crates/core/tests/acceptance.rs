//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line;
//! the process exits non-zero if any fails.

use std::path::Path;
use std::process::Command as Process;
use std::time::{Duration, Instant};

use num::rational::BigRational;
use num::ToPrimitive;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use effhyp::bezout::{
    bezout_matrix, char_poly, hyperbolic_grid, max_abs, reduced_system, spectral, verify_eigen_bounds,
};
use effhyp::discriminant::{verify_lower_bound, verify_nu_rho, C_BAR};
use effhyp::report::{linspace, Grid};
use effhyp::solver::{
    apriori_check, energy_trace, integrate, integrate_mode, loss_sweep, reduce, scalar, ModelProblem, Trajectory,
};
use effhyp::symbols::{builtin, find_triple_points, hamilton_spectrum, localize, FamilyName, FamilyParams, ValidationGrid};
use effhyp::weights::{build, check_kappa_bounds, check_weight_identity, WeightParams};

type Outcome = Result<String, String>;

fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

fn samples(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (rng.gen_range(0.0..=1.0), rng.gen_range(-1.0..=1.0))).collect()
}

/// `4 a^3 - 27 b^2` in exact rational arithmetic, rounded once.
fn delta_exact(a: f64, b: f64) -> f64 {
    let (a, b) = (exact(a), exact(b));
    let four = BigRational::from_integer(4.into());
    let tw7 = BigRational::from_integer(27.into());
    (four * &a * &a * &a - tw7 * &b * &b).to_f64().unwrap()
}

fn determinant_identity() -> Outcome {
    let pts = samples(10_000, 1);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for &(a, b) in &pts {
        let want = delta_exact(a, b);
        let got = bezout_matrix(a, b).det();
        worst = worst.max((got - want).abs() / want.abs().max(f64::MIN_POSITIVE));
    }
    let elapsed = start.elapsed();
    let detail = format!("max relative error {worst:.2e} over 1e4 samples in {elapsed:?}");
    if worst <= 1e-12 && elapsed < Duration::from_secs(1) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Coefficients of `det(lambda I - S)` from the principal minors, exactly.
fn char_poly_exact(a: f64, b: f64) -> [f64; 3] {
    let s = bezout_matrix(a, b).s;
    let m: Vec<Vec<BigRational>> = s.iter().map(|r| r.iter().map(|&v| exact(v)).collect()).collect();
    let tr = &m[0][0] + &m[1][1] + &m[2][2];
    let minor = |i: usize, j: usize| &m[i][i] * &m[j][j] - &m[i][j] * &m[j][i];
    let e2 = minor(0, 1) + minor(0, 2) + minor(1, 2);
    let det = &m[0][0] * minor(1, 2) - &m[0][1] * (&m[1][0] * &m[2][2] - &m[1][2] * &m[2][0])
        + &m[0][2] * (&m[1][0] * &m[2][1] - &m[1][1] * &m[2][0]);
    [(-tr).to_f64().unwrap(), e2.to_f64().unwrap(), (-det).to_f64().unwrap()]
}

fn characteristic_polynomial() -> Outcome {
    let unit = char_poly(&bezout_matrix(1.0, 0.0)).map_err(|e| e.to_string())?;
    if unit != [-6.0, 10.0, -4.0] {
        return Err(format!("(1, 0) gives {unit:?}"));
    }
    let mut worst: f64 = 0.0;
    for (a, b) in samples(10_000, 1) {
        let got = char_poly(&bezout_matrix(a, b)).map_err(|e| format!("({a}, {b}): {e}"))?;
        let want = char_poly_exact(a, b);
        for k in 0..3 {
            worst = worst.max((got[k] - want[k]).abs() / want[k].abs().max(1.0));
        }
    }
    let detail = format!("routes agree on 1e4 samples, max deviation from exact {worst:.2e}, (1,0) -> [-6, 10, -4]");
    if worst <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn eigenvalue_bounds() -> Outcome {
    let grid = hyperbolic_grid(0.05, 200, 200);
    let start = Instant::now();
    let r = verify_eigen_bounds(&grid, 100.0);
    let elapsed = start.elapsed();
    let detail = format!(
        "K_fit = {:.4}, {} violations at K = 100, {elapsed:?}",
        r.k_fit, r.violations
    );
    if r.passed() && r.k_fit <= 100.0 && elapsed < Duration::from_secs(10) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn diagonalizer_quality() -> Outcome {
    let (mut orth, mut diag, mut sym): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (a, b) in hyperbolic_grid(0.05, 200, 200) {
        let s = bezout_matrix(a, b);
        let d = spectral(&s).map_err(|e| format!("({a}, {b}): {e}"))?;
        orth = orth.max(d.orthogonality_residual());
        diag = diag.max(d.diagonal_residual(&s) / (1.0 + max_abs(&s.s)));
        let r = reduced_system(a, b).map_err(|e| format!("({a}, {b}): {e}"))?;
        sym = sym.max(r.symmetry_residual());
    }
    let detail = format!("orthogonality {orth:.2e}, scaled diagonal {diag:.2e}, symmetry {sym:.2e}");
    if orth <= 1e-10 && diag <= 1e-10 && sym <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn example16_grid() -> Grid {
    Grid::line((0.0, 0.5, 200), (-0.5, 0.5, 101), 1.0)
}

fn example16() -> effhyp::symbols::LocalizedFamily {
    let f = builtin(FamilyName::Example16, &FamilyParams::default()).unwrap();
    localize(&f, 8.0, 64.0, &[1.0]).unwrap()
}

fn discriminant_lower_bound() -> Outcome {
    let lf = example16();
    let grid = example16_grid();
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for eps in [0.1, 0.05, 0.01] {
        let r = verify_lower_bound(&lf, &grid, eps, C_BAR);
        ok &= r.passed() && r.worst_margin >= -1e-12;
        parts.push(format!(
            "eps={eps}: {} violations, fitted {:.3}",
            r.violating_points.len(),
            r.fitted_constant
        ));
    }
    let elapsed = start.elapsed();
    let detail = format!("{} in {elapsed:?}", parts.join("; "));
    if ok && elapsed < Duration::from_secs(30) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn root_size() -> Outcome {
    let lf = example16();
    let grid = example16_grid();
    let mut parts = Vec::new();
    let mut ok = true;
    for eps in [0.1, 0.05, 0.01] {
        let r = verify_nu_rho(&lf, &grid, eps);
        ok &= r.passed();
        parts.push(format!("eps={eps}: {} violations", r.violating_points.len()));
    }
    let detail = parts.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn hamilton_pair() -> Outcome {
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for name in [FamilyName::TricomiProduct, FamilyName::Example16] {
        let f = builtin(name, &FamilyParams::default()).unwrap();
        let grid: Vec<_> = ValidationGrid::default()
            .points(1)
            .into_iter()
            .filter(|(_, xi)| xi[0] > 0.0)
            .collect();
        let triples = find_triple_points(&f, &grid, 1e-12);
        if triples.is_empty() {
            return Err(format!("{}: no triple point", f.label));
        }
        for p in &triples {
            let h = 1e-4;
            let dta = (f.a(h, &p.x, &p.xi) - f.a(-h, &p.x, &p.xi)) / (2.0 * h);
            let r = hamilton_spectrum(&f, p, 1e-5).map_err(|e| e.to_string())?;
            let mut big: Vec<f64> = r.eigenvalues.iter().filter(|z| z.norm() > 1e-6).map(|z| z.re).collect();
            big.sort_by(f64::total_cmp);
            if big.len() != 2 || !r.nonzero_pair {
                return Err(format!("{} at x={:?}: eigenvalues {:?}", f.label, p.x, r.eigenvalues));
            }
            worst = worst.max((big[0] + dta.abs()).abs()).max((big[1] - dta.abs()).abs());
        }
        parts.push(format!("{}: {} triple points", f.label, triples.len()));
    }
    let detail = format!("{}; max deviation from +-d_t a {worst:.2e}", parts.join(", "));
    if worst <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn tricomi_weights() -> effhyp::weights::WeightField {
    let f = builtin(FamilyName::TricomiProduct, &FamilyParams::default()).unwrap();
    let lf = localize(&f, 8.0, 64.0, &[1.0]).unwrap();
    build(&lf, None, WeightParams::default()).unwrap()
}

fn weight_identity() -> Outcome {
    let w = tricomi_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..1000)
        .map(|_| {
            (
                rng.gen_range(1e-4..=0.5),
                vec![rng.gen_range(-0.5..=0.5)],
                vec![rng.gen_range(1.0..=256.0)],
            )
        })
        .collect();
    let r = check_weight_identity(&w, &pts).map_err(|e| e.to_string())?;
    let detail = format!(
        "analytic {:.2e}, finite difference {:.2e} over 1e3 points",
        r.analytic, r.finite_difference
    );
    if r.analytic <= 1e-12 && r.finite_difference <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn kappa_lambda_bound() -> Outcome {
    let w = tricomi_weights();
    let grid = Grid {
        ts: linspace(1e-4, 0.5, 60),
        xs: linspace(-0.5, 0.5, 21).into_iter().map(|x| vec![x]).collect(),
        xis: [1.0, 4.0, 16.0, 64.0, 256.0].iter().map(|&v| vec![v]).collect(),
    };
    let r = check_kappa_bounds(&w, w.lf.e_bar(), &grid);
    let detail = format!(
        "eps_bar = {:.4}, fitted C = {:.4}, {} + {} violations",
        r.eps_bar,
        r.c_fit,
        r.first.violating_points.len(),
        r.second.violating_points.len()
    );
    if r.c_fit < 10.0 && r.first.passed() && r.second.passed() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_relative_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    let mut worst: f64 = 0.0;
    for (x, y) in a.states.iter().zip(&b.states) {
        let scale = y.iter().map(effhyp::ode::norm).fold(0.0, f64::max);
        for (p, q) in x.iter().zip(y) {
            for i in 0..3 {
                worst = worst.max((p[i] - q[i]).norm() / scale);
            }
        }
    }
    worst
}

fn solver_correctness() -> Outcome {
    let start = Instant::now();
    let w = tricomi_weights();
    let p = ModelProblem::regularized(&w.lf, &[0.0], 64).map_err(|e| e.to_string())?;
    let modes = p.modes();
    let c = |r: f64| Complex64::new(r, 0.0);
    let u0: Vec<_> = modes
        .iter()
        .map(|&m| reduce(p.bracket(m as f64), c(1.0), c(0.3), c(-0.2)))
        .collect();
    let times = linspace(0.0, 0.5, 51);
    let run = integrate(&p, &modes, &u0, None, &times, 1e-10).map_err(|e| e.to_string())?;
    let reference = integrate(&p, &modes, &u0, None, &times, 1e-12).map_err(|e| e.to_string())?;
    let gap = max_relative_gap(&run, &reference);

    let flat = ModelProblem::from_principal("flat", std::sync::Arc::new(|_, _| (0.0, 0.0)), 64.0, 64);
    let (v0, v1, v2) = (Complex64::new(1.0, 0.5), Complex64::new(-2.0, 0.0), Complex64::new(0.25, 1.0));
    let mut quad: f64 = 0.0;
    for xi in [0i64, 7, 64] {
        let k = flat.bracket(xi as f64);
        let states = integrate_mode(&flat, xi, reduce(k, v0, v1, v2), None, &times, 1e-12).map_err(|e| e.to_string())?;
        for (t, s) in times.iter().zip(&states) {
            let want = v0 + v1 * *t + v2 * (t * t / 2.0);
            quad = quad.max((scalar(k, s).0 - want).norm() / want.norm().max(1.0));
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "{} modes: gap to rtol 1e-12 reference {gap:.2e}; quadratic case {quad:.2e}; {elapsed:?}",
        modes.len()
    );
    if gap <= 1e-8 && quad <= 1e-10 && elapsed < Duration::from_secs(30) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn energy_decay() -> Outcome {
    let w = tricomi_weights();
    let p = ModelProblem::regularized(&w.lf, &[0.0], 64).map_err(|e| e.to_string())?;
    let modes = p.modes();
    let c = |r: f64| Complex64::new(r, 0.0);
    let u0: Vec<_> = modes
        .iter()
        .map(|&m| reduce(p.bracket(m as f64), c(1.0), c(0.3), c(-0.2)))
        .collect();
    let mut times = vec![0.0];
    times.extend(linspace(1e-4, 8f64.powi(-4), 41));
    let mut run = integrate(&p, &modes, &u0, None, &times, 1e-12).map_err(|e| e.to_string())?;
    run.times.remove(0);
    for s in run.states.iter_mut() {
        s.remove(0);
    }
    let trace = energy_trace(&run, &p, &w, &[0.0]).map_err(|e| e.to_string())?;
    let ap = apriori_check(&run, &trace, &w, &[0.0], 1e-8).map_err(|e| e.to_string())?;
    let detail = format!(
        "worst relative increase {:.2e} over {} steps, E from {:.4e} to {:.4e}",
        ap.worst_increase,
        trace.e.len() - 1,
        trace.e[0],
        trace.e.last().unwrap()
    );
    if ap.nonincreasing {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn spearman_is_one(xs: &[f64], ys: &[f64]) -> bool {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0usize; v.len()];
        for (k, &i) in idx.iter().enumerate() {
            r[i] = k;
        }
        r
    };
    let distinct = ys.windows(2).all(|w| w[0] != w[1]);
    distinct && rank(xs) == rank(ys)
}

fn loss_trend() -> Outcome {
    let start = Instant::now();
    let strengths = [0.0, 0.5, 1.0, 2.0, 4.0];
    let modes: Vec<i64> = (1..=16).map(|k| 16 * k).collect();
    let mut exps = Vec::new();
    for e_scale in [1.0, 2.0] {
        let params = FamilyParams {
            e_scale,
            ..FamilyParams::default()
        };
        let f = builtin(FamilyName::Example16, &params).unwrap();
        let lf = localize(&f, 8.0, 64.0, &[1.0]).unwrap();
        let p = ModelProblem::regularized(&lf, &[0.0], 256).map_err(|e| e.to_string())?;
        let sweep = loss_sweep(&p, &strengths, &modes, 0.5, 101, 1e-8).map_err(|e| e.to_string())?;
        exps.push(sweep.rows.iter().map(|r| r.s).collect::<Vec<_>>());
    }
    let elapsed = start.elapsed();
    let (s1, s2) = (&exps[0], &exps[1]);
    let monotone = spearman_is_one(&strengths, s1);
    let detail = format!("s = {s1:.3?}; with doubled e_bar s(4) = {:.3}; {elapsed:?}", s2[4]);
    if monotone && s1[0] <= 0.2 && s2[4] < s1[4] && elapsed < Duration::from_secs(120) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const CONFIGS: &[(&str, &str)] = &[
    ("analyze", r#"{"command": "analyze", "family": {"name": "example16"}}"#),
    ("verify-discriminant", r#"{"command": "verify-discriminant", "family": {"name": "example16"}, "grid": {"t": [0, 0.5, 40], "x": [-0.5, 0.5, 21], "xi": 1}}"#),
    ("verify-bezout", r#"{"command": "verify-bezout", "bezout": {"na": 60, "nb": 60}}"#),
    ("verify-weights", r#"{"command": "verify-weights", "checks": {"identity_samples": 200}}"#),
    ("solve", r#"{"command": "solve", "solver": {"n_max": 16, "samples": 11}}"#),
    ("loss-sweep", r#"{"command": "loss-sweep", "family": {"name": "example16"}, "loss": {"modes": {"from": 16, "to": 64, "step": 16}, "samples": 41}}"#),
];

fn run_cli(cmd: &str, config: &Path, out: &Path) -> Result<(), String> {
    let status = Process::new(env!("CARGO_BIN_EXE_effhyp"))
        .args([cmd, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    match status.status.code() {
        Some(0) | Some(2) => Ok(()),
        code => Err(format!("{cmd} exited with {code:?}: {}", String::from_utf8_lossy(&status.stderr))),
    }
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (cmd, text) in CONFIGS {
        let config = dir.path().join(format!("{cmd}.json"));
        std::fs::write(&config, text).map_err(|e| e.to_string())?;
        let first = dir.path().join(format!("{cmd}-1"));
        let second = dir.path().join(format!("{cmd}-2"));
        run_cli(cmd, &config, &first)?;
        run_cli(cmd, &config, &second)?;
        let (a, b) = (csv_files(&first), csv_files(&second));
        if a.is_empty() || a != b {
            return Err(format!("{cmd}: CSV outputs differ"));
        }
        checked += a.len();
    }
    Ok(format!("{} commands, {checked} CSV files byte-identical across runs", CONFIGS.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("bezout determinant identity", determinant_identity),
        ("characteristic polynomial routes", characteristic_polynomial),
        ("bezout eigenvalue bounds", eigenvalue_bounds),
        ("diagonalizer quality", diagonalizer_quality),
        ("discriminant lower bound", discriminant_lower_bound),
        ("discriminant roots versus rho", root_size),
        ("hamilton pair", hamilton_pair),
        ("weight identity", weight_identity),
        ("kappa lambda1 bound", kappa_lambda_bound),
        ("solver correctness", solver_correctness),
        ("energy decay", energy_decay),
        ("loss of derivatives trend", loss_trend),
        ("cli determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
