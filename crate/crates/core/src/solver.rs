//! Per-mode solver for the third-order model operator on a periodic 1-D
//! lattice, reduced to `dU/dt = i(<xi> A + B) U + i F` with
//! `U = (D_t^2 u, <xi> D_t u, <xi>^2 u)` and `D_t = -i d/dt`.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::bezout::{bezout_matrix, spectral};
use crate::cubic::discriminant_unchecked;
use crate::error::{Error, Result};
use crate::ode::{norm, solve_adaptive, solve_fixed, OdeError, State, Tolerance};
use crate::symbols::LocalizedFamily;
use crate::weights::{PointWeights, WeightField};

/// `(t, xi) -> (a, b)` of the principal part.
pub type Principal = Arc<dyn Fn(f64, f64) -> (f64, f64) + Send + Sync>;
/// `(t, xi) -> value` for lower-order coefficients and forcing.
pub type Coefficient = Arc<dyn Fn(f64, f64) -> Complex64 + Send + Sync>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone)]
pub struct ModelProblem {
    principal: Principal,
    /// Coefficients of `D_t^2 u`, `<xi> D_t u` and `<xi>^2 u`.
    pub lower: [Option<Coefficient>; 3],
    /// Constant added to the `<xi> D_t u` coefficient.
    pub compensator: f64,
    pub gamma: f64,
    /// Modes `-n_max..=n_max`.
    pub n_max: i64,
    pub label: String,
}

impl std::fmt::Debug for ModelProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelProblem")
            .field("label", &self.label)
            .field("gamma", &self.gamma)
            .field("n_max", &self.n_max)
            .field("compensator", &self.compensator)
            .finish()
    }
}

fn check_dim(lf: &LocalizedFamily, x0: &[f64]) -> Result<()> {
    if lf.family().dim != 1 || x0.len() != 1 {
        return Err(Error::Domain("the solver works on one space dimension".into()));
    }
    Ok(())
}

impl ModelProblem {
    pub fn from_principal(label: impl Into<String>, principal: Principal, gamma: f64, n_max: i64) -> Self {
        ModelProblem {
            principal,
            lower: [None, None, None],
            compensator: 0.0,
            gamma,
            n_max,
            label: label.into(),
        }
    }

    /// Principal part `tau^3 - a_M tau - b` of the localized family frozen at `x0`.
    pub fn regularized(lf: &LocalizedFamily, x0: &[f64], n_max: i64) -> Result<Self> {
        check_dim(lf, x0)?;
        let (lf2, x) = (lf.clone(), x0.to_vec());
        let p: Principal = Arc::new(move |t, xi| (lf2.a_m(t, &x, &[xi]), lf2.b(t, &x, &[xi])));
        Ok(Self::from_principal(format!("{} regularized", lf.family().label), p, lf.gamma, n_max))
    }

    /// The unregularized `tau^3 - a tau - b` at the localized coordinates.
    pub fn raw(lf: &LocalizedFamily, x0: &[f64], n_max: i64) -> Result<Self> {
        check_dim(lf, x0)?;
        let (lf2, x) = (lf.clone(), lf.y(x0));
        let p: Principal = Arc::new(move |t, xi| {
            let eta = lf2.eta(&[xi]);
            (lf2.family().a(t, &x, &eta), lf2.family().b(t, &x, &eta))
        });
        Ok(Self::from_principal(format!("{} raw", lf.family().label), p, lf.gamma, n_max))
    }

    pub fn with_lower(mut self, slot: usize, c: Coefficient) -> Self {
        self.lower[slot] = Some(c);
        self
    }

    /// Adds `-2 M e_bar` to the `<xi> D_t u` coefficient.
    pub fn with_compensator(mut self, m: f64, e_bar: f64) -> Self {
        self.compensator = -2.0 * m * e_bar;
        self
    }

    pub fn modes(&self) -> Vec<i64> {
        (-self.n_max..=self.n_max).collect()
    }

    pub fn bracket(&self, xi: f64) -> f64 {
        (self.gamma * self.gamma + xi * xi).sqrt()
    }

    pub fn principal(&self, t: f64, xi: f64) -> (f64, f64) {
        (self.principal)(t, xi)
    }

    fn lower_at(&self, t: f64, xi: f64) -> [Complex64; 3] {
        let mut out = [ZERO; 3];
        for (o, c) in out.iter_mut().zip(&self.lower) {
            if let Some(c) = c {
                *o = c(t, xi);
            }
        }
        out[1] += self.compensator;
        out
    }

    pub fn rhs(&self, t: f64, xi: f64, u: &State, f: Complex64) -> State {
        let k = self.bracket(xi);
        let (a, b) = self.principal(t, xi);
        let l = self.lower_at(t, xi);
        [
            I * (k * (a * u[1] + b * u[2]) + l[0] * u[0] + l[1] * u[1] + l[2] * u[2] + f),
            I * k * u[0],
            I * k * u[1],
        ]
    }

    /// `Delta(t, xi) >= -tol` at the given times and modes.
    pub fn check_hyperbolic(&self, times: &[f64], modes: &[i64], tol: f64) -> Result<()> {
        for &m in modes {
            for &t in times {
                let (a, b) = self.principal(t, m as f64);
                let d = discriminant_unchecked(a, b);
                if !(d >= -tol) {
                    return Err(Error::HyperbolicityViolation(d));
                }
            }
        }
        Ok(())
    }
}

/// `U = (D_t^2 u, <xi> D_t u, <xi>^2 u)` from `u`, `du/dt`, `d^2u/dt^2`.
pub fn reduce(bracket: f64, u0: Complex64, u1: Complex64, u2: Complex64) -> State {
    [-u2, -I * bracket * u1, bracket * bracket * u0]
}

/// Inverse of [`reduce`]: `(u, du/dt, d^2u/dt^2)`.
pub fn scalar(bracket: f64, v: &State) -> (Complex64, Complex64, Complex64) {
    (v[2] / (bracket * bracket), I * v[1] / bracket, -v[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub modes: Vec<i64>,
    pub times: Vec<f64>,
    /// `states[mode index][time index]`.
    pub states: Vec<Vec<State>>,
    /// Forcing at the output times, same layout, when present.
    pub forcing: Option<Vec<Vec<Complex64>>>,
    pub rtol: f64,
}

fn integration_error(mode: i64, e: OdeError) -> Error {
    match e {
        OdeError::StepUnderflow { t } => Error::Integration {
            mode,
            t,
            reason: "step size underflow".into(),
        },
        OdeError::Budget { t } => Error::Integration {
            mode,
            t,
            reason: "step budget exhausted".into(),
        },
    }
}

pub const MAX_STEPS: usize = 2_000_000;

/// One mode from `times[0]` through `times`.
pub fn integrate_mode(
    problem: &ModelProblem,
    xi: i64,
    u0: State,
    forcing: Option<&Coefficient>,
    times: &[f64],
    rtol: f64,
) -> Result<Vec<State>> {
    if !(1e-13..=1e-6).contains(&rtol) {
        return Err(Error::Domain(format!("rtol must lie in [1e-13, 1e-6], got {rtol}")));
    }
    let Some(&t0) = times.first() else {
        return Ok(vec![]);
    };
    let x = xi as f64;
    let f = |t: f64, u: &State| {
        let g = forcing.map_or(ZERO, |f| f(t, x));
        problem.rhs(t, x, u, g)
    };
    let tol = Tolerance {
        rtol,
        atol: 1e-3 * rtol * norm(&u0) + 1e-300,
    };
    solve_adaptive(f, t0, u0, times, tol, MAX_STEPS)
        .map(|(ys, _)| ys)
        .map_err(|e| integration_error(xi, e))
}

/// Fixed-step run of one mode, for convergence studies.
pub fn integrate_mode_fixed(problem: &ModelProblem, xi: i64, u0: State, t0: f64, t1: f64, steps: usize) -> State {
    let x = xi as f64;
    solve_fixed(|t, u| problem.rhs(t, x, u, ZERO), t0, u0, t1, steps)
}

/// Integrates every mode in `modes` from the data `u0[k]` at `times[0]`,
/// reporting the state at each of `times`.
pub fn integrate(
    problem: &ModelProblem,
    modes: &[i64],
    u0: &[State],
    forcing: Option<Coefficient>,
    times: &[f64],
    rtol: f64,
) -> Result<Trajectory> {
    if u0.len() != modes.len() {
        return Err(Error::Domain("one initial state per mode is required".into()));
    }
    if times.windows(2).any(|w| !(w[1] >= w[0])) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Domain("output times must be finite and ascending".into()));
    }
    problem.check_hyperbolic(times, modes, 1e-12)?;
    let states = modes
        .par_iter()
        .zip(u0.par_iter())
        .map(|(&m, &y)| integrate_mode(problem, m, y, forcing.as_ref(), times, rtol))
        .collect::<Result<Vec<_>>>()?;
    let forcing = forcing.map(|f| {
        modes
            .iter()
            .map(|&m| times.iter().map(|&t| f(t, m as f64)).collect())
            .collect()
    });
    Ok(Trajectory {
        modes: modes.to_vec(),
        times: times.to_vec(),
        states,
        forcing,
        rtol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub e: Vec<f64>,
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
    /// `(mode, max_t |U(t)| / |U(t_0)|)`.
    pub amplification: Vec<(i64, f64)>,
}

/// Per mode and time: `sum_j lambda_j (t phi)^{-2n} |V_j|^2` and `kappa`.
fn mode_energies(
    run: &Trajectory,
    problem: &ModelProblem,
    field: &WeightField,
    x0: &[f64],
    k: usize,
) -> Result<Vec<(f64, f64)>> {
    let xi = run.modes[k] as f64;
    let pw: PointWeights = field.point(x0, &[xi])?;
    let n = field.params.n;
    run.times
        .iter()
        .zip(&run.states[k])
        .map(|(&t, u)| {
            let (a, b) = problem.principal(t, xi);
            let d = spectral(&bezout_matrix(a, b))?;
            let v = pw.at(t);
            let w = (t * v.phi).powf(-2.0 * n);
            let mut s = 0.0;
            for j in 0..3 {
                let vj: Complex64 = (0..3).map(|i| u[i] * d.t[i][j]).sum();
                s += d.lambda[j] * vj.norm_sqr();
            }
            Ok((s * w, v.kappa))
        })
        .collect()
}

/// Weighted energies on the run's times, which must all be positive.
/// `E = exp(-theta t) sum lambda_j (t phi)^{-2n} |V_j|^2` with `V = T^T U`;
/// `E1` adds the factor `kappa`, `E2` has neither `kappa` nor the exponential.
pub fn energy_trace(run: &Trajectory, problem: &ModelProblem, field: &WeightField, x0: &[f64]) -> Result<EnergyTrace> {
    if run.times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Domain("energy times must be positive".into()));
    }
    let per_mode = (0..run.modes.len())
        .into_par_iter()
        .map(|k| mode_energies(run, problem, field, x0, k))
        .collect::<Result<Vec<_>>>()?;
    let nt = run.times.len();
    let (mut e, mut e1, mut e2) = (vec![0.0; nt], vec![0.0; nt], vec![0.0; nt]);
    for m in &per_mode {
        for (i, &(s, kappa)) in m.iter().enumerate() {
            e2[i] += s;
            e1[i] += kappa * s;
        }
    }
    for (i, &t) in run.times.iter().enumerate() {
        e[i] = (-field.params.theta * t).exp() * e2[i];
    }
    Ok(EnergyTrace {
        times: run.times.clone(),
        e,
        e1,
        e2,
        amplification: amplification(run),
    })
}

pub fn amplification(run: &Trajectory) -> Vec<(i64, f64)> {
    run.modes
        .iter()
        .zip(&run.states)
        .map(|(&m, s)| {
            let first = s.first().map(norm).unwrap_or(0.0);
            let top = s.iter().map(norm).fold(0.0, f64::max);
            (m, if first > 0.0 { top / first } else { f64::NAN })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriReport {
    /// Largest `(E(t_{k+1}) - E(t_k)) / E(t_k)`.
    pub worst_increase: f64,
    /// `E(t_{k+1}) <= (1 + slack) E(t_k)` at every step.
    pub nonincreasing: bool,
    pub slack: f64,
    /// Largest ratio of `E(t) + int exp(-theta s) E1` to
    /// `E(t_0) + int exp(-theta s) s sum (s phi)^{-2n} |f|^2`.
    pub ratio: f64,
}

pub fn apriori_check(
    run: &Trajectory,
    trace: &EnergyTrace,
    field: &WeightField,
    x0: &[f64],
    slack: f64,
) -> Result<AprioriReport> {
    let e = &trace.e;
    let mut worst = f64::NEG_INFINITY;
    for w in e.windows(2) {
        let inc = if w[0] > 0.0 { (w[1] - w[0]) / w[0] } else if w[1] > 0.0 { f64::INFINITY } else { 0.0 };
        worst = worst.max(inc);
    }
    let theta = field.params.theta;
    let n = field.params.n;
    let ts = &run.times;
    let mut forcing_density = vec![0.0; ts.len()];
    if let Some(f) = &run.forcing {
        for (k, fm) in f.iter().enumerate() {
            let pw = field.point(x0, &[run.modes[k] as f64])?;
            for (i, &t) in ts.iter().enumerate() {
                let w = (t * pw.at(t).phi).powf(-2.0 * n);
                forcing_density[i] += (-theta * t).exp() * t * w * fm[i].norm_sqr();
            }
        }
    }
    let (mut lhs_int, mut rhs_int) = (0.0, 0.0);
    let mut ratio = f64::NAN;
    for i in 0..ts.len() {
        if i > 0 {
            let dt = ts[i] - ts[i - 1];
            let g = |j: usize| (-theta * ts[j]).exp() * trace.e1[j];
            lhs_int += 0.5 * dt * (g(i) + g(i - 1));
            rhs_int += 0.5 * dt * (forcing_density[i] + forcing_density[i - 1]);
        }
        let rhs = e[0] + rhs_int;
        if rhs > 0.0 {
            let r = (e[i] + lhs_int) / rhs;
            ratio = if ratio.is_nan() { r } else { ratio.max(r) };
        }
    }
    Ok(AprioriReport {
        worst_increase: worst.max(0.0),
        nonincreasing: worst <= slack,
        slack,
        ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossRow {
    pub c: f64,
    /// Least-squares slope of `log g` against `log <xi>` on the upper half of the modes.
    pub s: f64,
    pub amplification: Vec<(i64, f64)>,
    pub failed_modes: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossSweep {
    pub rows: Vec<LossRow>,
}

impl LossSweep {
    pub fn exponents(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.c, r.s)).collect()
    }
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return f64::NAN;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// For each strength `c` the `<xi>^2 u` coefficient is set to `i c`, each mode
/// starts from `u = 1`, `du/dt = d^2u/dt^2 = 0`, and the growth exponent of
/// the amplification over `[0, t_end]` is fitted.
pub fn loss_sweep(
    template: &ModelProblem,
    strengths: &[f64],
    modes: &[i64],
    t_end: f64,
    samples: usize,
    rtol: f64,
) -> Result<LossSweep> {
    let times = crate::report::linspace(0.0, t_end, samples.max(2));
    let mut sorted = modes.to_vec();
    sorted.sort_by(|a, b| template.bracket(*a as f64).total_cmp(&template.bracket(*b as f64)));
    let upper: Vec<i64> = sorted[sorted.len() / 2..].to_vec();
    let mut rows = Vec::new();
    for &c in strengths {
        let p = template
            .clone()
            .with_lower(2, Arc::new(move |_, _| Complex64::new(0.0, c)));
        let results: Vec<Result<Vec<State>>> = sorted
            .par_iter()
            .map(|&m| {
                let k = p.bracket(m as f64);
                let u0 = reduce(k, Complex64::new(1.0, 0.0), ZERO, ZERO);
                integrate_mode(&p, m, u0, None, &times, rtol)
            })
            .collect();
        let mut amp = Vec::new();
        let mut failed = Vec::new();
        for (&m, r) in sorted.iter().zip(&results) {
            match r {
                Ok(states) => {
                    let first = norm(&states[0]);
                    let top = states.iter().map(norm).fold(0.0, f64::max);
                    amp.push((m, top / first));
                }
                Err(_) => failed.push(m),
            }
        }
        let fit: Vec<(f64, f64)> = amp
            .iter()
            .filter(|(m, g)| upper.contains(m) && g.is_finite())
            .map(|&(m, g)| (p.bracket(m as f64).ln(), g.ln()))
            .collect();
        rows.push(LossRow {
            c,
            s: slope(&fit),
            amplification: amp,
            failed_modes: failed,
        });
    }
    Ok(LossSweep { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(a: f64, b: f64) -> ModelProblem {
        ModelProblem::from_principal("constant", Arc::new(move |_, _| (a, b)), 1.0, 4)
    }

    #[test]
    fn reduce_examples() {
        let one = Complex64::new(1.0, 0.0);
        assert_eq!(reduce(3.0, one, ZERO, ZERO), [ZERO, ZERO, Complex64::new(9.0, 0.0)]);
        let u = reduce(2.0, one, Complex64::new(0.5, 0.0), Complex64::new(-1.0, 0.0));
        let (a, b, c) = scalar(2.0, &u);
        assert!((a - one).norm() < 1e-15 && (b - 0.5).norm() < 1e-15 && (c + 1.0).norm() < 1e-15);
    }

    #[test]
    fn zero_data_stays_zero() {
        let p = constant(1.0, 0.0);
        let run = integrate(&p, &[0, 3], &[[ZERO; 3]; 2], None, &[0.0, 0.5, 1.0], 1e-10).unwrap();
        assert!(run.states.iter().flatten().all(|s| s.iter().all(|z| *z == ZERO)));
    }

    #[test]
    fn quadratic_solution_without_principal_part() {
        let p = constant(0.0, 0.0);
        let (u0, u1, u2) = (Complex64::new(1.0, 0.5), Complex64::new(-2.0, 0.0), Complex64::new(0.25, 1.0));
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.05).collect();
        for xi in [0i64, 5, 16] {
            let k = p.bracket(xi as f64);
            let states = integrate_mode(&p, xi, reduce(k, u0, u1, u2), None, &times, 1e-12).unwrap();
            for (t, s) in times.iter().zip(&states) {
                let (u, _, _) = scalar(k, s);
                let want = u0 + u1 * *t + u2 * (t * t / 2.0);
                assert!((u - want).norm() <= 1e-10 * want.norm().max(1.0), "xi={xi} t={t}");
            }
        }
    }

    #[test]
    fn constant_coefficient_propagator() {
        // roots of tau^3 - tau are -1, 0, 1: u = sum c_k exp(i tau_k <xi> t)
        let p = constant(1.0, 0.0);
        let xi = 3i64;
        let k = p.bracket(xi as f64);
        let cs = [Complex64::new(0.3, 0.0), Complex64::new(1.0, -0.2), Complex64::new(-0.5, 0.1)];
        let taus = [-1.0, 0.0, 1.0];
        let u_at = |t: f64, d: u32| -> Complex64 {
            cs.iter()
                .zip(taus)
                .map(|(c, tau)| c * (I * tau * k).powu(d) * (I * tau * k * t).exp())
                .sum()
        };
        let u0 = reduce(k, u_at(0.0, 0), u_at(0.0, 1), u_at(0.0, 2));
        let times = [0.0, 0.3, 0.7, 1.0];
        let states = integrate_mode(&p, xi, u0, None, &times, 1e-12).unwrap();
        for (t, s) in times.iter().zip(&states) {
            let want = reduce(k, u_at(*t, 0), u_at(*t, 1), u_at(*t, 2));
            for i in 0..3 {
                assert!((s[i] - want[i]).norm() <= 1e-9 * norm(&want), "t={t}");
            }
        }
    }

    #[test]
    fn rtol_range_is_enforced() {
        let p = constant(1.0, 0.0);
        assert!(integrate_mode(&p, 0, [ZERO; 3], None, &[0.0, 1.0], 1e-3).is_err());
    }
}
