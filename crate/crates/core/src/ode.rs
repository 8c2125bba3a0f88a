//! Dormand-Prince 5(4) for small complex linear systems, adaptive with PI
//! step control and continuous output, or with a fixed step.

use num_complex::Complex64;

pub type State = [Complex64; 3];

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

fn axpy(y: &State, h: f64, ks: &[State], w: &[f64]) -> State {
    let mut out = *y;
    for (k, &c) in ks.iter().zip(w) {
        if c != 0.0 {
            for i in 0..3 {
                out[i] += k[i] * (h * c);
            }
        }
    }
    out
}

pub fn norm(y: &State) -> f64 {
    y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// One step; returns the new state, the stage derivatives and the error estimate.
fn step<F: Fn(f64, &State) -> State>(f: &F, t: f64, y: &State, k1: State, h: f64) -> (State, [State; 7], State) {
    let mut ks = [[Complex64::new(0.0, 0.0); 3]; 7];
    ks[0] = k1;
    for s in 1..7 {
        let ys = axpy(y, h, &ks[..s], &A[s][..s]);
        ks[s] = f(t + C[s] * h, &ys);
    }
    let y1 = axpy(y, h, &ks[..6], &A[6][..6]);
    let err = axpy(&[Complex64::new(0.0, 0.0); 3], h, &ks, &E);
    (y1, ks, err)
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeError {
    StepUnderflow { t: f64 },
    Budget { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    /// Absolute floor in the error weights.
    pub atol: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
}

/// Integrates from `t0` to the last of `outputs` (ascending, all `>= t0`),
/// returning the state at each output time.
pub fn solve_adaptive<F: Fn(f64, &State) -> State>(
    f: F,
    t0: f64,
    y0: State,
    outputs: &[f64],
    tol: Tolerance,
    max_steps: usize,
) -> Result<(Vec<State>, Stats), OdeError> {
    let mut out = Vec::with_capacity(outputs.len());
    let mut stats = Stats::default();
    let t_end = outputs.last().copied().unwrap_or(t0);
    let mut next = 0;
    while next < outputs.len() && outputs[next] <= t0 {
        out.push(y0);
        next += 1;
    }
    if next == outputs.len() {
        return Ok((out, stats));
    }
    let (mut t, mut y) = (t0, y0);
    let mut k1 = f(t, &y);
    let weight = |y: &State, z: &State, i: usize| tol.atol + tol.rtol * y[i].norm().max(z[i].norm());
    let mut h = {
        let d0 = norm(&y).max(1e-300);
        let d1 = norm(&k1);
        let guess = if d1 > 0.0 { 0.01 * d0 / d1 } else { 1e-6 };
        guess.min(t_end - t0).max(1e-14 * (1.0 + t0.abs()))
    };
    let mut err_old: f64 = 1e-4;
    let beta = 0.04;
    let expo = 0.2 - 0.75 * beta;
    let mut last_rejected = false;
    for _ in 0..max_steps {
        if h < 1e-14 * (1.0 + t.abs()) {
            return Err(OdeError::StepUnderflow { t });
        }
        let h_try = h.min(t_end - t);
        let (y1, ks, e) = step(&f, t, &y, k1, h_try);
        let err = ((0..3)
            .map(|i| (e[i].norm() / weight(&y, &y1, i)).powi(2))
            .sum::<f64>()
            / 3.0)
            .sqrt();
        if !err.is_finite() {
            h = 0.2 * h_try;
            last_rejected = true;
            stats.rejected += 1;
            continue;
        }
        if err <= 1.0 {
            stats.accepted += 1;
            let k7 = ks[6];
            let t1 = t + h_try;
            let ydiff: State = std::array::from_fn(|i| y1[i] - y[i]);
            let bspl: State = std::array::from_fn(|i| k1[i] * h_try - ydiff[i]);
            let r4: State = std::array::from_fn(|i| ydiff[i] - k7[i] * h_try - bspl[i]);
            let r5 = axpy(&[Complex64::new(0.0, 0.0); 3], h_try, &ks, &D);
            while next < outputs.len() && (outputs[next] <= t1 || t1 >= t_end) {
                let s = ((outputs[next] - t) / h_try).clamp(0.0, 1.0);
                let s1 = 1.0 - s;
                let v: State = std::array::from_fn(|i| {
                    y[i] + (ydiff[i] + (bspl[i] + (r4[i] + r5[i] * s1) * s) * s1) * s
                });
                out.push(if outputs[next] == t1 { y1 } else { v });
                next += 1;
            }
            t = t1;
            y = y1;
            k1 = k7;
            if next == outputs.len() {
                return Ok((out, stats));
            }
            let fac = (err.max(1e-10).powf(expo) / err_old.powf(beta) / 0.9).clamp(0.1, 5.0);
            let mut h_new = h_try / fac;
            if last_rejected {
                h_new = h_new.min(h_try);
            }
            err_old = err.max(1e-4);
            h = h_new;
            last_rejected = false;
        } else {
            stats.rejected += 1;
            h = h_try / (err.powf(expo) / 0.9).min(5.0);
            last_rejected = true;
        }
    }
    Err(OdeError::Budget { t })
}

/// `steps` equal steps from `t0` to `t1`.
pub fn solve_fixed<F: Fn(f64, &State) -> State>(f: F, t0: f64, y0: State, t1: f64, steps: usize) -> State {
    let h = (t1 - t0) / steps as f64;
    let mut y = y0;
    for k in 0..steps {
        let t = t0 + h * k as f64;
        let k1 = f(t, &y);
        y = step(&f, t, &y, k1, h).0;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rot(_: f64, y: &State) -> State {
        let i = Complex64::new(0.0, 1.0);
        [i * y[0], -i * 2.0 * y[1], y[2] * 0.0]
    }

    #[test]
    fn dense_output_matches_exponential() {
        let y0 = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(2.0, 0.0)];
        let ts: Vec<f64> = (1..=37).map(|k| k as f64 * 0.27).collect();
        let tol = Tolerance { rtol: 1e-11, atol: 1e-14 };
        let (ys, _) = solve_adaptive(rot, 0.0, y0, &ts, tol, 100_000).unwrap();
        for (t, y) in ts.iter().zip(&ys) {
            let want0 = Complex64::new(0.0, *t).exp();
            let want1 = Complex64::new(0.0, 1.0) * Complex64::new(0.0, -2.0 * t).exp();
            assert!((y[0] - want0).norm() < 1e-8, "t={t}");
            assert!((y[1] - want1).norm() < 1e-8, "t={t}");
            assert_eq!(y[2], y0[2]);
        }
    }

    #[test]
    fn fixed_step_is_fifth_order() {
        let y0 = [Complex64::new(1.0, 0.0); 3];
        let exact = Complex64::new(0.0, 3.0).exp();
        let e1 = (solve_fixed(rot, 0.0, y0, 3.0, 20)[0] - exact).norm();
        let e2 = (solve_fixed(rot, 0.0, y0, 3.0, 40)[0] - exact).norm();
        let order = (e1 / e2).log2();
        assert!((order - 5.0).abs() < 0.5, "order {order}");
    }
}
