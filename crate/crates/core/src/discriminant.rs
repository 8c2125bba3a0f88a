//! The regularized discriminant `Delta(t) = 4 e^3 (t + alpha + eps^2)^3 - 27 b^2`,
//! its cubic factor in `t`, the time function `psi` and grid checks of the
//! discriminant inequalities.
//!
//! Operations here evaluate `e`, `alpha`, `b` at the base coordinates `(x, xi)`
//! with a free `eps`; the localized weights pass `y(x)`, `eta(xi)` and
//! `eps = M^{1/2} <xi>^{-1/2}` themselves.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::cubic::{roots, CubicSymbol};
use crate::error::{Error, Result};
use crate::linalg::eigenvalues;
use crate::report::{BoundPoint, BoundReport, Grid};
use crate::symbols::{chi_one_sided, poly_eval, LocalizedFamily};

pub const C1: f64 = 1.0 / 27.0;
pub const C_BAR: f64 = 1.0 / 32.0;
pub const SCAN_SAMPLES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Exact polynomial coefficients when the family provides them.
    Auto,
    Polynomial,
    Generic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuTriple {
    pub nu1: f64,
    pub nu23: [Complex64; 2],
    /// `-(nu1 + nu2 + nu3)`.
    pub a1: f64,
    pub rho: f64,
    pub backend: Backend,
    /// `Delta = cofactor * Delta_bar`, ascending `t` coefficients (polynomial backend).
    pub cofactor: Option<Vec<f64>>,
}

impl NuTriple {
    /// `A_1 = nu1 + a1`.
    pub fn a_cap1(&self) -> f64 {
        self.nu1 + self.a1
    }

    pub fn all(&self) -> [Complex64; 3] {
        [Complex64::new(self.nu1, 0.0), self.nu23[0], self.nu23[1]]
    }

    /// The monic cubic `prod (t - nu_j)` at real `t`.
    pub fn delta_bar(&self, t: f64) -> f64 {
        let [p, q] = self.nu23;
        let pair = if p.im != 0.0 || q.im != 0.0 {
            let d = t - p.re;
            d * d + p.im * p.im
        } else {
            (t - p.re) * (t - q.re)
        };
        (t - self.nu1) * pair
    }

    pub fn max_abs(&self) -> f64 {
        self.all().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

fn poly_axpy(alpha: f64, p: &[f64], q: &[f64]) -> Vec<f64> {
    let n = p.len().max(q.len());
    (0..n)
        .map(|k| alpha * p.get(k).copied().unwrap_or(0.0) + q.get(k).copied().unwrap_or(0.0))
        .collect()
}

fn trim(mut p: Vec<f64>, rel: f64) -> Vec<f64> {
    let big = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    while p.len() > 1 && p.last().is_some_and(|v| v.abs() <= rel * big) {
        p.pop();
    }
    p
}


fn poly_roots(c: &[f64]) -> Option<Vec<Complex64>> {
    let n = c.len() - 1;
    let lead = c[n];
    let mut m = nalgebra::DMatrix::zeros(n, n);
    for j in 0..n {
        m[(0, j)] = -c[n - 1 - j] / lead;
    }
    for i in 1..n {
        m[(i, i - 1)] = 1.0;
    }
    eigenvalues(m)
}

/// Coefficients of `Delta` in `t` at `(x, xi)`, when the family is polynomial.
pub fn delta_poly(lf: &LocalizedFamily, x: &[f64], xi: &[f64], eps: f64) -> Option<Vec<f64>> {
    let (a, e, b) = lf.factor.polys(x, xi)?;
    let a_eps = poly_axpy(eps * eps, &e, &a);
    let a3 = poly_mul(&poly_mul(&a_eps, &a_eps), &a_eps);
    let b2 = poly_mul(&b, &b);
    Some(poly_axpy(-27.0, &b2, &a3.iter().map(|v| 4.0 * v).collect::<Vec<_>>()))
}

/// `t -> 4 e^3 (t + alpha + eps^2)^3 - 27 b^2` at the base point `(x, xi)`.
pub fn delta_of_t<'a>(
    lf: &'a LocalizedFamily,
    x: &'a [f64],
    xi: &'a [f64],
    eps: f64,
) -> impl Fn(f64) -> f64 + 'a {
    let alpha = lf.factor.alpha(x, xi);
    move |t| {
        let e = lf.factor.e(t, x, xi);
        let s = e * (t + alpha + eps * eps);
        let b = lf.family().b(t, x, xi);
        4.0 * s * s * s - 27.0 * b * b
    }
}

/// `rho = alpha + eps^2` at the base point.
pub fn rho_base(lf: &LocalizedFamily, x: &[f64], xi: &[f64], eps: f64) -> f64 {
    lf.factor.alpha(x, xi).max(0.0) + eps * eps
}

/// Splits the three smallest roots of `p(s)` off as a monic cubic.
/// Returns the cubic's ascending coefficients `[c0, c1, c2]` and the cofactor.
fn cubic_factor(p: &[f64]) -> Result<([f64; 3], Vec<f64>)> {
    let n = p.len() - 1;
    if n < 3 {
        return Err(Error::Window {
            found: n,
            half_width: f64::NAN,
        });
    }
    let mut rs = poly_roots(p).ok_or_else(|| Error::Consistency("root iteration failed".into()))?;
    rs.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let far = &rs[3..];
    let conj_ok = |z: &Complex64, set: &[Complex64]| {
        z.im.abs() <= 1e-12 * z.norm().max(1.0)
            || set.iter().any(|w| (w - z.conj()).norm() <= 1e-6 * z.norm().max(1.0))
    };
    if !rs[..3].iter().all(|z| conj_ok(z, &rs[..3])) {
        return Err(Error::Consistency("cubic factor not separated from the remaining roots".into()));
    }
    let mut g = vec![Complex64::new(p[n], 0.0)];
    for r in far {
        let mut next = vec![Complex64::new(0.0, 0.0); g.len() + 1];
        for (k, c) in g.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= c * r;
        }
        g = next;
    }
    let g: Vec<f64> = g.iter().map(|z| z.re).collect();
    let mut q = [0.0; 4];
    for k in 0..4 {
        let mut acc = p[k];
        for j in 1..=k.min(g.len() - 1) {
            acc -= g[j] * q[k - j];
        }
        q[k] = acc / g[0];
    }
    Ok(([q[0] / q[3], q[1] / q[3], q[2] / q[3]], g))
}

fn monic_roots(c: [f64; 3]) -> Result<[Complex64; 3]> {
    let [c0, c1, c2] = c;
    let shift = c2 / 3.0;
    let p = c1 - c2 * c2 / 3.0;
    let q = 2.0 * c2 * c2 * c2 / 27.0 - c2 * c1 / 3.0 + c0;
    let rt = roots(CubicSymbol::new(-p, -q), 1e-12)?;
    let f = |z: Complex64| ((z + c2) * z + c1) * z + c0;
    let df = |z: Complex64| (3.0 * z + 2.0 * c2) * z + c1;
    let mut out = rt.roots.map(|u| u - shift);
    for z in out.iter_mut() {
        for _ in 0..3 {
            let d = df(*z);
            if d.norm() == 0.0 {
                break;
            }
            let next = *z - f(*z) / d;
            if f(next).norm() < f(*z).norm() {
                *z = next;
            } else {
                break;
            }
        }
    }
    Ok(out)
}

fn select(mut rs: [Complex64; 3], rho: f64, backend: Backend, cofactor: Option<Vec<f64>>) -> Result<NuTriple> {
    let tol_im = 1e-12 * rho.max(1e-300);
    let mut reals: Vec<f64> = rs.iter().filter(|z| z.im.abs() <= tol_im).map(|z| z.re).collect();
    reals.sort_by(f64::total_cmp);
    let (nu1, nu23) = if reals.len() == 3 {
        let tol = 1e-9 * rho;
        let above = |r: f64| reals.iter().filter(|&&s| s > r + tol).count();
        let k = (0..3)
            .filter(|&k| above(reals[k]) % 2 == 0)
            .min_by(|&i, &j| {
                reals[i]
                    .total_cmp(&reals[j])
            })
            .unwrap_or(2);
        // within a cluster prefer its largest member
        let k = (k..3).take_while(|&j| reals[j] - reals[k] <= tol).last().unwrap_or(k);
        let others: Vec<f64> = (0..3).filter(|&j| j != k).map(|j| reals[j]).collect();
        (
            reals[k],
            [Complex64::new(others[0], 0.0), Complex64::new(others[1], 0.0)],
        )
    } else {
        rs.sort_by(|a, b| a.im.abs().total_cmp(&b.im.abs()));
        let re = 0.5 * (rs[1].re + rs[2].re);
        let im = 0.5 * (rs[1].im.abs() + rs[2].im.abs());
        (rs[0].re, [Complex64::new(re, im), Complex64::new(re, -im)])
    };
    if nu1 > 1e-12 {
        return Err(Error::Consistency(format!("nu1 = {nu1} > 0")));
    }
    let a1 = -(nu1 + nu23[0].re + nu23[1].re);
    Ok(NuTriple {
        nu1,
        nu23,
        a1,
        rho,
        backend,
        cofactor,
    })
}

fn nu_polynomial(lf: &LocalizedFamily, x: &[f64], xi: &[f64], eps: f64) -> Result<NuTriple> {
    let rho = rho_base(lf, x, xi, eps);
    let (_, e, b) = lf
        .factor
        .polys(x, xi)
        .ok_or_else(|| Error::Domain("family has no polynomial form".into()))?;
    if b.iter().all(|v| *v == 0.0) {
        let r = -(lf.factor.alpha(x, xi) + eps * eps);
        let z = Complex64::new(r, 0.0);
        let cube: Vec<f64> = poly_mul(&poly_mul(&e, &e), &e).iter().map(|v| 4.0 * v).collect();
        return select([z, z, z], rho, Backend::Polynomial, Some(cube));
    }
    let p = trim(delta_poly(lf, x, xi, eps).expect("polynomial family"), 1e-15);
    let scaled: Vec<f64> = p.iter().enumerate().map(|(k, v)| v * rho.powi(k as i32)).collect();
    let (c, _) = cubic_factor(&scaled)?;
    let rs = monic_roots(c)?.map(|z| z * rho);
    let monic = [
        -(rs[0] * rs[1] * rs[2]).re,
        (rs[0] * rs[1] + rs[0] * rs[2] + rs[1] * rs[2]).re,
        -(rs[0] + rs[1] + rs[2]).re,
    ];
    select(rs, rho, Backend::Polynomial, Some(divide_monic_cubic(&p, monic)))
}

/// Quotient of `p` by `t^3 + c2 t^2 + c1 t + c0`, dividing from the leading term.
fn divide_monic_cubic(p: &[f64], [c0, c1, c2]: [f64; 3]) -> Vec<f64> {
    let n = p.len() - 1;
    let mut rem = p.to_vec();
    let mut q = vec![0.0; n - 2];
    for k in (0..n - 2).rev() {
        let lead = rem[k + 3];
        q[k] = lead;
        rem[k + 3] = 0.0;
        rem[k + 2] -= lead * c2;
        rem[k + 1] -= lead * c1;
        rem[k] -= lead * c0;
    }
    q
}

/// Real zeros of `f` on `[lo, hi]`: sign scan then bisection to `1e-12`.
pub fn scan_roots(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, samples: usize) -> Vec<f64> {
    let ts: Vec<f64> = crate::report::linspace(lo, hi, samples);
    let vs: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
    let mut out = Vec::new();
    for k in 0..ts.len() {
        if vs[k] == 0.0 {
            out.push(ts[k]);
            continue;
        }
        if k + 1 < ts.len() && vs[k + 1] != 0.0 && (vs[k] < 0.0) != (vs[k + 1] < 0.0) {
            let (mut a, mut b, mut fa) = (ts[k], ts[k + 1], vs[k]);
            while b - a > 1e-12 {
                let m = 0.5 * (a + b);
                let fm = f(m);
                if fm == 0.0 {
                    a = m;
                    b = m;
                    break;
                }
                if (fm < 0.0) == (fa < 0.0) {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            out.push(0.5 * (a + b));
        }
    }
    out
}

/// Monomial coefficients in `s in [-1, 1]` of the Chebyshev interpolant of `f(L s)`.
fn chebyshev_monomial(f: &dyn Fn(f64) -> f64, half_width: f64, n: usize) -> Vec<f64> {
    let nodes: Vec<f64> = (0..n)
        .map(|k| (std::f64::consts::PI * (k as f64 + 0.5) / n as f64).cos())
        .collect();
    let vals: Vec<f64> = nodes.iter().map(|&s| f(half_width * s)).collect();
    let cheb: Vec<f64> = (0..n)
        .map(|j| {
            let s: f64 = (0..n)
                .map(|k| vals[k] * (std::f64::consts::PI * j as f64 * (k as f64 + 0.5) / n as f64).cos())
                .sum();
            if j == 0 {
                s / n as f64
            } else {
                2.0 * s / n as f64
            }
        })
        .collect();
    let mut out = vec![0.0; n];
    let mut t_prev = vec![1.0];
    let mut t_cur = vec![0.0, 1.0];
    out[0] += cheb[0];
    if n > 1 {
        out[1] += cheb[1];
    }
    for c in cheb.iter().skip(2) {
        let mut next = vec![0.0; t_cur.len() + 1];
        for (k, v) in t_cur.iter().enumerate() {
            next[k + 1] += 2.0 * v;
        }
        for (k, v) in t_prev.iter().enumerate() {
            next[k] -= v;
        }
        for (k, v) in next.iter().enumerate() {
            out[k] += c * v;
        }
        t_prev = std::mem::replace(&mut t_cur, next);
    }
    out
}

fn nu_generic(lf: &LocalizedFamily, x: &[f64], xi: &[f64], eps: f64, window: f64) -> Result<NuTriple> {
    let rho = rho_base(lf, x, xi, eps);
    let delta = delta_of_t(lf, x, xi, eps);
    let fam = lf.family();
    let scan = crate::report::linspace(-window, window, SCAN_SAMPLES);
    if scan.iter().all(|&t| fam.b(t, x, xi) == 0.0) {
        let r = -(lf.factor.alpha(x, xi) + eps * eps);
        let z = Complex64::new(r, 0.0);
        return select([z, z, z], rho, Backend::Generic, None);
    }
    let real = scan_roots(&delta, -window, window, SCAN_SAMPLES);
    let local = real
        .iter()
        .map(|r| r.abs())
        .filter(|&r| r <= 16.0 * rho)
        .fold(rho, f64::max);
    let half = (8.0 * local).min(window);
    let p = trim(chebyshev_monomial(&delta, half, 16), 1e-13);
    if p.len() < 4 {
        return Err(Error::Window {
            found: p.len().saturating_sub(1),
            half_width: window,
        });
    }
    let (c, _) = cubic_factor(&p)?;
    let mut rs = monic_roots(c)?.map(|z| z * half);
    let inside = rs.iter().filter(|z| z.norm() <= window).count();
    if inside < 3 {
        return Err(Error::Window {
            found: inside,
            half_width: window,
        });
    }
    for z in rs.iter_mut() {
        if z.im.abs() <= 1e-9 * half {
            if let Some(r) = real.iter().min_by(|a, b| (*a - z.re).abs().total_cmp(&(*b - z.re).abs())) {
                if (r - z.re).abs() <= 1e-6 * half {
                    *z = Complex64::new(*r, 0.0);
                }
            }
        }
    }
    select(rs, rho, Backend::Generic, None)
}

/// Zeros of the monic cubic factor of `Delta` on `[-window, window]`.
pub fn nu_roots(
    lf: &LocalizedFamily,
    x: &[f64],
    xi: &[f64],
    eps: f64,
    window: f64,
    backend: Backend,
) -> Result<NuTriple> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    match backend {
        Backend::Auto if lf.family().is_polynomial() => nu_polynomial(lf, x, xi, eps),
        Backend::Polynomial => nu_polynomial(lf, x, xi, eps),
        _ => nu_generic(lf, x, xi, eps, window),
    }
}

/// `psi = -chi((nu1 + a1)/(2 c1 rho)) (nu1 + a1)/2` from a computed triple.
pub fn psi_from(nu: &NuTriple) -> f64 {
    let a = nu.a_cap1();
    -chi_one_sided(a / (2.0 * C1 * nu.rho)) * a / 2.0
}

pub fn psi(lf: &LocalizedFamily, x: &[f64], xi: &[f64], eps: f64) -> Result<f64> {
    Ok(psi_from(&nu_roots(lf, x, xi, eps, 1.0, Backend::Auto)?))
}

fn nan_point(t: f64, x: &[f64], xi: &[f64]) -> BoundPoint {
    BoundPoint::new(t, x, xi, f64::NAN, 0.0)
}

/// `Delta_bar >= c_bar min{t^2, (t-psi)^2} (t + rho)` on the grid.
pub fn verify_lower_bound(lf: &LocalizedFamily, grid: &Grid, eps: f64, c_bar: f64) -> BoundReport {
    let per_point: Vec<(Vec<BoundPoint>, f64)> = grid
        .space_points()
        .par_iter()
        .map(|(x, xi)| match nu_roots(lf, x, xi, eps, 1.0, Backend::Auto) {
            Ok(nu) => {
                let ps = psi_from(&nu);
                let mut fit = f64::INFINITY;
                let pts = grid
                    .ts
                    .iter()
                    .map(|&t| {
                        let lhs = nu.delta_bar(t);
                        let shape = (t * t).min((t - ps) * (t - ps)) * (t + nu.rho);
                        if shape > 0.0 {
                            fit = fit.min(lhs / shape);
                        }
                        BoundPoint::new(t, x, xi, lhs, c_bar * shape)
                    })
                    .collect();
                (pts, fit)
            }
            Err(_) => (grid.ts.iter().map(|&t| nan_point(t, x, xi)).collect(), f64::NAN),
        })
        .collect();
    let fitted = per_point.iter().map(|p| p.1).fold(f64::INFINITY, |a, b| if b.is_nan() { b } else { a.min(b) });
    let points = per_point.into_iter().flat_map(|p| p.0).collect();
    BoundReport::from_points(
        format!("discriminant_lower_bound c_bar={c_bar} eps={eps}"),
        grid.describe(),
        1e-12,
        fitted,
        points,
    )
}

/// `Delta(t) >= 0` for the raw (unregularized) symbol on the grid.
pub fn hyperbolicity_report(fam: &crate::symbols::SymbolFamily, grid: &Grid) -> BoundReport {
    let points = grid
        .space_points()
        .iter()
        .flat_map(|(x, xi)| {
            grid.ts.iter().map(move |&t| {
                let d = crate::cubic::discriminant_unchecked(fam.a(t, x, xi), fam.b(t, x, xi));
                BoundPoint::new(t, x, xi, d, 0.0)
            })
        })
        .collect();
    BoundReport::from_points("hyperbolicity", grid.describe(), 1e-12, f64::NAN, points)
}

#[derive(Debug, Clone, Serialize)]
pub struct AuxReports {
    pub b1_alpha: BoundReport,
    pub nu_rho: BoundReport,
    pub root_gap: BoundReport,
    pub log_derivative: BoundReport,
    pub dt_b: BoundReport,
}

impl AuxReports {
    pub fn all(&self) -> [&BoundReport; 5] {
        [&self.b1_alpha, &self.nu_rho, &self.root_gap, &self.log_derivative, &self.dt_b]
    }
}

fn d_dt(f: &dyn Fn(f64) -> f64, t: f64, scale: f64) -> f64 {
    let h = 1e-6 * scale;
    (f(t + h) - f(t - h)) / (2.0 * h)
}

/// `max_j |nu_j| >= rho/9` on the `(x, xi)` points of the grid.
pub fn verify_nu_rho(lf: &LocalizedFamily, grid: &Grid, eps: f64) -> BoundReport {
    let points: Vec<BoundPoint> = grid
        .space_points()
        .par_iter()
        .map(|(x, xi)| match nu_roots(lf, x, xi, eps, 1.0, Backend::Auto) {
            Ok(nu) => BoundPoint::new(0.0, x, xi, nu.max_abs(), nu.rho / 9.0),
            Err(_) => nan_point(0.0, x, xi),
        })
        .collect();
    let fitted = points
        .iter()
        .map(|p| p.lhs / (9.0 * p.rhs))
        .fold(f64::INFINITY, f64::min);
    BoundReport::from_points(format!("nu_rho eps={eps}"), grid.describe(), 1e-12, fitted, points)
}

pub fn verify_aux_bounds(lf: &LocalizedFamily, grid: &Grid, eps: f64) -> AuxReports {
    let desc = grid.describe();
    let space = grid.space_points();
    let fam = lf.family();

    let b1: Vec<BoundPoint> = space
        .iter()
        .map(|(x, xi)| {
            let alpha = lf.factor.alpha(x, xi).max(0.0);
            let b_hat = |t: f64| {
                let e = lf.factor.e(t, x, xi);
                3.0 * 3f64.sqrt() * fam.b(t, x, xi) / (2.0 * e.powf(1.5))
            };
            let b_hat1 = match fam.t_polys(x, xi) {
                Some((_, b)) if b.len() > 1 => {
                    3.0 * 3f64.sqrt() * b[1] / (2.0 * lf.factor.e(0.0, x, xi).powf(1.5))
                }
                Some(_) => 0.0,
                None => d_dt(&b_hat, 0.0, 1.0),
            };
            BoundPoint::new(0.0, x, xi, 4.0 * alpha.sqrt(), b_hat1.abs())
        })
        .collect();
    let fit_b1 = b1
        .iter()
        .filter(|p| p.lhs > 0.0)
        .map(|p| 4.0 * p.rhs / p.lhs)
        .fold(0.0, f64::max);
    let b1_alpha = BoundReport::from_points("b1_alpha", desc.clone(), 1e-12, fit_b1, b1);

    let nu_rho = verify_nu_rho(lf, grid, eps);

    let nus: Vec<Option<NuTriple>> = space
        .par_iter()
        .map(|(x, xi)| nu_roots(lf, x, xi, eps, 1.0, Backend::Auto).ok())
        .collect();

    let mut gaps = Vec::new();
    for ((x, xi), nu) in space.iter().zip(&nus) {
        match nu {
            Some(nu) if nu.a_cap1() < 2.0 * C1 * nu.rho => {
                let gap = nu.nu23.iter().map(|z| (z - nu.nu1).norm()).fold(f64::INFINITY, f64::min);
                gaps.push((x.clone(), xi.clone(), gap / nu.rho));
            }
            Some(_) => {}
            None => gaps.push((x.clone(), xi.clone(), f64::NAN)),
        }
    }
    let c2 = gaps.iter().map(|g| g.2).fold(f64::INFINITY, |a, b| if b.is_nan() { b } else { a.min(b) });
    let gap_points: Vec<BoundPoint> = gaps
        .iter()
        .map(|(x, xi, g)| {
            let lhs = if g.is_nan() { f64::NAN } else { *g };
            let mut p = BoundPoint::new(0.0, x, xi, lhs, 0.0);
            p.margin = if lhs.is_nan() { f64::NAN } else { lhs - c2.min(lhs) };
            p
        })
        .collect();
    let mut root_gap = BoundReport::from_points("root_gap", desc.clone(), 0.0, c2, gap_points);
    if !(c2 > 0.0) && !gaps.is_empty() {
        root_gap.violating_points = root_gap.points.clone();
    }

    let mut ld = Vec::new();
    let mut c_star: f64 = 0.0;
    for ((x, xi), nu) in space.iter().zip(&nus) {
        let ps = nu.as_ref().map(psi_from);
        let dp = delta_poly(lf, x, xi, eps);
        let delta = delta_of_t(lf, x, xi, eps);
        for &t in grid.ts.iter().filter(|&&t| t > 0.0) {
            let Some(ps) = ps else {
                ld.push(nan_point(t, x, xi));
                continue;
            };
            let (d, dd) = match &dp {
                Some(p) => {
                    let der: Vec<f64> = p.iter().enumerate().skip(1).map(|(k, v)| k as f64 * v).collect();
                    (poly_eval(p, t), poly_eval(&der, t))
                }
                None => (delta(t), d_dt(&delta, t, t + nu.as_ref().unwrap().rho)),
            };
            let a = fam.a(t, x, xi).max(0.0);
            let shape = 1.0 / t + 1.0 / ((t - ps).abs() + a.sqrt() * eps);
            let ratio = dd.abs() / d;
            c_star = c_star.max(ratio / shape);
            ld.push(BoundPoint::new(t, x, xi, shape, ratio));
        }
    }
    for p in ld.iter_mut() {
        p.rhs /= c_star.max(f64::MIN_POSITIVE);
        p.margin = p.lhs - p.rhs;
    }
    let log_derivative = BoundReport::from_points("log_derivative", desc.clone(), 1e-12, c_star, ld);

    let t_cap = lf.m.powi(-2);
    let e_bar = lf.e_bar();
    let mut db = Vec::new();
    let mut c_db = f64::NEG_INFINITY;
    for (x, xi) in &space {
        for &t in grid.ts.iter().filter(|&&t| t <= t_cap) {
            let bt = |s: f64| lf.b(s, x, xi);
            let dbt = d_dt(&bt, t, 1.0).abs();
            let bound = 2.0 * (2.0f64 / 3.0).sqrt() * e_bar * lf.a_m(t, x, xi).sqrt();
            c_db = c_db.max((dbt / bound - 1.0) * lf.m * lf.m);
            db.push(BoundPoint::new(t, x, xi, bound, dbt));
        }
    }
    let factor = 1.0 + c_db.max(0.0) / (lf.m * lf.m);
    for p in db.iter_mut() {
        p.lhs *= factor;
        p.margin = p.lhs - p.rhs;
    }
    let dt_b = BoundReport::from_points("dt_b", desc, 1e-12, c_db, db);

    AuxReports {
        b1_alpha,
        nu_rho,
        root_gap,
        log_derivative,
        dt_b,
    }
}
