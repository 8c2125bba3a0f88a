//! Symbol families `a(t,x,xi)`, `b(t,x,xi)`, triple points, the Hamilton map
//! and localization to a conic neighborhood of a triple point.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cubic::{discriminant_unchecked, CubicSymbol};
use crate::error::{Error, Result};
use crate::linalg::eigenvalues;

pub type Eval = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
/// Coefficients in `t` (ascending powers) of `a` and `b` at fixed `(x, xi)`.
pub type PolyEval = Arc<dyn Fn(&[f64], &[f64]) -> (Vec<f64>, Vec<f64>) + Send + Sync>;

/// C-infinity smoothstep: 0 for `r <= 0`, 1 for `r >= 1`.
pub fn smoothstep(r: f64) -> f64 {
    fn g(r: f64) -> f64 {
        if r > 0.0 {
            (-1.0 / r).exp()
        } else {
            0.0
        }
    }
    if r <= 0.0 {
        0.0
    } else if r >= 1.0 {
        1.0
    } else {
        let p = g(r);
        p / (p + g(1.0 - r))
    }
}

/// Plateau cutoff: 1 on `|s| <= 1`, 0 on `|s| >= 2`.
pub fn chi(s: f64) -> f64 {
    smoothstep(2.0 - s.abs())
}

/// One-sided cutoff: 1 for `s <= 0`, 0 for `s >= 1`.
pub fn chi_one_sided(s: f64) -> f64 {
    smoothstep(1.0 - s)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * t + k)
}

fn poly_deriv(c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(k, &v)| k as f64 * v)
        .collect()
}

#[derive(Clone)]
pub struct SymbolFamily {
    a_eval: Eval,
    b_eval: Eval,
    poly: Option<PolyEval>,
    pub dim: usize,
    pub label: String,
}

impl fmt::Debug for SymbolFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymbolFamily")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("polynomial", &self.poly.is_some())
            .finish()
    }
}

impl SymbolFamily {
    pub fn new(label: impl Into<String>, dim: usize, a: Eval, b: Eval) -> Self {
        SymbolFamily {
            a_eval: a,
            b_eval: b,
            poly: None,
            dim,
            label: label.into(),
        }
    }

    /// Attach exact `t`-polynomial coefficients, enabling the exact root backend.
    pub fn with_poly(mut self, poly: PolyEval) -> Self {
        self.poly = Some(poly);
        self
    }

    pub fn a(&self, t: f64, x: &[f64], xi: &[f64]) -> f64 {
        (self.a_eval)(t, x, xi)
    }

    pub fn b(&self, t: f64, x: &[f64], xi: &[f64]) -> f64 {
        (self.b_eval)(t, x, xi)
    }

    pub fn cubic(&self, t: f64, x: &[f64], xi: &[f64]) -> CubicSymbol {
        CubicSymbol::new(self.a(t, x, xi), self.b(t, x, xi))
    }

    pub fn t_polys(&self, x: &[f64], xi: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        self.poly.as_ref().map(|p| p(x, xi))
    }

    pub fn is_polynomial(&self) -> bool {
        self.poly.is_some()
    }

    /// Homogeneity in `xi` and hyperbolicity on `grid`.
    pub fn validate(&self, grid: &ValidationGrid) -> Result<()> {
        for (x, xi) in grid.points(self.dim) {
            for t in grid.times() {
                let (a, b) = (self.a(t, &x, &xi), self.b(t, &x, &xi));
                if !a.is_finite() || !b.is_finite() {
                    return Err(self.fail("non-finite symbol value", t, &x, &xi));
                }
                for s in [2.0, 10.0] {
                    let sxi: Vec<f64> = xi.iter().map(|v| s * v).collect();
                    if (self.a(t, &x, &sxi) - a).abs() > 1e-9
                        || (self.b(t, &x, &sxi) - b).abs() > 1e-9
                    {
                        return Err(self.fail("not homogeneous of degree 0 in xi", t, &x, &xi));
                    }
                }
                if discriminant_unchecked(a, b) < -1e-12 {
                    return Err(self.fail("discriminant negative", t, &x, &xi));
                }
            }
        }
        Ok(())
    }

    fn fail(&self, reason: &str, t: f64, x: &[f64], xi: &[f64]) -> Error {
        Error::Construction {
            reason: format!("{}: {}", self.label, reason),
            t,
            x: x.to_vec(),
            xi: xi.to_vec(),
        }
    }
}

/// Sample grid used to validate a family: `t` in `[0, t_max]`, each
/// coordinate of `x` in `[-x_half_width, x_half_width]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationGrid {
    pub t_max: f64,
    pub nt: usize,
    pub x_half_width: f64,
    pub nx: usize,
}

impl Default for ValidationGrid {
    fn default() -> Self {
        ValidationGrid {
            t_max: 0.5,
            nt: 26,
            x_half_width: 0.5,
            nx: 21,
        }
    }
}

impl ValidationGrid {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.nt.max(2);
        (0..n).map(move |k| self.t_max * k as f64 / (n - 1) as f64)
    }

    /// `x` along each coordinate axis, `xi` = +-e_j.
    pub fn points(&self, dim: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let n = self.nx.max(2);
        let mut out = Vec::new();
        for axis in 0..dim {
            for k in 0..n {
                let s = -self.x_half_width + 2.0 * self.x_half_width * k as f64 / (n - 1) as f64;
                let mut x = vec![0.0; dim];
                x[axis] = s;
                for sign in [1.0, -1.0] {
                    let mut xi = vec![0.0; dim];
                    xi[axis] = sign;
                    out.push((x.clone(), xi));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    TricomiProduct,
    Bbp,
    Example16,
    Custom,
}

/// Parameters of the built-in families. `alpha(x) = alpha_scale |x|^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyParams {
    pub dim: usize,
    pub m: u32,
    pub alpha_scale: Option<f64>,
    pub a2: f64,
    pub b3: f64,
    /// `e` multiplies the whole of `a` (scales the effective eigenvalue).
    pub e_scale: f64,
    pub a_poly: Vec<f64>,
    pub b_poly: Vec<f64>,
    pub validation: ValidationGrid,
}

impl Default for FamilyParams {
    fn default() -> Self {
        FamilyParams {
            dim: 1,
            m: 3,
            alpha_scale: None,
            a2: 1.0,
            b3: 0.0,
            e_scale: 1.0,
            a_poly: vec![1.0],
            b_poly: vec![],
            validation: ValidationGrid::default(),
        }
    }
}

fn poly_family(
    label: String,
    dim: usize,
    alpha_scale: f64,
    a_t: Vec<f64>,
    b_t: Vec<f64>,
    b_sqrt_alpha: Vec<f64>,
) -> SymbolFamily {
    // a = a_t(t) + alpha(x), b = b_t(t) + b_sqrt_alpha(t) sqrt(alpha(x))
    let alpha = move |x: &[f64]| alpha_scale * x.iter().map(|v| v * v).sum::<f64>();
    let polys = {
        let (a_t, b_t, bs) = (a_t.clone(), b_t.clone(), b_sqrt_alpha.clone());
        move |x: &[f64], _xi: &[f64]| {
            let al = alpha(x);
            let mut a = a_t.clone();
            if a.is_empty() {
                a.push(0.0);
            }
            a[0] += al;
            let n = b_t.len().max(bs.len()).max(1);
            let mut b = vec![0.0; n];
            for (k, v) in b_t.iter().enumerate() {
                b[k] += v;
            }
            let sa = al.max(0.0).sqrt();
            for (k, v) in bs.iter().enumerate() {
                b[k] += v * sa;
            }
            (a, b)
        }
    };
    let pa = polys.clone();
    let pb = polys.clone();
    SymbolFamily::new(
        label,
        dim,
        Arc::new(move |t, x, xi| poly_eval(&pa(x, xi).0, t)),
        Arc::new(move |t, x, xi| poly_eval(&pb(x, xi).1, t)),
    )
    .with_poly(Arc::new(polys))
}

/// A built-in family without validation.
pub fn builtin_unchecked(name: FamilyName, params: &FamilyParams) -> SymbolFamily {
    let d = params.dim.max(1);
    let e = params.e_scale;
    match name {
        FamilyName::TricomiProduct => poly_family(
            "tricomi_product".into(),
            d,
            0.0,
            vec![0.0, e],
            vec![0.0],
            vec![],
        ),
        FamilyName::Example16 => {
            let m = params.m.max(1) as usize;
            let mut bs = vec![0.0; m + 1];
            bs[1] += 1.0;
            bs[m] -= 0.5;
            let scale = params.alpha_scale.unwrap_or(1.0);
            let fam = poly_family(format!("example16(m={m})"), d, scale, vec![0.0, 1.0], vec![], bs);
            scale_a(fam, e)
        }
        FamilyName::Bbp => {
            let scale = params.alpha_scale.unwrap_or(1.0);
            let fam = poly_family(
                "bbp".into(),
                d,
                scale,
                vec![0.0, params.a2],
                vec![0.0, 0.0, params.b3],
                vec![],
            );
            scale_a(fam, e)
        }
        FamilyName::Custom => {
            let scale = params.alpha_scale.unwrap_or(0.0);
            let fam = poly_family(
                "custom".into(),
                d,
                scale,
                params.a_poly.clone(),
                params.b_poly.clone(),
                vec![],
            );
            scale_a(fam, e)
        }
    }
}

fn scale_a(fam: SymbolFamily, e: f64) -> SymbolFamily {
    if e == 1.0 {
        return fam;
    }
    let inner = fam.clone();
    let poly = fam.poly.clone().expect("built-ins are polynomial");
    SymbolFamily {
        a_eval: Arc::new(move |t, x, xi| e * inner.a(t, x, xi)),
        b_eval: fam.b_eval.clone(),
        poly: Some(Arc::new(move |x, xi| {
            let (a, b) = poly(x, xi);
            (a.into_iter().map(|v| e * v).collect(), b)
        })),
        dim: fam.dim,
        label: format!("{}(e={e})", fam.label),
    }
}

pub fn builtin(name: FamilyName, params: &FamilyParams) -> Result<SymbolFamily> {
    let fam = builtin_unchecked(name, params);
    fam.validate(&params.validation)?;
    Ok(fam)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriplePoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub tau: f64,
    /// False when the Gauss-Newton refinement was degenerate and the raw
    /// grid point is returned.
    pub refined: bool,
}

impl TriplePoint {
    pub fn at(x: Vec<f64>, xi: Vec<f64>) -> Self {
        TriplePoint {
            t: 0.0,
            x,
            xi,
            tau: 0.0,
            refined: false,
        }
    }
}

/// Solve the small dense system `m v = r` by Gaussian elimination with
/// partial pivoting. `None` when singular.
fn solve_dense(mut m: Vec<Vec<f64>>, mut r: Vec<f64>) -> Option<Vec<f64>> {
    let n = r.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[p][c].abs() < 1e-300 {
            return None;
        }
        m.swap(c, p);
        r.swap(c, p);
        for i in c + 1..n {
            let f = m[i][c] / m[c][c];
            for j in c..n {
                m[i][j] -= f * m[c][j];
            }
            r[i] -= f * r[c];
        }
    }
    let mut v = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| m[i][j] * v[j]).sum();
        v[i] = (r[i] - s) / m[i][i];
    }
    Some(v)
}

fn refine_triple(f: &SymbolFamily, x: &[f64], xi: &[f64]) -> Option<Vec<f64>> {
    let d = x.len();
    let resid = |x: &[f64]| [f.a(0.0, x, xi), f.b(0.0, x, xi)];
    let rnorm = |r: [f64; 2]| r[0].hypot(r[1]);
    let mut cur = x.to_vec();
    let start = rnorm(resid(&cur));
    for _ in 0..4 {
        let r = resid(&cur);
        let h = 1e-6;
        let mut jac = vec![[0.0; 2]; d];
        for (j, col) in jac.iter_mut().enumerate() {
            let mut p = cur.clone();
            let mut q = cur.clone();
            p[j] += h;
            q[j] -= h;
            let (rp, rq) = (resid(&p), resid(&q));
            *col = [(rp[0] - rq[0]) / (2.0 * h), (rp[1] - rq[1]) / (2.0 * h)];
        }
        let jtj: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|k| jac[i][0] * jac[k][0] + jac[i][1] * jac[k][1]).collect())
            .collect();
        let trace: f64 = (0..d).map(|i| jtj[i][i]).sum();
        if trace < 1e-20 {
            return None;
        }
        let jtr: Vec<f64> = (0..d).map(|i| -(jac[i][0] * r[0] + jac[i][1] * r[1])).collect();
        let step = solve_dense(jtj, jtr)?;
        for (c, s) in cur.iter_mut().zip(step) {
            *c += s;
        }
    }
    (rnorm(resid(&cur)) <= start).then_some(cur)
}

pub fn find_triple_points(
    f: &SymbolFamily,
    grid: &[(Vec<f64>, Vec<f64>)],
    tol: f64,
) -> Vec<TriplePoint> {
    grid.iter()
        .filter(|(x, xi)| f.a(0.0, x, xi).abs() <= tol && f.b(0.0, x, xi).abs() <= tol)
        .map(|(x, xi)| match refine_triple(f, x, xi) {
            Some(xr) => TriplePoint {
                refined: true,
                ..TriplePoint::at(xr, xi.clone())
            },
            None => TriplePoint::at(x.clone(), xi.clone()),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffReport {
    #[serde(skip)]
    pub eigenvalues: Vec<Complex64>,
    pub nonzero_pair: bool,
    pub e_bar: f64,
    /// Largest change of a Hessian entry between steps `h` and `h/2`.
    pub error_estimate: f64,
}

/// Richardson-extrapolated central-difference Hessian of `f` at `z`.
fn hessian(f: &dyn Fn(&[f64]) -> f64, z: &[f64], h: f64) -> (Vec<Vec<f64>>, f64) {
    let n = z.len();
    let at = |i: usize, si: f64, j: usize, sj: f64, h: f64| {
        let mut w = z.to_vec();
        w[i] += si * h;
        w[j] += sj * h;
        f(&w)
    };
    let d2 = |i: usize, j: usize, h: f64| {
        if i == j {
            (at(i, 1.0, i, 0.0, h) - 2.0 * f(z) + at(i, -1.0, i, 0.0, h)) / (h * h)
        } else {
            (at(i, 1.0, j, 1.0, h) - at(i, 1.0, j, -1.0, h) - at(i, -1.0, j, 1.0, h)
                + at(i, -1.0, j, -1.0, h))
                / (4.0 * h * h)
        }
    };
    let mut hess = vec![vec![0.0; n]; n];
    let mut err: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            let coarse = d2(i, j, h);
            let fine = d2(i, j, 0.5 * h);
            let v = (4.0 * fine - coarse) / 3.0;
            err = err.max((fine - coarse).abs());
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    (hess, err)
}

/// Full symbol `tau^3 - a |xi|^2 tau - b |xi|^3` as a function of
/// `z = (t, x, tau, xi)`.
fn full_symbol(f: &SymbolFamily, z: &[f64]) -> f64 {
    let d = f.dim;
    let t = z[0];
    let x = &z[1..=d];
    let tau = z[d + 1];
    let xi = &z[d + 2..];
    let w = norm(xi);
    tau * tau * tau - f.a(t, x, xi) * w * w * tau - f.b(t, x, xi) * w * w * w
}

/// The Hamilton map `F_p` at a triple point.
pub fn hamilton_map(f: &SymbolFamily, p: &TriplePoint, h: f64) -> Result<(DMatrix<f64>, f64)> {
    let d = f.dim;
    if p.x.len() != d || p.xi.len() != d {
        return Err(Error::Domain("triple point dimension mismatch".into()));
    }
    if !(h > 0.0) {
        return Err(Error::Domain(format!("Hessian step must be positive, got {h}")));
    }
    let mut z = vec![p.t];
    z.extend_from_slice(&p.x);
    z.push(p.tau);
    z.extend_from_slice(&p.xi);
    let scale = 1f64.max(norm(&p.x)).max(norm(&p.xi));
    let (hess, err) = hessian(&|w: &[f64]| full_symbol(f, w), &z, h * scale);
    if hess.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite Hessian of the full symbol".into()));
    }
    let n = d + 1;
    let mut fm = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            fm[(i, j)] = hess[i][n + j];
            fm[(i, n + j)] = hess[n + i][n + j];
            fm[(n + i, j)] = -hess[i][j];
            fm[(n + i, n + j)] = -hess[n + i][j];
        }
    }
    Ok((fm, err))
}

pub fn hamilton_spectrum(f: &SymbolFamily, p: &TriplePoint, h: f64) -> Result<EffReport> {
    let (fm, err) = hamilton_map(f, p, h)?;
    let eig = eigenvalues(fm)
        .ok_or_else(|| Error::Domain("Hamilton map eigenvalues did not converge".into()))?;
    let big: Vec<&Complex64> = eig.iter().filter(|z| z.norm() > 1e-6).collect();
    let pair = big.len() == 2
        && big.iter().all(|z| z.im.abs() <= 1e-6)
        && (big[0].re + big[1].re).abs() <= 1e-6 * (1.0 + big[1].re.abs());
    let e_bar = if pair { 0.5 * (big[1].re - big[0].re) } else { 0.0 };
    Ok(EffReport {
        eigenvalues: eig,
        nonzero_pair: pair,
        e_bar,
        error_estimate: err,
    })
}

/// `a = e (t + alpha)` near a triple point.
#[derive(Debug, Clone)]
pub struct EffectiveFactor {
    pub family: SymbolFamily,
    pub e_bar: f64,
    pub point: TriplePoint,
}

fn d_t(f: &SymbolFamily, t: f64, x: &[f64], xi: &[f64]) -> f64 {
    let h = 1e-5 * (1.0 + t.abs());
    (f.a(t + h, x, xi) - f.a(t - h, x, xi)) / (2.0 * h)
}

impl EffectiveFactor {
    /// `alpha(x, xi)`: minus the zero of `t -> a(t,x,xi)` closest to 0.
    pub fn alpha(&self, x: &[f64], xi: &[f64]) -> f64 {
        if let Some((a, _)) = self.family.t_polys(x, xi) {
            let da = poly_deriv(&a);
            return -newton_root(|t| poly_eval(&a, t), |t| poly_eval(&da, t), self.e_bar);
        }
        let f = &self.family;
        -newton_root(|t| f.a(t, x, xi), |t| d_t(f, t, x, xi), self.e_bar)
    }

    pub fn e(&self, t: f64, x: &[f64], xi: &[f64]) -> f64 {
        let alpha = self.alpha(x, xi);
        if let Some((a, _)) = self.family.t_polys(x, xi) {
            return poly_eval(&deflate(&a, -alpha), t);
        }
        let s = t + alpha;
        if s.abs() <= 1e-7 * (1.0 + alpha.abs()) {
            d_t(&self.family, t, x, xi)
        } else {
            self.family.a(t, x, xi) / s
        }
    }

    /// `(a, e, b)` as `t`-polynomials, when the family is polynomial.
    pub fn polys(&self, x: &[f64], xi: &[f64]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (a, b) = self.family.t_polys(x, xi)?;
        let alpha = self.alpha(x, xi);
        let e = deflate(&a, -alpha);
        Some((a, e, b))
    }
}

/// Quotient of `c(t)` by `(t - r)`, remainder dropped.
fn deflate(c: &[f64], r: f64) -> Vec<f64> {
    if c.len() <= 1 {
        return vec![0.0];
    }
    let n = c.len() - 1;
    let mut q = vec![0.0; n];
    let mut acc = c[n];
    for k in (0..n).rev() {
        q[k] = acc;
        acc = c[k] + acc * r;
    }
    q
}

fn newton_root(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, slope: f64) -> f64 {
    let mut t = 0.0;
    for _ in 0..60 {
        let d = df(t);
        let d = if d.abs() > 1e-14 { d } else { slope };
        let step = f(t) / d;
        t -= step;
        if step.abs() <= 1e-16 * (1.0 + t.abs()) {
            break;
        }
    }
    t
}

pub fn effective_factorization(f: &SymbolFamily, p: &TriplePoint) -> Result<EffectiveFactor> {
    let e_bar = match f.t_polys(&p.x, &p.xi) {
        Some((a, _)) => poly_eval(&poly_deriv(&a), 0.0),
        None => d_t(f, 0.0, &p.x, &p.xi),
    };
    if !(e_bar > 0.0) {
        return Err(Error::NotEffectivelyHyperbolic(e_bar));
    }
    Ok(EffectiveFactor {
        family: f.clone(),
        e_bar,
        point: p.clone(),
    })
}

/// Family localized to a conic neighborhood of `(x_bar, xi_bar)`.
#[derive(Debug, Clone)]
pub struct LocalizedFamily {
    pub factor: EffectiveFactor,
    pub m: f64,
    pub gamma: f64,
    pub xi_bar: Vec<f64>,
    pub x_bar: Vec<f64>,
}

pub fn localize(f: &SymbolFamily, m: f64, gamma: f64, xi_bar: &[f64]) -> Result<LocalizedFamily> {
    localize_at(f, m, gamma, &vec![0.0; f.dim], xi_bar)
}

pub fn localize_at(
    f: &SymbolFamily,
    m: f64,
    gamma: f64,
    x_bar: &[f64],
    xi_bar: &[f64],
) -> Result<LocalizedFamily> {
    if !(m >= 1.0) || !(gamma >= 1.0) {
        return Err(Error::Domain(format!("need M >= 1 and gamma >= 1, got M={m}, gamma={gamma}")));
    }
    let nx = norm(xi_bar);
    if nx == 0.0 || xi_bar.len() != f.dim || x_bar.len() != f.dim {
        return Err(Error::Domain("xi_bar must be a nonzero covector of the family's dimension".into()));
    }
    let xi_bar: Vec<f64> = xi_bar.iter().map(|v| v / nx).collect();
    let p = TriplePoint::at(x_bar.to_vec(), xi_bar.clone());
    let factor = effective_factorization(f, &p)?;
    Ok(LocalizedFamily {
        factor,
        m,
        gamma,
        xi_bar,
        x_bar: x_bar.to_vec(),
    })
}

impl LocalizedFamily {
    pub fn family(&self) -> &SymbolFamily {
        &self.factor.family
    }

    pub fn e_bar(&self) -> f64 {
        self.factor.e_bar
    }

    /// `<xi> = (gamma^2 + |xi|^2)^{1/2}`.
    pub fn bracket(&self, xi: &[f64]) -> f64 {
        (self.gamma * self.gamma + xi.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// `M^{1/2} <xi>^{-1/2}`.
    pub fn eps(&self, xi: &[f64]) -> f64 {
        (self.m / self.bracket(xi)).sqrt()
    }

    pub fn y(&self, x: &[f64]) -> Vec<f64> {
        let m2 = self.m * self.m;
        x.iter()
            .zip(&self.x_bar)
            .map(|(&v, &c)| c + chi(m2 * (v - c)) * (v - c))
            .collect()
    }

    pub fn eta(&self, xi: &[f64]) -> Vec<f64> {
        let w = self.bracket(xi);
        let m2 = self.m * self.m;
        xi.iter()
            .zip(&self.xi_bar)
            .map(|(&v, &c)| chi(m2 * (v / w - c)) * (v - c * w) + c * w)
            .collect()
    }

    /// `[xi] = |eta(xi)|`.
    pub fn bracket_eta(&self, xi: &[f64]) -> f64 {
        norm(&self.eta(xi))
    }

    /// `alpha` at localized coordinates, clipped at 0.
    pub fn alpha(&self, x: &[f64], xi: &[f64]) -> f64 {
        self.factor.alpha(&self.y(x), &self.eta(xi)).max(0.0)
    }

    pub fn e(&self, t: f64, x: &[f64], xi: &[f64]) -> f64 {
        self.factor.e(t, &self.y(x), &self.eta(xi))
    }

    pub fn b(&self, t: f64, x: &[f64], xi: &[f64]) -> f64 {
        self.family().b(t, &self.y(x), &self.eta(xi))
    }

    /// `rho = alpha + M <xi>^{-1}`.
    pub fn rho(&self, x: &[f64], xi: &[f64]) -> f64 {
        self.alpha(x, xi) + self.m / self.bracket(xi)
    }

    /// `a_M = e (t + alpha + 2M <xi>^{-1})`.
    pub fn a_m(&self, t: f64, x: &[f64], xi: &[f64]) -> f64 {
        self.e(t, x, xi) * (t + self.alpha(x, xi) + 2.0 * self.m / self.bracket(xi))
    }

    /// `4 a_M^3 - 27 b^2`.
    pub fn delta_m(&self, t: f64, x: &[f64], xi: &[f64]) -> f64 {
        discriminant_unchecked(self.a_m(t, x, xi), self.b(t, x, xi))
    }

    /// Largest `C` with `|d rho| <= C sqrt(rho) <xi>^{-|beta|}` on the samples
    /// (first derivatives by central differences).
    pub fn glaeser_constant(&self, xs: &[Vec<f64>], xis: &[Vec<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for x in xs {
            for xi in xis {
                let r = self.rho(x, xi);
                let w = self.bracket(xi);
                for j in 0..x.len() {
                    let h = 1e-6;
                    let (mut p, mut q) = (x.clone(), x.clone());
                    p[j] += h;
                    q[j] -= h;
                    let dx = (self.rho(&p, xi) - self.rho(&q, xi)) / (2.0 * h);
                    let hx = 1e-6 * w;
                    let (mut p, mut q) = (xi.clone(), xi.clone());
                    p[j] += hx;
                    q[j] -= hx;
                    let dxi = (self.rho(x, &p) - self.rho(x, &q)) / (2.0 * hx);
                    worst = worst.max(dx.abs() / r.sqrt()).max(w * dxi.abs() / r.sqrt());
                }
            }
        }
        worst
    }

    /// Smallest `c` with `Delta_M / a_M >= c M <xi>^{-1} a_M` on the samples.
    pub fn dm_over_am_constant(&self, ts: &[f64], xs: &[Vec<f64>], xis: &[Vec<f64>]) -> f64 {
        let mut c = f64::INFINITY;
        for &t in ts {
            for x in xs {
                for xi in xis {
                    let am = self.a_m(t, x, xi);
                    let ratio = self.delta_m(t, x, xi) / (am * am * self.m / self.bracket(xi));
                    c = c.min(ratio);
                }
            }
        }
        c
    }
}
