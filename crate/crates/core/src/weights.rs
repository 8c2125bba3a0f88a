//! Weight functions `sigma`, `omega`, `phi`, `kappa` built from the localized
//! family and the time function `psi`, with grid checks of their inequalities
//! and finite-difference symbol-class estimates.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bezout::{bezout_matrix, spectral};
use crate::discriminant::{nu_roots, psi_from, Backend};
use crate::error::{Error, Result};
use crate::report::{BoundPoint, BoundReport, Grid};
use crate::symbols::LocalizedFamily;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightParams {
    #[serde(rename = "M")]
    pub m: f64,
    pub gamma: f64,
    pub n: f64,
    pub theta: f64,
    pub nu_bar: f64,
}

impl Default for WeightParams {
    fn default() -> Self {
        WeightParams {
            m: 8.0,
            gamma: 64.0,
            n: 8.0,
            theta: 50.0,
            nu_bar: 1.0,
        }
    }
}

impl WeightParams {
    pub fn check(&self) -> Result<()> {
        if !(self.m >= 1.0) || !(self.gamma >= 1.0) || !(self.n > 0.0) || !(self.theta > 0.0) {
            return Err(Error::Domain(format!(
                "weight parameters out of range: M={}, gamma={}, n={}, theta={}",
                self.m, self.gamma, self.n, self.theta
            )));
        }
        if self.nu_bar != 1.0 {
            return Err(Error::Domain(format!("nu_bar is fixed to 1, got {}", self.nu_bar)));
        }
        Ok(())
    }
}

/// `psi(x, xi)` evaluator.
pub type PsiEval = Arc<dyn Fn(&[f64], &[f64]) -> Result<f64> + Send + Sync>;

/// Quantities that depend on `(x, xi)` only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointWeights {
    pub rho: f64,
    pub psi: f64,
    pub bracket: f64,
    pub m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightValues {
    pub sigma: f64,
    pub omega: f64,
    pub phi: f64,
    pub kappa: f64,
}

impl PointWeights {
    /// `M rho <xi>^{-1}`.
    pub fn floor(&self) -> f64 {
        self.m * self.rho / self.bracket
    }

    pub fn at(&self, t: f64) -> WeightValues {
        let d = t - self.psi;
        let omega = (d * d + self.floor()).sqrt();
        let phi = if d >= 0.0 {
            omega + d
        } else {
            self.floor() / (omega - d)
        };
        WeightValues {
            sigma: t + self.rho + self.m / self.bracket,
            omega,
            phi,
            kappa: 1.0 / t + 1.0 / omega,
        }
    }

    /// `d/dt phi = phi / omega`.
    pub fn dphi(&self, t: f64) -> f64 {
        let v = self.at(t);
        v.phi / v.omega
    }
}

#[derive(Clone)]
pub struct WeightField {
    pub lf: LocalizedFamily,
    pub params: WeightParams,
    psi: PsiEval,
}

impl std::fmt::Debug for WeightField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WeightField").field("params", &self.params).finish()
    }
}

/// `psi` at the localized coordinates with `eps = (M / <xi>)^{1/2}`.
pub fn localized_psi(lf: &LocalizedFamily) -> PsiEval {
    let lf = lf.clone();
    Arc::new(move |x: &[f64], xi: &[f64]| {
        let nu = nu_roots(&lf, &lf.y(x), &lf.eta(xi), lf.eps(xi), 1.0, Backend::Auto)?;
        Ok(psi_from(&nu))
    })
}

pub fn build(lf: &LocalizedFamily, psi: Option<PsiEval>, params: WeightParams) -> Result<WeightField> {
    params.check()?;
    let mut lf = lf.clone();
    lf.m = params.m;
    lf.gamma = params.gamma;
    let rho = lf.rho(&lf.x_bar, &lf.xi_bar);
    if !(rho > 0.0) {
        return Err(Error::Construction {
            reason: format!("rho = {rho} is not positive"),
            t: 0.0,
            x: lf.x_bar.clone(),
            xi: lf.xi_bar.clone(),
        });
    }
    let psi = psi.unwrap_or_else(|| localized_psi(&lf));
    Ok(WeightField { lf, params, psi })
}

impl WeightField {
    pub fn point(&self, x: &[f64], xi: &[f64]) -> Result<PointWeights> {
        let rho = self.lf.rho(x, xi);
        if !(rho > 0.0) {
            return Err(Error::Construction {
                reason: format!("rho = {rho} is not positive"),
                t: 0.0,
                x: x.to_vec(),
                xi: xi.to_vec(),
            });
        }
        Ok(PointWeights {
            rho,
            psi: (self.psi)(x, xi)?,
            bracket: self.lf.bracket(xi),
            m: self.params.m,
        })
    }

    pub fn values(&self, t: f64, x: &[f64], xi: &[f64]) -> Result<WeightValues> {
        Ok(self.point(x, xi)?.at(t))
    }

    pub fn psi(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        (self.psi)(x, xi)
    }

    pub fn omega(&self, t: f64, x: &[f64], xi: &[f64]) -> Result<f64> {
        Ok(self.values(t, x, xi)?.omega)
    }

    pub fn phi(&self, t: f64, x: &[f64], xi: &[f64]) -> Result<f64> {
        Ok(self.values(t, x, xi)?.phi)
    }

    /// One bound point per grid time and `(x, xi)` point, in grid order.
    fn per_point<F>(&self, grid: &Grid, f: F) -> Vec<BoundPoint>
    where
        F: Fn(f64, &[f64], &[f64], &PointWeights) -> BoundPoint + Sync,
    {
        grid.space_points()
            .par_iter()
            .map(|(x, xi)| match self.point(x, xi) {
                Ok(pw) => grid.ts.iter().map(|&t| f(t, x, xi, &pw)).collect::<Vec<_>>(),
                Err(_) => grid
                    .ts
                    .iter()
                    .map(|&t| BoundPoint::new(t, x, xi, f64::NAN, 0.0))
                    .collect(),
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhiBounds {
    /// `phi >= M rho <xi>^{-1} / (2 omega)`.
    pub lower: BoundReport,
    /// `phi >= M <xi>^{-1} / C` with fitted `C`.
    pub scale: BoundReport,
}

pub fn check_phi_bounds(w: &WeightField, grid: &Grid) -> PhiBounds {
    let lower_pts = w.per_point(grid, |t, x, xi, pw| {
        let v = pw.at(t);
        BoundPoint::new(t, x, xi, v.phi, pw.floor() / (2.0 * v.omega))
    });
    let lower = BoundReport::from_points("phi_lower", grid.describe(), 1e-12, f64::NAN, lower_pts);
    let ratio_pts = w.per_point(grid, |t, x, xi, pw| {
        let v = pw.at(t);
        BoundPoint::new(t, x, xi, v.phi, pw.m / pw.bracket)
    });
    let c = ratio_pts
        .iter()
        .map(|p| p.rhs / p.lhs)
        .fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v) });
    let pts = ratio_pts
        .into_iter()
        .map(|p| BoundPoint::new(p.t, &p.x, &p.xi, p.lhs, p.rhs / c))
        .collect();
    let mut scale = BoundReport::from_points("phi_scale", grid.describe(), 1e-12, c, pts);
    scale.tolerance = 1e-12;
    PhiBounds { lower, scale }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResidual {
    /// Largest `|d/dt(t phi) - kappa t phi| / |kappa t phi|` with the exact derivative.
    pub analytic: f64,
    /// The same with a central difference of step `1e-6`.
    pub finite_difference: f64,
}

pub fn check_weight_identity(w: &WeightField, samples: &[(f64, Vec<f64>, Vec<f64>)]) -> Result<IdentityResidual> {
    let mut out = IdentityResidual {
        analytic: 0.0,
        finite_difference: 0.0,
    };
    for (t, x, xi) in samples {
        let t = *t;
        if !(t > 0.0) {
            return Err(Error::Domain(format!("weight identity needs t > 0, got {t}")));
        }
        let pw = w.point(x, xi)?;
        let v = pw.at(t);
        let tphi = t * v.phi;
        let rhs = v.kappa * tphi;
        let exact = v.phi + t * pw.dphi(t);
        let h = 1e-6;
        let fd = ((t + h) * pw.at(t + h).phi - (t - h) * pw.at(t - h).phi) / (2.0 * h);
        out.analytic = out.analytic.max((exact - rhs).abs() / rhs);
        out.finite_difference = out.finite_difference.max((fd - rhs).abs() / rhs);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct KappaBoundsReport {
    pub eps_bar: f64,
    /// Fitted `C` in `1/(kappa lambda1) <= eps_bar^2 (1 + C M^-4) kappa`.
    pub c_fit: f64,
    pub first: BoundReport,
    /// `1/(sigma^2 kappa) <= kappa`.
    pub second: BoundReport,
}

pub fn check_kappa_bounds(w: &WeightField, e_bar: f64, grid: &Grid) -> KappaBoundsReport {
    let eps_bar = 4.0 * 6f64.sqrt() / e_bar;
    let m4 = w.params.m.powi(4);
    let lf = &w.lf;
    let raw = w.per_point(grid, |t, x, xi, pw| {
        let v = pw.at(t);
        let l1 = spectral(&bezout_matrix(lf.a_m(t, x, xi), lf.b(t, x, xi)))
            .map(|d| d.lambda[0])
            .unwrap_or(f64::NAN);
        BoundPoint::new(t, x, xi, eps_bar * eps_bar * v.kappa, 1.0 / (v.kappa * l1))
    });
    let c_fit = raw
        .iter()
        .filter(|p| p.t > 0.0)
        .map(|p| (p.rhs / p.lhs - 1.0) * m4)
        .fold(f64::NEG_INFINITY, |m, v| if v.is_nan() { f64::NAN } else { m.max(v) });
    let factor = 1.0 + c_fit.max(0.0) / m4;
    let first_pts = raw
        .into_iter()
        .filter(|p| p.t > 0.0)
        .map(|p| BoundPoint::new(p.t, &p.x, &p.xi, p.lhs * factor, p.rhs))
        .collect();
    let first = BoundReport::from_points("kappa_lambda1", grid.describe(), 1e-12, c_fit, first_pts);
    let second_pts = w
        .per_point(grid, |t, x, xi, pw| {
            let v = pw.at(t);
            BoundPoint::new(t, x, xi, v.kappa, 1.0 / (v.sigma * v.sigma * v.kappa))
        })
        .into_iter()
        .filter(|p| p.t > 0.0)
        .collect();
    let second = BoundReport::from_points("kappa_sigma", grid.describe(), 1e-12, f64::NAN, second_pts);
    KappaBoundsReport {
        eps_bar,
        c_fit,
        first,
        second,
    }
}

/// Nondecreasing multi-indices of length `order` over `vars` variables.
fn multi_indices(vars: usize, order: usize) -> Vec<Vec<usize>> {
    if order == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for prefix in multi_indices(vars, order - 1) {
        let start = prefix.last().copied().unwrap_or(0);
        for v in start..vars {
            let mut p = prefix.clone();
            p.push(v);
            out.push(p);
        }
    }
    out
}

fn nested_difference(
    f: &dyn Fn(&[f64], &[f64]) -> Option<f64>,
    z: &[f64],
    dim: usize,
    idx: &[usize],
    steps: &[f64],
) -> Option<f64> {
    match idx.split_first() {
        None => f(&z[..dim], &z[dim..]),
        Some((&v, rest)) => {
            let (mut p, mut q) = (z.to_vec(), z.to_vec());
            p[v] += steps[v];
            q[v] -= steps[v];
            let fp = nested_difference(f, &p, dim, rest, steps)?;
            let fq = nested_difference(f, &q, dim, rest, steps)?;
            Some((fp - fq) / (2.0 * steps[v]))
        }
    }
}

/// Supremum over the points and over `|alpha + beta| <= order` of
/// `|d_x^alpha d_xi^beta f| M^{|alpha+beta|/2} <xi>^{(|beta|-|alpha|)/2} / m`,
/// with metric-scaled central differences of relative step `h`.
pub fn seminorm_estimate(
    w: &WeightField,
    f: &dyn Fn(&[f64], &[f64]) -> Option<f64>,
    m: &dyn Fn(&[f64], &[f64]) -> Option<f64>,
    order: usize,
    points: &[(Vec<f64>, Vec<f64>)],
    h: f64,
) -> Result<f64> {
    if order > 3 {
        return Err(Error::Domain(format!("seminorm order must be at most 3, got {order}")));
    }
    let mm = w.params.m;
    let mut sup: f64 = 0.0;
    for (x, xi) in points {
        let dim = x.len();
        let br = w.lf.bracket(xi);
        let mut steps = vec![h * (mm * br).powf(-0.5); dim];
        steps.extend(std::iter::repeat_n(h * (br / mm).sqrt(), dim));
        let z: Vec<f64> = x.iter().chain(xi.iter()).copied().collect();
        let weight = m(x, xi).unwrap_or(f64::NAN);
        for k in 0..=order {
            for idx in multi_indices(2 * dim, k) {
                let n_xi = idx.iter().filter(|&&v| v >= dim).count() as f64;
                let n_x = k as f64 - n_xi;
                let d = nested_difference(f, &z, dim, &idx, &steps).unwrap_or(f64::NAN);
                let scaled = d.abs() * mm.powf(k as f64 / 2.0) * br.powf((n_xi - n_x) / 2.0) / weight;
                sup = if scaled.is_nan() { f64::NAN } else { sup.max(scaled) };
            }
        }
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbols::{builtin, localize, FamilyName, FamilyParams};

    fn field(name: FamilyName) -> WeightField {
        let f = builtin(name, &FamilyParams::default()).unwrap();
        let lf = localize(&f, 8.0, 64.0, &[1.0]).unwrap();
        build(&lf, None, WeightParams::default()).unwrap()
    }

    #[test]
    fn closed_form_values() {
        let pw = PointWeights {
            rho: 0.2,
            psi: 0.0,
            bracket: 80.0,
            m: 8.0,
        };
        let v = pw.at(0.0);
        assert_eq!(v.omega, (8.0f64 * 0.2 / 80.0).sqrt());
        assert_eq!(v.phi, v.omega);
        let pw = PointWeights { psi: 0.3, ..pw };
        let v = pw.at(0.3);
        assert_eq!(v.phi, v.omega);
        assert_eq!(v.kappa, 1.0 / 0.3 + 1.0 / pw.floor().sqrt());
        let v = pw.at(0.1);
        assert!((v.phi * (v.omega + 0.2) / pw.floor() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tricomi_floor() {
        let w = field(FamilyName::TricomiProduct);
        let xi = [100.0];
        let pw = w.point(&[0.0], &xi).unwrap();
        let br = w.lf.bracket(&xi);
        assert_eq!(pw.psi, 0.0);
        assert!((pw.rho - 8.0 / br).abs() < 1e-15);
        assert!((pw.at(0.0).omega - 8.0 / br).abs() < 1e-15);
    }

    #[test]
    fn identity_and_kappa_bounds() {
        let w = field(FamilyName::TricomiProduct);
        let samples: Vec<_> = [1e-4, 1e-2, 0.3]
            .iter()
            .map(|&t| (t, vec![0.0], vec![50.0]))
            .collect();
        let r = check_weight_identity(&w, &samples).unwrap();
        assert!(r.analytic <= 1e-12 && r.finite_difference <= 1e-6, "{r:?}");
        let grid = Grid::line((1e-4, 0.5, 20), (-0.1, 0.1, 3), 50.0);
        let d = check_kappa_bounds(&w, 1.0, &grid);
        assert!((d.eps_bar - 9.797958971132712).abs() < 1e-12);
        assert!(d.c_fit < 10.0);
        assert!(d.second.passed());
    }

    #[test]
    fn constant_seminorm() {
        let w = field(FamilyName::TricomiProduct);
        let one = |_: &[f64], _: &[f64]| Some(1.0);
        let s = seminorm_estimate(&w, &one, &one, 2, &[(vec![0.0], vec![40.0])], 1e-3).unwrap();
        assert_eq!(s, 1.0);
    }
}
