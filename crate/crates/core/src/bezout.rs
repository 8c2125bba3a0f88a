//! The Bezout matrix of `p(tau) = tau^3 - a tau - b` and `p'`, its spectral
//! decomposition and the diagonalized companion system.

use rayon::prelude::*;
use serde::Serialize;

use crate::cubic::{discriminant_unchecked, real_roots};
use crate::error::{Error, Result};
use crate::linalg::jacobi3;
use crate::report::{fmt_num, write_table};

pub type Mat3 = [[f64; 3]; 3];

pub fn matmul(p: &Mat3, q: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| p[i][k] * q[k][j]).sum();
        }
    }
    out
}

pub fn transpose(p: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = p[j][i];
        }
    }
    out
}

pub fn max_abs(p: &Mat3) -> f64 {
    p.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

/// `max |P - P^T|`.
pub fn asymmetry(p: &Mat3) -> f64 {
    let mut r: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            r = r.max((p[i][j] - p[j][i]).abs());
        }
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bezout3 {
    pub a: f64,
    pub b: f64,
    pub s: Mat3,
}

pub fn bezout_matrix(a: f64, b: f64) -> Bezout3 {
    Bezout3 {
        a,
        b,
        s: [[3.0, 0.0, -a], [0.0, 2.0 * a, 3.0 * b], [-a, 3.0 * b, a * a]],
    }
}

fn two_prod(x: f64, y: f64) -> (f64, f64) {
    let p = x * y;
    (p, x.mul_add(y, -p))
}

/// Double-double `x*y - z*w`.
fn dd_cross(x: f64, y: f64, z: f64, w: f64) -> (f64, f64) {
    let (p, pl) = two_prod(x, y);
    let (q, ql) = two_prod(z, w);
    let s = p - q;
    let bb = s - p;
    let err = (p - (s - bb)) + (-q - bb);
    (s, err + pl - ql)
}

fn dd_scale(h: (f64, f64), c: f64) -> (f64, f64) {
    let (p, pl) = two_prod(h.0, c);
    (p, pl + h.1 * c)
}

impl Bezout3 {
    /// Cofactor expansion along the first row in double-double arithmetic.
    pub fn det(&self) -> f64 {
        let s = &self.s;
        let m0 = dd_scale(dd_cross(s[1][1], s[2][2], s[1][2], s[2][1]), s[0][0]);
        let m1 = dd_scale(dd_cross(s[1][0], s[2][2], s[1][2], s[2][0]), -s[0][1]);
        let m2 = dd_scale(dd_cross(s[1][0], s[2][1], s[1][1], s[2][0]), s[0][2]);
        let mut terms = [m0.0, m1.0, m2.0, m0.1, m1.1, m2.1];
        terms.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for v in terms {
            let t = sum + v;
            comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
            sum = t;
        }
        sum + comp
    }

    pub fn trace(&self) -> f64 {
        self.s[0][0] + self.s[1][1] + self.s[2][2]
    }
}

/// Coefficients `(q2, q1, q0)` of `det(lambda I - S) = lambda^3 + q2 lambda^2 + q1 lambda + q0`.
/// Computed from the matrix entries and from the closed form in `(a, b)`;
/// The two must agree to `1e-12` relative to the size of their terms.
pub fn char_poly(s: &Bezout3) -> Result<[f64; 3]> {
    let m = &s.s;
    let direct = [
        -s.trace(),
        m[0][0] * m[1][1] - m[0][1] * m[1][0] + m[0][0] * m[2][2] - m[0][2] * m[2][0]
            + m[1][1] * m[2][2]
            - m[1][2] * m[2][1],
        -s.det(),
    ];
    let (a, b) = (s.a, s.b);
    let closed = [
        -(3.0 + 2.0 * a + a * a),
        6.0 * a + 2.0 * a * a + 2.0 * a * a * a - 9.0 * b * b,
        -discriminant_unchecked(a, b),
    ];
    let scales = [
        3.0 + 2.0 * a.abs() + a * a,
        6.0 * a.abs() + 3.0 * a * a + 2.0 * a.abs().powi(3) + 9.0 * b * b,
        4.0 * a.abs().powi(3) + 27.0 * b * b,
    ];
    for k in 0..3 {
        if (direct[k] - closed[k]).abs() > 1e-12 * scales[k] {
            return Err(Error::Consistency(format!(
                "characteristic coefficient {k}: {} vs {}",
                direct[k], closed[k]
            )));
        }
    }
    Ok(closed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenPath {
    Cofactor,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralDecomp {
    /// Ascending eigenvalues.
    pub lambda: [f64; 3],
    /// Orthogonal matrix whose columns are the eigenvectors.
    pub t: Mat3,
    pub path: EigenPath,
}

impl SpectralDecomp {
    /// `max |T^T T - I|`.
    pub fn orthogonality_residual(&self) -> f64 {
        let g = matmul(&transpose(&self.t), &self.t);
        let mut r: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                r = r.max((g[i][j] - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        r
    }

    /// `max |T^T S T - diag(lambda)|`.
    pub fn diagonal_residual(&self, s: &Bezout3) -> f64 {
        let d = matmul(&transpose(&self.t), &matmul(&s.s, &self.t));
        let mut r: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                r = r.max((d[i][j] - if i == j { self.lambda[i] } else { 0.0 }).abs());
            }
        }
        r
    }
}

fn fix_signs(t: &mut Mat3) {
    for j in 0..3 {
        let mut k = 0;
        for i in 1..3 {
            if t[i][j].abs() > t[k][j].abs() {
                k = i;
            }
        }
        if t[k][j] < 0.0 {
            for row in t.iter_mut() {
                row[j] = -row[j];
            }
        }
    }
}

fn cofactor_columns(a: f64, b: f64, lambda: [f64; 3]) -> [[f64; 3]; 3] {
    let [l1, l2, l3] = lambda;
    [
        [a * (2.0 * a - l1), 3.0 * b * (l1 - 3.0), (l1 - 3.0) * (l1 - 2.0 * a)],
        [-3.0 * a * b, (l2 - 3.0) * (l2 - a * a) - a * a, 3.0 * b * (l2 - 3.0)],
        [(l3 - 2.0 * a) * (l3 - a * a) - 9.0 * b * b, -3.0 * a * b, -a * (l3 - 2.0 * a)],
    ]
}

fn eigenvalues(s: &Bezout3) -> Result<[f64; 3]> {
    let [q2, q1, q0] = char_poly(s)?;
    let shift = -q2 / 3.0;
    let p = q1 - q2 * q2 / 3.0;
    let q = 2.0 * q2 * q2 * q2 / 27.0 - q2 * q1 / 3.0 + q0;
    let mut l = match real_roots(-p, -q) {
        Some(r) => r.map(|u| u + shift),
        None => jacobi3(&s.s).0,
    };
    l.sort_by(f64::total_cmp);
    let top = l[2];
    if top > 0.0 {
        // the two small eigenvalues from their product and sum, without cancellation
        let prod = -q0 / top;
        let sum = (q1 - prod) / top;
        let hi = 0.5 * (sum + (sum * sum - 4.0 * prod).max(0.0).sqrt());
        let lo = if hi != 0.0 { prod / hi } else { 0.0 };
        l = [lo, hi, top];
    }
    l.sort_by(f64::total_cmp);
    Ok(l)
}

pub fn spectral(s: &Bezout3) -> Result<SpectralDecomp> {
    let delta = discriminant_unchecked(s.a, s.b);
    if !(delta >= -1e-12) || !(s.a >= 0.0) {
        return Err(Error::HyperbolicityViolation(delta));
    }
    let lambda = eigenvalues(s)?;
    if lambda[0] < -1e-8 {
        return Err(Error::HyperbolicityViolation(lambda[0]));
    }
    let norm_s = max_abs(&s.s);
    let cols = cofactor_columns(s.a, s.b, lambda);
    let norms = cols.map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt());
    if norms.iter().all(|&n| n >= 1e-12 * norm_s) {
        let mut t = [[0.0; 3]; 3];
        for j in 0..3 {
            for i in 0..3 {
                t[i][j] = cols[j][i] / norms[j];
            }
        }
        fix_signs(&mut t);
        let d = SpectralDecomp {
            lambda,
            t,
            path: EigenPath::Cofactor,
        };
        if d.orthogonality_residual() <= 1e-12 && d.diagonal_residual(s) <= 1e-12 * (1.0 + norm_s) {
            return Ok(d);
        }
    }
    let (jl, mut t) = jacobi3(&s.s);
    fix_signs(&mut t);
    let mut lambda = lambda;
    // keep the accurate small eigenvalue, take the rest from the rotation
    for k in 1..3 {
        if (jl[k] - lambda[k]).abs() > 1e-10 * (1.0 + norm_s) {
            lambda[k] = jl[k];
        }
    }
    Ok(SpectralDecomp {
        lambda,
        t,
        path: EigenPath::Jacobi,
    })
}

/// Companion matrix of `tau^3 - a tau - b` acting on `(D_t^2 u, D_t u, u)`.
pub fn companion(a: f64, b: f64) -> Mat3 {
    [[0.0, a, b], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedSystem {
    pub a_mat: Mat3,
    /// `T^T A T`.
    pub at: Mat3,
    pub lambda: [f64; 3],
    pub t: Mat3,
    pub path: EigenPath,
    /// `| |AT[0][1]| - 1 |`, the distance of the leading off-diagonal entry from one.
    pub pattern_residual: f64,
}

impl ReducedSystem {
    /// `max |Lambda AT - (Lambda AT)^T|`.
    pub fn symmetry_residual(&self) -> f64 {
        let mut la = self.at;
        for (i, row) in la.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v *= self.lambda[i];
            }
        }
        asymmetry(&la)
    }
}

pub fn reduced_system(a: f64, b: f64) -> Result<ReducedSystem> {
    let s = bezout_matrix(a, b);
    let d = spectral(&s)?;
    let a_mat = companion(a, b);
    let at = matmul(&transpose(&d.t), &matmul(&a_mat, &d.t));
    let r = ReducedSystem {
        a_mat,
        at,
        lambda: d.lambda,
        t: d.t,
        path: d.path,
        pattern_residual: (at[0][1].abs() - 1.0).abs(),
    };
    let res = r.symmetry_residual();
    if res > 1e-8 * (1.0 + max_abs(&a_mat)) {
        return Err(Error::Consistency(format!("Lambda AT asymmetric by {res}")));
    }
    Ok(r)
}

/// `(a, b)` samples with `a in (0, a_max]` and `|b| <= 2/(3 sqrt 3) a^{3/2}`.
pub fn hyperbolic_grid(a_max: f64, na: usize, nb: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(na * nb);
    for i in 1..=na {
        let a = a_max * i as f64 / na as f64;
        let bmax = 2.0 / (3.0 * 3f64.sqrt()) * a.powf(1.5);
        for j in 0..nb {
            let s = if nb == 1 { 0.0 } else { -1.0 + 2.0 * j as f64 / (nb - 1) as f64 };
            out.push((a, s * bmax));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenRow {
    pub a_m: f64,
    pub b: f64,
    pub lambda: [f64; 3],
    /// Margins of the six inequalities at the requested `K`, in the order
    /// lower/upper for `lambda1`, `lambda2`, `lambda3`.
    pub margins: [f64; 6],
    /// Smallest `K` for which this point satisfies every inequality.
    pub k_needed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenBoundsReport {
    pub id: String,
    pub k: f64,
    pub k_fit: f64,
    pub tolerance: f64,
    pub worst_margin: f64,
    pub violations: usize,
    #[serde(skip)]
    pub rows: Vec<EigenRow>,
}

impl EigenBoundsReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn csv_header() -> [&'static str; 13] {
        [
            "id", "a_m", "b", "lambda1", "lambda2", "lambda3", "m1", "m2", "m3", "m4", "m5", "m6", "k_fit",
        ]
    }

    pub fn csv_rows(&self, only_violations: bool) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .filter(|r| !only_violations || r.margins.iter().any(|m| !(*m >= -self.tolerance)))
            .map(|r| {
                let mut row = vec![self.id.clone(), fmt_num(r.a_m), fmt_num(r.b)];
                row.extend(r.lambda.iter().map(|v| fmt_num(*v)));
                row.extend(r.margins.iter().map(|v| fmt_num(*v)));
                row.push(fmt_num(self.k_fit));
                row
            })
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_table(w, &Self::csv_header(), &self.csv_rows(false))
    }
}

fn eigen_row(a: f64, b: f64, k: f64) -> EigenRow {
    let lambda = match spectral(&bezout_matrix(a, b)) {
        Ok(d) => d.lambda,
        Err(_) => [f64::NAN; 3],
    };
    let [l1, l2, l3] = lambda;
    let delta = discriminant_unchecked(a, b);
    let margins = [
        l1 - delta / (6.0 * a + 2.0 * a * a + 2.0 * a * a * a),
        (2.0 / 3.0 + k * a) * a * a - l1,
        l2 - (2.0 - k * a) * a,
        (2.0 + k * a) * a - l2,
        l3 - 3.0,
        3.0 + k * a * a - l3,
    ];
    let k_needed = [
        (l1 / (a * a) - 2.0 / 3.0) / a,
        (2.0 - l2 / a) / a,
        (l2 / a - 2.0) / a,
        (l3 - 3.0) / (a * a),
    ]
    .into_iter()
    .fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v) });
    EigenRow {
        a_m: a,
        b,
        lambda,
        margins,
        k_needed,
    }
}

/// Checks the two-sided eigenvalue bounds of the Bezout matrix with constant `K`.
pub fn verify_eigen_bounds(grid: &[(f64, f64)], k: f64) -> EigenBoundsReport {
    let tolerance = 1e-12;
    let rows: Vec<EigenRow> = grid.par_iter().map(|&(a, b)| eigen_row(a, b, k)).collect();
    let k_fit = rows
        .iter()
        .map(|r| r.k_needed)
        .fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v) });
    let worst_margin = rows
        .iter()
        .flat_map(|r| r.margins)
        .fold(f64::INFINITY, |m, v| if v.is_nan() { f64::NEG_INFINITY } else { m.min(v) });
    let violations = rows
        .iter()
        .filter(|r| r.margins.iter().any(|m| !(*m >= -tolerance)))
        .count();
    EigenBoundsReport {
        id: format!("eigen_bounds K={k}"),
        k,
        k_fit,
        tolerance,
        worst_margin,
        violations,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_examples() {
        assert_eq!(bezout_matrix(0.0, 0.0).s, [[3.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(bezout_matrix(1.0, 0.0).s, [[3.0, 0.0, -1.0], [0.0, 2.0, 0.0], [-1.0, 0.0, 1.0]]);
        assert_eq!(bezout_matrix(3.0, 2.0).det(), 0.0);
    }

    #[test]
    fn char_poly_examples() {
        assert_eq!(char_poly(&bezout_matrix(1.0, 0.0)).unwrap(), [-6.0, 10.0, -4.0]);
        assert_eq!(char_poly(&bezout_matrix(0.0, 0.0)).unwrap(), [-3.0, 0.0, -0.0]);
    }

    #[test]
    fn spectral_examples() {
        let d = spectral(&bezout_matrix(0.0, 0.0)).unwrap();
        assert_eq!(d.lambda, [0.0, 0.0, 3.0]);
        assert!(d.orthogonality_residual() < 1e-15);
        assert_eq!(d.t[0][2], 1.0);

        let d = spectral(&bezout_matrix(1.0, 0.0)).unwrap();
        let r2 = 2f64.sqrt();
        for (got, want) in d.lambda.iter().zip([2.0 - r2, 2.0, 2.0 + r2]) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }

        let a: f64 = 0.05;
        let b = 0.002 * a.powf(1.5);
        let s = bezout_matrix(a, b);
        let d = spectral(&s).unwrap();
        let prod = d.lambda.iter().product::<f64>();
        let delta = discriminant_unchecked(a, b);
        assert!(((prod - delta) / delta).abs() < 1e-10);
        assert_eq!(d.path, EigenPath::Cofactor);
        assert!(d.orthogonality_residual() < 1e-12);

        assert!(matches!(
            spectral(&bezout_matrix(-1.0, 0.0)),
            Err(Error::HyperbolicityViolation(_))
        ));
    }

    #[test]
    fn middle_eigenvalue_decouples_without_b() {
        let d = spectral(&bezout_matrix(0.01, 0.0)).unwrap();
        assert!((d.lambda[1] - 0.02).abs() < 1e-16);
        let r = verify_eigen_bounds(&[(0.01, 0.0)], 100.0);
        assert!(r.passed());
    }

    #[test]
    fn reduced_system_examples() {
        let r = reduced_system(0.0, 0.0).unwrap();
        let s = bezout_matrix(0.0, 0.0);
        assert_eq!(asymmetry(&matmul(&s.s, &r.a_mat)), 0.0);
        let r = reduced_system(1.0, 0.0).unwrap();
        assert!(r.symmetry_residual() <= 1e-10);
    }
}
