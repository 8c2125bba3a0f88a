//! Small dense linear-algebra helpers.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

/// Eigenvalues of a real square matrix, sorted by real then imaginary part.
/// `None` when the Schur iteration does not converge.
pub fn eigenvalues(m: DMatrix<f64>) -> Option<Vec<Complex64>> {
    let n = m.nrows();
    let scale = m.amax();
    if scale == 0.0 {
        return Some(vec![Complex64::new(0.0, 0.0); n]);
    }
    let schur = Schur::try_new(m / scale, f64::EPSILON, 100_000)?;
    let mut ev: Vec<Complex64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z * scale)
        .collect();
    ev.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    Some(ev)
}

/// Cyclic Jacobi eigen-decomposition of a symmetric 3x3 matrix.
/// Returns ascending eigenvalues and the matching orthonormal columns.
pub fn jacobi3(s: &[[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut a = *s;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        let diag = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
        if off <= f64::EPSILON * 1e-2 * diag || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let sn = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - sn * akq;
                a[k][q] = sn * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - sn * aqk;
                a[q][k] = sn * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - sn * vq;
                row[q] = sn * vp + c * vq;
            }
        }
    }
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let lam = [a[idx[0]][idx[0]], a[idx[1]][idx[1]], a[idx[2]][idx[2]]];
    let mut cols = [[0.0; 3]; 3];
    for (k, &i) in idx.iter().enumerate() {
        for r in 0..3 {
            cols[r][k] = v[r][i];
        }
    }
    (lam, cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalizes() {
        let s = [[3.0, 0.0, -1.0], [0.0, 2.0, 0.0], [-1.0, 0.0, 1.0]];
        let (lam, t) = jacobi3(&s);
        let r2 = 2f64.sqrt();
        for (got, want) in lam.iter().zip([2.0 - r2, 2.0, 2.0 + r2]) {
            assert!((got - want).abs() < 1e-14);
        }
        for k in 0..3 {
            for i in 0..3 {
                let sv: f64 = (0..3).map(|j| s[i][j] * t[j][k]).sum();
                assert!((sv - lam[k] * t[i][k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_and_nilpotent_spectra() {
        assert_eq!(eigenvalues(DMatrix::zeros(4, 4)).unwrap().len(), 4);
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let ev = eigenvalues(m).unwrap();
        assert!(ev.iter().all(|z| z.norm() < 1e-12));
    }
}
