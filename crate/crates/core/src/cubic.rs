//! Depressed real cubics `p(tau) = tau^3 - a tau - b`.
//!
//! The sign of `b` follows the reduced third-order operator: the constant
//! term enters with a minus sign. The discriminant `4a^3 - 27b^2` does not
//! depend on that choice, the roots do (they change sign).

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicSymbol {
    pub a: f64,
    pub b: f64,
}

impl CubicSymbol {
    pub fn new(a: f64, b: f64) -> Self {
        CubicSymbol { a, b }
    }

    fn check(&self) -> Result<()> {
        if self.a.is_finite() && self.b.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "non-finite cubic coefficients a={}, b={}",
                self.a, self.b
            )))
        }
    }

    /// `p(tau)` for real `tau`.
    pub fn eval(&self, tau: f64) -> f64 {
        (tau * tau - self.a) * tau - self.b
    }

    pub fn eval_complex(&self, tau: Complex64) -> Complex64 {
        (tau * tau - self.a) * tau - self.b
    }

    /// Scale used for multiplicity clustering.
    pub fn root_scale(&self) -> f64 {
        1f64.max(self.a.abs().sqrt()).max(self.b.abs().cbrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Multiplicity {
    Simple,
    Double,
    Triple,
    ComplexPair,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootTriple {
    pub roots: [Complex64; 3],
    pub multiplicity_class: Multiplicity,
    pub tolerance_used: f64,
}

impl RootTriple {
    pub fn real_parts(&self) -> [f64; 3] {
        [self.roots[0].re, self.roots[1].re, self.roots[2].re]
    }
}

fn two_prod(x: f64, y: f64) -> (f64, f64) {
    let p = x * y;
    (p, x.mul_add(y, -p))
}

fn two_sum(x: f64, y: f64) -> (f64, f64) {
    let s = x + y;
    let bb = s - x;
    (s, (x - (s - bb)) + (y - bb))
}

/// `4a^3 - 27b^2` carried in double-double precision.
fn discriminant_compensated(a: f64, b: f64) -> f64 {
    let (a2, a2_lo) = two_prod(a, a);
    let (a3, a3_lo) = two_prod(a2, a);
    let a3_lo = a3_lo + a2_lo * a;
    let (b2, b2_lo) = two_prod(b, b);
    let (b27, b27_lo) = two_prod(27.0, b2);
    let b27_lo = b27_lo + 27.0 * b2_lo;
    let (s, s_lo) = two_sum(4.0 * a3, -b27);
    s + (s_lo + (4.0 * a3_lo - b27_lo))
}

pub fn discriminant(c: CubicSymbol) -> Result<f64> {
    c.check()?;
    Ok(discriminant_unchecked(c.a, c.b))
}

pub(crate) fn discriminant_unchecked(a: f64, b: f64) -> f64 {
    let naive = 4.0 * a * a * a - 27.0 * b * b;
    if naive.abs() < 1e-10 * 1f64.max(a.abs().powi(3)) {
        discriminant_compensated(a, b)
    } else {
        naive
    }
}

fn newton_polish(c: &CubicSymbol, tau: f64) -> f64 {
    let mut best = tau;
    let mut best_res = c.eval(tau).abs();
    let mut cur = tau;
    for _ in 0..3 {
        let d = 3.0 * cur * cur - c.a;
        if d == 0.0 {
            break;
        }
        let next = cur - c.eval(cur) / d;
        let res = c.eval(next).abs();
        if res < best_res {
            best = next;
            best_res = res;
            cur = next;
        } else {
            break;
        }
    }
    best
}

/// The three real roots, ascending, when the discriminant is nonnegative.
/// Returns `None` when the cubic has a complex pair.
pub fn real_roots(a: f64, b: f64) -> Option<[f64; 3]> {
    if a == 0.0 && b == 0.0 {
        return Some([0.0; 3]);
    }
    if a <= 0.0 || discriminant_unchecked(a, b) < 0.0 {
        return None;
    }
    let c = CubicSymbol { a, b };
    let r = 2.0 * (a / 3.0).sqrt();
    let arg = (1.5 * b / a * (3.0 / a).sqrt()).clamp(-1.0, 1.0);
    let phi = arg.acos() / 3.0;
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        *o = newton_polish(&c, r * (phi - 2.0 * PI * k as f64 / 3.0).cos());
    }
    out.sort_by(f64::total_cmp);
    Some(out)
}

fn cardano(c: &CubicSymbol) -> [Complex64; 3] {
    let (a, b) = (c.a, c.b);
    let d = (b * b / 4.0 - a * a * a / 27.0).max(0.0);
    let u = (0.5 * b + d.sqrt().copysign(b)).cbrt();
    let r = if u == 0.0 { 0.0 } else { u + a / (3.0 * u) };
    let r = newton_polish(c, r);
    let q = if r != 0.0 { b / r } else { -a };
    let disc = r * r - 4.0 * q;
    if disc < 0.0 {
        let im = 0.5 * (-disc).sqrt();
        [
            Complex64::new(r, 0.0),
            Complex64::new(-0.5 * r, im),
            Complex64::new(-0.5 * r, -im),
        ]
    } else {
        let s = disc.sqrt();
        let r2 = -0.5 * (r + s.copysign(r));
        let r3 = if r2 != 0.0 { q / r2 } else { 0.0 };
        [
            Complex64::new(r, 0.0),
            Complex64::new(newton_polish(c, r2), 0.0),
            Complex64::new(newton_polish(c, r3), 0.0),
        ]
    }
}

pub fn roots(c: CubicSymbol, tol: f64) -> Result<RootTriple> {
    c.check()?;
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("root tolerance must be positive, got {tol}")));
    }
    let mut rs = match real_roots(c.a, c.b) {
        Some(r) => r.map(|x| Complex64::new(x, 0.0)),
        None => cardano(&c),
    };
    rs.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    let tol_s = tol * c.root_scale();
    let class = if rs.iter().any(|r| r.im.abs() > tol_s) {
        Multiplicity::ComplexPair
    } else if rs[2].re - rs[0].re <= tol_s {
        Multiplicity::Triple
    } else if rs[1].re - rs[0].re <= tol_s || rs[2].re - rs[1].re <= tol_s {
        Multiplicity::Double
    } else {
        Multiplicity::Simple
    };
    Ok(RootTriple {
        roots: rs,
        multiplicity_class: class,
        tolerance_used: tol_s,
    })
}

pub fn is_hyperbolic(c: CubicSymbol, tol: f64) -> Result<bool> {
    if !(tol >= 0.0) {
        return Err(Error::Domain(format!("tolerance must be nonnegative, got {tol}")));
    }
    Ok(discriminant(c)? >= -tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discriminant_examples() {
        assert_eq!(discriminant(CubicSymbol::new(0.0, 0.0)).unwrap(), 0.0);
        assert_eq!(discriminant(CubicSymbol::new(3.0, 2.0)).unwrap(), 0.0);
        assert!(discriminant(CubicSymbol::new(f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn compensated_beats_naive_near_zero() {
        // a = 3 s^2, b = 2 s^3 + d has Delta = -27 (4 s^3 d + d^2); with
        // s = 1/16 and d = 2^-60 the d^2 term is below the naive rounding.
        let s = 1.0 / 16.0;
        let d = 2f64.powi(-60);
        let a = 3.0 * s * s;
        let b = 2.0 * s * s * s + d;
        let exact = -27.0 * (4.0 * s * s * s * d + d * d);
        let got = discriminant(CubicSymbol::new(a, b)).unwrap();
        assert!(((got - exact) / exact).abs() < 1e-15, "{got} vs {exact}");
    }

    #[test]
    fn root_examples() {
        let r = roots(CubicSymbol::new(0.0, 0.0), 1e-8).unwrap();
        assert_eq!(r.multiplicity_class, Multiplicity::Triple);
        let r = roots(CubicSymbol::new(1.0, 0.0), 1e-8).unwrap();
        assert_eq!(r.multiplicity_class, Multiplicity::Simple);
        for (got, want) in r.real_parts().iter().zip([-1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        let r = roots(CubicSymbol::new(3.0, 2.0), 1e-8).unwrap();
        assert_eq!(r.multiplicity_class, Multiplicity::Double);
        for (got, want) in r.real_parts().iter().zip([-1.0, -1.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let r = roots(CubicSymbol::new(-1.0, 0.0), 1e-8).unwrap();
        assert_eq!(r.multiplicity_class, Multiplicity::ComplexPair);
        assert!((r.roots[0].im + 1.0).abs() < 1e-15);
        assert!(roots(CubicSymbol::new(1.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn hyperbolicity_examples() {
        assert!(is_hyperbolic(CubicSymbol::new(1.0, 0.0), 0.0).unwrap());
        assert!(!is_hyperbolic(CubicSymbol::new(-1.0, 0.0), 0.0).unwrap());
        assert!(is_hyperbolic(CubicSymbol::new(3.0, 2.0), 0.0).unwrap());
    }
}
