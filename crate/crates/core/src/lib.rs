//! Numerical laboratory for third-order effectively hyperbolic Cauchy
//! problems with a triple characteristic: depressed cubics, symbol families,
//! regularized discriminants, the Bezout symmetrizer, weight functions and a
//! per-mode spectral solver with weighted energies.

pub mod bezout;
pub mod cli;
pub mod cubic;
pub mod error;
pub mod discriminant;
pub mod linalg;
pub mod ode;
pub mod report;
pub mod solver;
pub mod symbols;
pub mod weights;

pub use error::{Error, Result};
