use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("family construction failed: {reason} at t={t}, x={x:?}, xi={xi:?}")]
    Construction {
        reason: String,
        t: f64,
        x: Vec<f64>,
        xi: Vec<f64>,
    },
    #[error("not effectively hyperbolic: d_t a = {0} at the triple point")]
    NotEffectivelyHyperbolic(f64),
    #[error("root window too small: found {found} of 3 roots in [-{half_width}, {half_width}]")]
    Window { found: usize, half_width: f64 },
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("hyperbolicity violated: discriminant or smallest Bezout eigenvalue is {0}")]
    HyperbolicityViolation(f64),
    #[error("integration failed on mode {mode} at t={t}: {reason}")]
    Integration { mode: i64, t: f64, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
