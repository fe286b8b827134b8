use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KgzError {
    /// Vector lengths or grids do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// Bad user-facing parameter (eps, tau, preset name, ...).
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("singular tridiagonal system: zero pivot at row {row}")]
    Singular { row: usize },

    #[error("ill-conditioned tridiagonal system: backward error {residual:.3e} exceeds {tolerance:.1e}")]
    IllConditioned { residual: f64, tolerance: f64 },

    #[error("tridiagonal system is not strictly diagonally dominant at row {row} (margin {margin:.3e})")]
    NotDominant { row: usize, margin: f64 },

    /// The implicit E-system lost diagonal dominance: 1/tau^2 + c_j/2 <= 0.
    #[error("stability error: 1/tau^2 + c_j/2 <= 0 at node j={j} (c_j={c:.6e}, tau={tau:.3e})")]
    Stability { j: usize, c: f64, tau: f64 },

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl KgzError {
    /// Process exit code used by the CLI: 1 for parameter problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            KgzError::Parameter(_) | KgzError::Structural(_) | KgzError::Io(_) => 1,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for KgzError {
    fn from(e: std::io::Error) -> Self {
        KgzError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, KgzError>;
