use std::path::PathBuf;

use crate::solver::PicardHistory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("mesh validation failed: {0}")]
    Validation(String),

    #[error("no quadrature rule of degree {0} (supported: 1..=10)")]
    UnsupportedDegree(usize),

    #[error("{}Arnold-Winther constraint matrix is ill-conditioned (condition estimate {condition:.3e})", cell.map(|c| format!("cell {c}: ")).unwrap_or_default())]
    Conditioning { cell: Option<usize>, condition: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "{what} did not converge after {iterations} iterations (last residual {residual:.3e})"
    )]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("Picard iteration did not converge in {} iterations (last difference {:.3e})", .0.records.len(), .0.last_difference())]
    PicardNonConvergence(Box<PicardHistory>),

    #[error("{count} cell concentrations fall below the floor {floor:.3e}")]
    FloorViolation { count: usize, floor: f64 },

    #[error("no boundary data supplied for tag `{0}`")]
    MissingTag(String),

    #[error("linear system is singular: {0}")]
    Singular(String),

    #[error("linear solve residual {residual:.3e} exceeds bound {bound:.3e}")]
    Residual { residual: f64, bound: f64 },

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
