use thiserror::Error;

/// Errors surfaced by dataset handling, solvers and the optimizer.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in `{field}`: expected {expected}, got {got}")]
    Dimension {
        field: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("schema violation in field `{field}`: {reason}")]
    Schema { field: String, reason: String },

    #[error("impedance matrix violates reciprocity: max |Z - Z^T| = {residual:.3e} exceeds {tol:.3e}")]
    Reciprocity { residual: f64, tol: f64 },

    #[error("non-finite entry at ({row}, {col}) in `{field}`")]
    NonFinite {
        field: &'static str,
        row: usize,
        col: usize,
    },

    #[error("matrix is singular or ill-conditioned (condition estimate {cond:.3e})")]
    Singular { cond: f64 },

    #[error("multiplier search did not converge after {iterations} iterations (power residual {power_residual:.3e}, current residual {current_residual:.3e})")]
    NonConvergence {
        iterations: usize,
        power_residual: f64,
        current_residual: f64,
        best_capacity_bits: f64,
    },

    #[error("infeasible at epsilon = {epsilon:.6e}: no basis satisfies the dual constraints")]
    Infeasible { epsilon: f64 },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
