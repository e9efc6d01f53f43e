use thiserror::Error;

/// Errors raised by the distribution calculus, the dynamics models, and the
/// smoother/controller built on top of them.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("{what} is not symmetric positive definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("{what} is rank deficient (pivot {pivot:e} below tolerance)")]
    RankDeficient { what: &'static str, pivot: f64 },

    #[error("{what} is singular")]
    Singular { what: &'static str },

    #[error("CFL condition violated: diffusion number {diffusion:.4} (limit 0.25), advection number {advection:.4} (limit 1)")]
    Cfl { diffusion: f64, advection: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("memory budget exceeded: {required} bytes required, budget is {budget} bytes")]
    MemoryBudget { required: u64, budget: u64 },

    #[error("degenerate rollout weighting: all rollout costs are non-finite")]
    DegenerateWeights,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape(rows: usize, cols: usize) -> String {
    format!("{rows}x{cols}")
}

pub(crate) fn check_shape(
    context: &'static str,
    expected: (usize, usize),
    got: (usize, usize),
) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected: shape(expected.0, expected.1),
            got: shape(got.0, got.1),
        });
    }
    Ok(())
}
