use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("assumption {assumption} violated: {detail}")]
    Assumption { assumption: &'static str, detail: String },

    #[error("mean-zero condition violated: {0}")]
    NonZeroMean(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("root finding did not converge for s = {s}: bracket [{lo}, {hi}] after {iterations} iterations")]
    RootNotConverged {
        s: f64,
        lo: f64,
        hi: f64,
        iterations: usize,
    },

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("Newton did not converge at t = {t}: residual {residual:e} after {iterations} iterations (dt = {dt:e})")]
    NewtonFailed {
        t: f64,
        dt: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("spectral decomposition failed: {0}")]
    Decomposition(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("insufficient snapshot density: {0}")]
    InsufficientSnapshots(String),

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
