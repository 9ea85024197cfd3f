use thiserror::Error;

/// Errors produced by estimation, sampling and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data is degenerate (all-zero column, zero row, too few samples).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// M-estimation requires more observations than dimensions.
    #[error("insufficient sample: need n > {required}, got n = {actual}")]
    InsufficientSample { required: usize, actual: usize },

    /// A matrix that must be positive definite is not.
    #[error("matrix is not positive definite{}", context_suffix(.0))]
    NotPositiveDefinite(String),

    /// An iterate became singular or otherwise numerically unusable.
    #[error("conditioning failure: {0}")]
    Conditioning(String),

    /// A radial-law integral does not converge.
    #[error("divergent integrand: {0}")]
    DivergentIntegral(String),

    /// The consistency-factor equation has no sign change in the bracket.
    #[error(
        "no sign change when solving E[psi(r^2/sigma)] = p: \
         g({lo}) = {g_lo:.6e}, g({hi}) = {g_hi:.6e}"
    )]
    BracketFailure { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },

    /// Invalid experiment or estimator configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn context_suffix(ctx: &str) -> String {
    if ctx.is_empty() {
        String::new()
    } else {
        format!(": {ctx}")
    }
}

pub type Result<T> = std::result::Result<T, Error>;
