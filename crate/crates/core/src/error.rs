//! Error type shared across the engine.

/// Everything that can go wrong while building, evaluating, renormalizing or
/// analyzing a map. Numeric drivers that are specified to *record* failures
/// instead of raising them (the cascade iterator, validation) do not return
/// this type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("argument {value} lies outside [0, 1] beyond tolerance")]
    Domain { value: String },

    #[error("derivative singular at x = {x}: power-law node with s = 0 and exponent > 1")]
    Singularity { x: String },

    #[error("inverse solve did not converge within {iters} iterations (residual {residual})")]
    NonConvergence { iters: usize, residual: String },

    #[error("zoom interval [{a}, {b}] is degenerate at this precision")]
    DegenerateInterval { a: String, b: String },

    #[error("map is not renormalizable: {0}")]
    NotRenormalizable(String),

    #[error("precision exhausted: {0}")]
    PrecisionExhausted(String),

    #[error("eigenbasis ill-conditioned: cond estimate {cond:.3e}")]
    IllConditionedBasis { cond: f64 },

    #[error("operation not applicable: {0}")]
    NotApplicable(String),

    #[error("l2 = 1 makes S5 identically 1; s cannot be recovered from the chart")]
    ExponentDegeneracy,

    #[error("no valid tuning bracket: {0}")]
    BracketNotFound(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("iteration budget {budget} exceeded before first return")]
    IterationBudget { budget: u64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;
