use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("quadrature did not converge (node counts tried: {node_counts:?}, last relative change {last_change:e})")]
    NumericIntegration {
        node_counts: Vec<usize>,
        last_change: f64,
    },

    #[error("integrand is not finite at node {location:?} (value {value})")]
    NonFiniteIntegrand { location: Vec<f64>, value: f64 },

    #[error("{what} requires a positive argument, got {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("value {value} is outside the range ({lo}, {hi}) of f'")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("Y candidate invalid at {location:?}: f'(1) + <theta, e^y - 1> = {argument} outside ({lo}, {hi})")]
    CandidateInvalid {
        location: Vec<f64>,
        argument: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid divergence: {0}")]
    InvalidDivergence(String),

    #[error("no solution found (best drift residual {best_residual:e})")]
    NoSolution { best_residual: f64 },

    #[error("existence violated (Y > 0 fails): min Y = {min_y:e} at {location:?}")]
    ExistenceViolation { min_y: f64, location: Vec<f64> },

    #[error("exponent {exponent} overflows")]
    Overflow { exponent: f64 },

    #[error("unsupported measure: {0}")]
    UnsupportedMeasure(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("alternative {index} is not a martingale measure (drift residual {residual:e})")]
    NotMartingale { index: usize, residual: f64 },

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("config: {0}")]
    Config(String),
}
