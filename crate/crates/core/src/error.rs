use thiserror::Error;

/// Errors raised by the laboratory's numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    /// A length that must be dyadic (or must nest dyadically) is not.
    #[error("invalid scale: {0}")]
    InvalidScale(String),

    /// An input lies outside the domain the operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// A Lebesgue exponent outside the admissible range.
    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    /// The input makes the requested quantity meaningless (e.g. g = 0).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The frequency grid is too coarse to resolve the requested cap scale.
    #[error("insufficient resolution: {0}")]
    Resolution(String),

    /// Nested scale indices violate q <= s <= r.
    #[error("invalid nesting: {0}")]
    InvalidNesting(String),

    /// Fewer data points than the estimator needs.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A tuple of tile directions is less transverse than required.
    #[error("transversality violated by tuple {tuple:?}: |det| = {det:.6e} < nu = {nu}")]
    TransversalityViolation { tuple: Vec<usize>, det: f64, nu: f64 },

    /// A structural precondition of the operation does not hold.
    #[error("precondition failed: {0}")]
    Precondition(String),
}

impl LabError {
    /// True for errors caused by numerically degenerate inputs rather than
    /// malformed requests.
    pub fn is_numerical(&self) -> bool {
        matches!(self, LabError::Degenerate(_) | LabError::InsufficientData(_))
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
