use thiserror::Error;

use crate::constants::TraceStep;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("moment order must be positive, got {0}")]
    InvalidOrder(f64),

    #[error("moment of order {0} is not finite for this family")]
    NonfiniteMoment(f64),

    #[error("distribution is concentrated at zero")]
    DegenerateZero,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cannot parse `{input}`: {reason}")]
    Parse { input: String, reason: String },

    #[error("|X| is degenerate: {0}")]
    DegenerateModulus(String),

    #[error("window condition has no positive mass for any scanned A (scanned {scanned:?})")]
    EmptyWindow { scanned: Vec<f64> },

    #[error("no q in the grid lies inside ({lo}, {hi})")]
    NoValidQ { lo: f64, hi: f64 },

    #[error("no A in the grid satisfies the tail condition (scanned {scanned:?})")]
    NoValidA { scanned: Vec<f64> },

    #[error("integer k exceeds the scan cap {cap}; lambda = {lambda} is too close to 1")]
    KTooLarge { cap: u64, lambda: f64, trace: Vec<TraceStep> },

    #[error("lambda chain has length {got}, expected {expected}")]
    ChainLengthMismatch { expected: usize, got: usize },

    #[error("enumeration needs {outcomes:.3e} outcomes, above the limit {limit:.0e}")]
    TooLarge { outcomes: f64, limit: f64 },

    #[error("exact enumeration requires a finitely supported law")]
    NotFiniteSupport,

    #[error("at least {min} replications are required, got {got}")]
    TooFewReplications { min: usize, got: usize },

    #[error("bundle was computed for p = {bundle_p}, requested p = {p}")]
    RegimeMismatch { bundle_p: f64, p: f64 },

    #[error("sequence is not strictly increasing at position {0}")]
    NotIncreasing(usize),

    #[error("sequence is not lacunary (minimum ratio {0} < 3)")]
    NotLacunary(f64),

    #[error("quadrature needs at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

impl Error {
    pub(crate) fn parse(input: &str, reason: impl Into<String>) -> Self {
        Error::Parse { input: input.to_string(), reason: reason.into() }
    }

    /// True when the law fails a hypothesis of the bounds (as opposed to usage or
    /// input errors).
    pub fn is_hypothesis_failure(&self) -> bool {
        matches!(
            self,
            Error::DegenerateModulus(_)
                | Error::DegenerateZero
                | Error::EmptyWindow { .. }
                | Error::NoValidA { .. }
                | Error::NoValidQ { .. }
                | Error::KTooLarge { .. }
                | Error::NotLacunary(_)
        )
    }
}
