use alloc::string::String;

/// Errors raised by the simulators, solvers and parsers in this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("eigensolver did not reach the residual tolerance within {0} iterations")]
    NoConvergence(usize),
    #[error("log-log fit is degenerate: all x values are equal")]
    DegenerateFit,
    #[error("log-log fit needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("log-log fit needs strictly positive coordinates, got ({0}, {1})")]
    NonPositivePoint(f64, f64),
    #[error("network output overflowed the divergence guard at step {step}")]
    Overflow { step: u64 },
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("inconsistent state: {0}")]
    InconsistentState(&'static str),
    #[error("error vector is zero; projection undefined")]
    ZeroError,
    #[error("bracket [{lo}, {hi}] does not straddle the divergence boundary")]
    BracketInvalid { lo: f64, hi: f64 },
    #[error("requested time precedes the first trace record")]
    BeforeFirstRecord,
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("IDX payload truncated: need {needed} bytes, have {available}")]
    TruncatedFile { needed: usize, available: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u8, classes: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed hex-float literal")]
    BadHexFloat,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
