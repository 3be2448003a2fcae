use thiserror::Error;

/// Errors raised by the simulation and analysis operations.
///
/// The variant names mirror the failure modes of the individual operations so
/// that a caller (in particular the CLI) can report which contract was
/// violated without string matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid-too-coarse: {0}")]
    GridTooCoarse(String),

    #[error("comb-exceeds-span: comb bandwidth {bandwidth_mhz} MHz does not fit in span {span_mhz} MHz")]
    CombExceedsSpan { bandwidth_mhz: f64, span_mhz: f64 },

    #[error("domain-error: {0}")]
    Domain(String),

    #[error("no-solution-in-bounds: {0}")]
    NoSolutionInBounds(String),

    #[error("non-convergence: {0}")]
    NonConvergence(String),

    #[error("invalid-bounds: {0}")]
    InvalidBounds(String),

    #[error("capacity-infeasible: {num_teeth} teeth cannot hold {n_modes} modes")]
    CapacityInfeasible { num_teeth: usize, n_modes: usize },

    #[error("bandwidth-too-small: {0}")]
    BandwidthTooSmall(String),

    #[error("grid-mismatch: {0}")]
    GridMismatch(String),

    #[error("overlapping-windows: windows at {first_us} us and {second_us} us overlap")]
    OverlappingWindows { first_us: f64, second_us: f64 },

    #[error("window-out-of-range: {0}")]
    WindowOutOfRange(String),

    #[error("zero-reference: reference area is not positive")]
    ZeroReference,

    #[error("unsorted-times: sample times must be sorted ascending")]
    UnsortedTimes,

    #[error("sequence-invariant-violation: {0}")]
    SequenceInvariant(String),

    #[error("fit-failure: {0}")]
    FitFailure(String),

    #[error("degenerate-data: {0}")]
    DegenerateData(String),

    #[error("validation-error: {0}")]
    Validation(String),

    #[error("io-error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse-error: {0}")]
    Parse(String),
}

impl Error {
    /// Short machine-readable name of the error class, used by the CLI for
    /// its `error[<name>]` prefix.
    pub fn name(&self) -> &'static str {
        match self {
            Error::GridTooCoarse(_) => "grid-too-coarse",
            Error::CombExceedsSpan { .. } => "comb-exceeds-span",
            Error::Domain(_) => "domain-error",
            Error::NoSolutionInBounds(_) => "no-solution-in-bounds",
            Error::NonConvergence(_) => "non-convergence",
            Error::InvalidBounds(_) => "invalid-bounds",
            Error::CapacityInfeasible { .. } => "capacity-infeasible",
            Error::BandwidthTooSmall(_) => "bandwidth-too-small",
            Error::GridMismatch(_) => "grid-mismatch",
            Error::OverlappingWindows { .. } => "overlapping-windows",
            Error::WindowOutOfRange(_) => "window-out-of-range",
            Error::ZeroReference => "zero-reference",
            Error::UnsortedTimes => "unsorted-times",
            Error::SequenceInvariant(_) => "sequence-invariant-violation",
            Error::FitFailure(_) => "fit-failure",
            Error::DegenerateData(_) => "degenerate-data",
            Error::Validation(_) => "validation-error",
            Error::Io(_) => "io-error",
            Error::Parse(_) => "parse-error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
