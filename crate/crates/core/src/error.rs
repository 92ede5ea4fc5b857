use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("no peak: input is identically zero")]
    NoPeak,
    #[error("no signal in the observation vector")]
    NoSignal,
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("concentric circles of equal radius have infinitely many intersections")]
    DegenerateCircles,
    #[error("sum of focal distances {sum} does not exceed the focal separation {focal}")]
    InvalidEllipse { sum: f64, focal: f64 },
    #[error("template has zero norm")]
    DegenerateTemplate,
    #[error("anchor directions are parallel")]
    DegenerateAnchors,
    #[error("estimated delay is negative; the path lies beyond the unambiguous window")]
    WrappedDelay,
    #[error("Doppler estimate {0} is at the aliasing limit")]
    AliasedDoppler(f64),
    #[error("budgets not met after {0} iterations")]
    ConvergenceFailure(usize),
    #[error("exclusion sets cover the whole search grid")]
    DetectionExhausted,
    #[error("positioning failed: {0}")]
    PositioningFailure(String),
    #[error("positions coincide")]
    CoincidentPositions,
    #[error("invalid case id {0}; expected 1 to 8")]
    InvalidCase(u8),
    #[error("probe unavailable: {0}")]
    ProbeUnavailable(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
