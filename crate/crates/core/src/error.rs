use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not unitary (max |U^H U - I| = {deviation:.3e})")]
    NonUnitary { deviation: f64 },

    #[error("vector has zero norm")]
    ZeroVector,

    #[error("vector must be unit norm (|x|^2 = {norm_sqr})")]
    NotNormalized { norm_sqr: f64 },

    #[error("reference amplitude {amplitude:.3e} is too small to define a phase reference")]
    WeakReference { amplitude: f64 },

    #[error("phase is indeterminate: all four readings are equal")]
    IndeterminatePhase,

    #[error("measured power {power:.3e} is below the detection threshold")]
    LowPower { power: f64 },

    #[error("voltage {voltage} V is outside the calibrated range [{min}, {max}]")]
    VoltageOutOfRange { voltage: f64, min: f64, max: f64 },

    #[error("phase {phase} rad cannot be reached on the calibrated voltage range")]
    UnreachablePhase { phase: f64 },

    #[error("invalid calibration model: {0}")]
    InvalidCalibration(String),

    #[error("calibration fit failed: {0}")]
    FitFailed(String),

    #[error("sweep covers too little phase for an unambiguous fit")]
    InsufficientPhaseSpan,

    #[error("node {0} cannot be reached from the input port")]
    Unreachable(usize),

    #[error("in situ gradients require the single-arm (global phase) MZI variant")]
    UnsupportedVariant,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data format error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
