use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("all-zero polynomial has no roots")]
    ZeroPolynomial,

    #[error("pole on the evaluation frequency (omega = {0})")]
    PoleOnAxis(f64),

    #[error("singular Youla map: 1 - G(s)Q(s) is identically zero")]
    SingularYoula,

    #[error("plant must be open-loop stable")]
    UnstablePlant,

    #[error("Youla parameter is not stable")]
    UnstableYoula,

    #[error("transfer function is unstable; H-infinity norm undefined")]
    Unstable,

    #[error("numerical overflow")]
    NumericalOverflow,

    #[error("degenerate tracking: |T(0)| = {0} is below the tracking threshold")]
    DegenerateTracking(f64),

    #[error("not settled within the simulation horizon")]
    NotSettled,

    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("degenerate generated denominator: leading coefficient {0}")]
    DegenerateLeading(f64),

    #[error("sampler diverged")]
    SamplerDiverged,

    #[error("acceptance rate too low: {kept} kept out of the last {window} attempts")]
    LowAcceptance { kept: usize, window: usize },

    #[error("corrupt weights file: {0}")]
    CorruptWeights(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
