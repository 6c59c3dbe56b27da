use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: malformed record: {msg}")]
    MalformedLine { line: usize, msg: String },

    #[error("missing header")]
    MissingHeader,

    #[error("unsupported trace version {0}")]
    UnsupportedVersion(u32),

    #[error("frames[{frame}].{port}: csi length mismatch (expected {expected}, got {got})")]
    CsiLengthMismatch {
        frame: usize,
        port: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid trace: {}", .0.join("; "))]
    InvalidTrace(Vec<String>),

    #[error("non-finite sample in {0}")]
    NonFinite(String),

    #[error("no rssi present")]
    NoRssi,

    #[error("all-zero csi: rescale denominator is zero")]
    ZeroCsiPower,

    #[error("zero reference sample at subcarrier position {0}")]
    ZeroReference(usize),

    #[error("empty window selection [{start}, {end}] s")]
    EmptyWindow { start: f64, end: f64 },

    #[error("invalid window [{start}, {end}] s")]
    InvalidWindow { start: f64, end: f64 },

    #[error("subcarrier position {position} out of range 1..={len}")]
    PositionOutOfRange { position: usize, len: usize },

    #[error("invalid dielectric properties: {0}")]
    InvalidDielectric(String),

    #[error("non-physical gain: |t| = {0}")]
    NonPhysicalGain(f64),

    #[error("zero transmission: |t| = 0")]
    ZeroTransmission,

    #[error("k_r must be > 0 (got {0})")]
    NonPositivePhaseConstant(f64),

    #[error("non-physical medium, check wrap_hint (k_r = {k_r}, k_i = {k_i})")]
    NonPhysicalMedium { k_r: f64, k_i: f64 },

    #[error("singular ratio: k_r <= k_i (k_r = {k_r}, k_i = {k_i})")]
    SingularRatio { k_r: f64, k_i: f64 },

    #[error("thickness must be > 0 (got {0})")]
    InvalidThickness(f64),

    #[error("frequency must be > 0 (got {0})")]
    InvalidFrequency(f64),

    #[error("insufficient calibration set: {0}")]
    InsufficientCalibration(String),

    #[error("rank-deficient calibration design: all transmission factors coincide")]
    RankDeficient,

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("levenberg-marquardt did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("invalid solver option: {0}")]
    InvalidOption(String),

    #[error("measured value coincides with the multipath coefficient")]
    ZeroNumerator,

    #[error("invalid truth: {0}")]
    InvalidTruth(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("json: {0}")]
    Json(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
