use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("empty grid")]
    EmptyGrid,

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("need at least 2 classes for a Dirichlet, got {0}")]
    TooFewClasses(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },

    #[error("every pixel is VOID")]
    AllVoid,

    #[error("negative probability {0}")]
    NegativeProbability(f64),

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("invalid bounding box {0:?} for a {1}x{2} image")]
    InvalidBBox([usize; 4], usize, usize),

    #[error("invalid class configuration: {0}")]
    InvalidClassConfig(String),

    #[error("accumulator configuration mismatch")]
    ConfigMismatch,

    #[error("no pixels to evaluate")]
    NoPixels,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("could not place {0} instances without overlap")]
    PlacementFailed(usize),
}
