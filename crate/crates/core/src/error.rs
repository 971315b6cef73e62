use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid interval: lo ({lo}) must be strictly less than hi ({hi})")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("unknown refinement rule `{0}`")]
    UnknownRule(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point {x:?} lies outside the domain")]
    OutsideDomain { x: Vec<f64> },

    #[error("level {level} out of range 1..={depth}")]
    LevelOutOfRange { level: usize, depth: usize },

    #[error("index {index:?} out of range for shape {shape:?}")]
    IndexOutOfRange { index: Vec<usize>, shape: Vec<usize> },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("spline order must be at least 1, found {0}")]
    InvalidOrder(usize),

    #[error("Gram factorization failed at row {row}: pivot {pivot:e} (degenerate partition?)")]
    Factorization { row: usize, pivot: f64 },

    #[error("space too small: dimension {dim} but at least {required} required")]
    SpaceTooSmall { dim: usize, required: usize },

    #[error("negative measure value {value} on atom {atom:?}; feed the variation measure instead")]
    NegativeMeasure { atom: Vec<usize>, value: f64 },

    #[error("threshold must be positive, found {0}")]
    NonPositiveThreshold(f64),

    #[error("basis index {index} never intersects the frozen interval")]
    BasisMissesInterval { index: usize },

    #[error("{0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
