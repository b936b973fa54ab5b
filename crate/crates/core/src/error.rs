use thiserror::Error;

pub type Result<T, E = GmdaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GmdaError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("component has no cached factorization")]
    NotFactorized,
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("covariance is not positive definite after ridge escalation (last ridge {ridge:e})")]
    NotPositiveDefinite { ridge: f64 },
    #[error("log-sum-exp of an empty slice")]
    EmptyInput,
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("class {class} has {found} samples, fewer than the {needed} components requested")]
    ClassTooSmall { class: usize, needed: usize, found: usize },
    #[error("class {0} never occurs among the observed labels")]
    ClassMissing(usize),
    #[error("sample {0} has zero probability under every class")]
    NumericalCollapse(usize),
    #[error("log-likelihood decreased at iteration {iteration}: {previous} -> {current}")]
    MonotonicityViolation {
        iteration: usize,
        previous: f64,
        current: f64,
    },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("dataset carries no true labels")]
    MissingTrueLabels,
    #[error("split would leave class {class} empty in one part")]
    DegenerateSplit { class: usize },
    #[error("too few samples: class {class} has {found}, need at least {needed}")]
    TooFewSamples { class: usize, needed: usize, found: usize },
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("ragged rows: line {line} has {found} fields, expected {expected}")]
    RaggedRows { line: usize, expected: usize, found: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("experiment spec error: {0}")]
    SpecError(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl GmdaError {
    /// Variant name, used by the CLI for stable diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            GmdaError::DimensionMismatch { .. } => "DimensionMismatch",
            GmdaError::NotFactorized => "NotFactorized",
            GmdaError::NonSquare { .. } => "NonSquare",
            GmdaError::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            GmdaError::EmptyInput => "EmptyInput",
            GmdaError::TooFewPoints { .. } => "TooFewPoints",
            GmdaError::ClassTooSmall { .. } => "ClassTooSmall",
            GmdaError::ClassMissing(_) => "ClassMissing",
            GmdaError::NumericalCollapse(_) => "NumericalCollapse",
            GmdaError::MonotonicityViolation { .. } => "MonotonicityViolation",
            GmdaError::InvalidParams(_) => "InvalidParams",
            GmdaError::InvalidConfig(_) => "InvalidConfig",
            GmdaError::InvalidDataset(_) => "InvalidDataset",
            GmdaError::InvalidSpec(_) => "InvalidSpec",
            GmdaError::MissingTrueLabels => "MissingTrueLabels",
            GmdaError::DegenerateSplit { .. } => "DegenerateSplit",
            GmdaError::TooFewSamples { .. } => "TooFewSamples",
            GmdaError::ParseError { .. } => "ParseError",
            GmdaError::RaggedRows { .. } => "RaggedRows",
            GmdaError::LengthMismatch { .. } => "LengthMismatch",
            GmdaError::ShapeMismatch(_) => "ShapeMismatch",
            GmdaError::SpecError(_) => "SpecError",
            GmdaError::UnknownLabel(_) => "UnknownLabel",
            GmdaError::Io(_) => "IoError",
            GmdaError::Json(_) => "JsonError",
            GmdaError::Csv(_) => "CsvError",
        }
    }

    /// True for failures caused by bad input or the filesystem rather than the model.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            GmdaError::Io(_)
                | GmdaError::Json(_)
                | GmdaError::Csv(_)
                | GmdaError::ParseError { .. }
                | GmdaError::RaggedRows { .. }
                | GmdaError::InvalidSpec(_)
                | GmdaError::InvalidConfig(_)
                | GmdaError::SpecError(_)
                | GmdaError::UnknownLabel(_)
        )
    }
}
