use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid probability matrix: {0}")]
    InvalidProbabilities(String),

    #[error("label {label} at row {row} is out of range for {k} classes")]
    LabelOutOfRange { row: usize, label: usize, k: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("calibration scores must be finite")]
    NonFiniteScore,

    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("empty input")]
    EmptyInput,

    #[error("only one class present; AUC is undefined")]
    SingleClass,

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("temperature must be finite and > 0, got {0}")]
    InvalidTemperature(f64),

    #[error("class {0} has no training samples")]
    MissingClass(usize),

    #[error("pooled covariance is singular after shrinkage")]
    SingularCovariance,

    #[error("class {class} has {count} training samples, need at least 2")]
    TooFewSamples { class: usize, count: usize },

    #[error("calibration and test rows overlap at index {0}")]
    Overlap(usize),

    #[error("no results for model `{model}` on dataset `{dataset}`")]
    MissingCell { model: String, dataset: String },

    #[error("model `{model}` on dataset `{dataset}` has seeds {found:?}, expected {expected:?}")]
    SeedMismatch {
        model: String,
        dataset: String,
        expected: Vec<u64>,
        found: Vec<u64>,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: rows not normalized within 1e-6 or outside [0,1]: {rows:?}")]
    Normalization { path: PathBuf, rows: Vec<usize> },

    #[error("{path}: label out of range for {k} classes on rows {rows:?}")]
    FileLabelOutOfRange {
        path: PathBuf,
        k: usize,
        rows: Vec<usize>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Stable snake_case tag used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidProbabilities(_) => "invalid_probabilities",
            Error::LabelOutOfRange { .. } | Error::FileLabelOutOfRange { .. } => {
                "label_out_of_range"
            }
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::EmptyCalibration => "empty_calibration",
            Error::NonFiniteScore => "non_finite_score",
            Error::InvalidAlpha(_) => "invalid_alpha",
            Error::EmptyInput => "empty_input",
            Error::SingleClass => "single_class",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InvalidTemperature(_) => "invalid_temperature",
            Error::MissingClass(_) => "missing_class",
            Error::SingularCovariance => "singular_covariance",
            Error::TooFewSamples { .. } => "too_few_samples",
            Error::Overlap(_) => "overlap",
            Error::MissingCell { .. } => "missing_cell",
            Error::SeedMismatch { .. } => "seed_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Parse { .. } => "parse_error",
            Error::Normalization { .. } => "normalization_error",
            Error::Io { .. } => "io_error",
            Error::Json { .. } => "json_error",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
