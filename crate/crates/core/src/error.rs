use thiserror::Error;

/// Errors produced across the classification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("malformed waveform file: {0}")]
    Structural(String),

    #[error("annotation schema: {0}")]
    Schema(String),

    #[error("duplicate annotation for ({file_id}, {breath_ordinal})")]
    DuplicateAnnotation { file_id: String, breath_ordinal: u64 },

    #[error("{} annotation(s) reference missing breaths, first: {:?}", .missing.len(), .missing.first())]
    Join { missing: Vec<(String, u64)> },

    #[error("breath has {len} sample(s); at least 2 are required")]
    DegenerateBreath { len: usize },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("non-finite feature value in row {row}")]
    NonFinite { row: usize },

    #[error("label {0} is not a trainable class")]
    UntrainableLabel(String),

    #[error("model format version {found} is incompatible with supported version {expected}")]
    IncompatibleModel { found: u32, expected: u32 },

    #[error("invalid model document: {0}")]
    ModelFormat(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown patient id {0:?}")]
    UnknownPatient(String),

    #[error("{groups} group(s) cannot be split into {k} folds")]
    NotEnoughGroups { groups: usize, k: usize },

    #[error("confusion matrix is empty")]
    EmptyConfusion,

    #[error("dataset contains OTHER labels; filter them before evaluation")]
    OtherLabel,

    #[error("prediction row {row}: vote fractions sum to {sum}")]
    InvalidVotes { row: usize, sum: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
