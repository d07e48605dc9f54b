use std::path::PathBuf;

use crate::signal::SubjectId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("channel {channel} has zero variance")]
    ZeroVarianceChannel { channel: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("heterogeneous trial shapes or labels: {0}")]
    HeterogeneousShape(String),
    #[error("no spectral bin inside band [{low}, {high}] Hz")]
    EmptyBand { low: f64, high: f64 },
    #[error("subject {0} is not in the roster")]
    UnknownSubject(SubjectId),
    #[error("no trial for subject {subject}, class {class}")]
    EmptyCell { subject: SubjectId, class: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("synthetic pool has {available} trials of class {class}, {needed} requested")]
    InsufficientSynthetic {
        class: usize,
        needed: usize,
        available: usize,
    },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("CSV schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("CSV parse failure at row {row}, column {column}: {value:?}")]
    ParseFailure {
        row: usize,
        column: usize,
        value: String,
    },
    #[error("cannot place {n_subjects} signature tones in the allowed band")]
    InfeasibleSignatureBand { n_subjects: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("parameter store is frozen")]
    FrozenStore,
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("roster mismatch: {0}")]
    RosterMismatch(String),
    #[error("missing labels: {0}")]
    MissingLabels(String),
    #[error("no generator checkpoint for class {0}")]
    MissingClassCheckpoint(usize),
    #[error("too few trials per fold: {0}")]
    TooFewTrialsPerFold(String),
    #[error("rosters overlap on subjects {0:?}")]
    RosterOverlap(Vec<SubjectId>),
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidSpec(_) | Error::InfeasibleSignatureBand { .. } => 2,
            Error::IoFailure { .. } => 3,
            Error::RosterMismatch(_) | Error::RosterOverlap(_) | Error::UnknownSubject(_) => 5,
            _ => 4,
        }
    }
}
