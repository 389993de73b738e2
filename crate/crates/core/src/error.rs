use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("local feature row {row} has zero norm")]
    ZeroFeature { row: usize },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("malformed file at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("descriptor is identically zero")]
    DegenerateDescriptor,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("need at least {needed} static-labeled features, got {got}")]
    InsufficientStatic { needed: usize, got: usize },

    #[error("need at least {needed} dynamic-labeled features, got {got}")]
    InsufficientDynamic { needed: usize, got: usize },

    #[error("query {0} has no database image within the positive radius")]
    NoPositive(String),

    #[error("only {available} eigenvalues exceed the floor, {requested} requested")]
    RankDeficient { requested: usize, available: usize },

    #[error("index is empty")]
    EmptyIndex,

    #[error("duplicate image id {0}")]
    DuplicateId(String),

    #[error("geotags mix planar and spherical frames")]
    MixedGeoFrames,

    #[error("unknown image id {0}")]
    UnknownId(String),

    #[error("gradient check failed: max relative error {max_relative_error:e} >= {tolerance:e}")]
    GradientMismatch { max_relative_error: f64, tolerance: f64 },

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(csv::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                _ => unreachable!("checked io kind"),
            }
        } else {
            Error::Csv(e)
        }
    }
}

impl Error {
    /// Stable machine-readable class name, printed by the CLI.
    pub fn class(&self) -> &'static str {
        match self {
            Error::ZeroFeature { .. } => "ZeroFeature",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::Format { .. } => "FormatError",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::DegenerateDescriptor => "DegenerateDescriptor",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::InsufficientStatic { .. } => "InsufficientStatic",
            Error::InsufficientDynamic { .. } => "InsufficientDynamic",
            Error::NoPositive(_) => "NoPositive",
            Error::RankDeficient { .. } => "RankDeficient",
            Error::EmptyIndex => "EmptyIndex",
            Error::DuplicateId(_) => "DuplicateId",
            Error::MixedGeoFrames => "MixedGeoFrames",
            Error::UnknownId(_) => "UnknownId",
            Error::GradientMismatch { .. } => "GradientMismatch",
            Error::Config(_) => "ConfigError",
            Error::Io(_) => "IoError",
            Error::Csv(_) => "CsvError",
        }
    }

    /// Process exit code; distinct per class, never 0.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) => 3,
            Error::Csv(_) => 4,
            Error::Format { .. } => 10,
            Error::DimensionMismatch { .. } => 11,
            Error::ZeroFeature { .. } => 12,
            Error::InvalidSpec(_) => 13,
            Error::DegenerateDescriptor => 20,
            Error::TooFewSamples { .. } => 30,
            Error::InsufficientStatic { .. } => 31,
            Error::InsufficientDynamic { .. } => 32,
            Error::NoPositive(_) => 40,
            Error::RankDeficient { .. } => 50,
            Error::EmptyIndex => 60,
            Error::DuplicateId(_) => 61,
            Error::MixedGeoFrames => 62,
            Error::UnknownId(_) => 63,
            Error::GradientMismatch { .. } => 70,
        }
    }
}
