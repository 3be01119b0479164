use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate: lat={lat}, lon={lon}")]
    InvalidPoint { lat: f64, lon: f64 },

    #[error("point ({lat}, {lon}) is outside the zone grid")]
    OutOfBounds { lat: f64, lon: f64 },

    #[error("out of bounds ping for user {user_id} at t={t}: ({lat}, {lon})")]
    PingOutOfBounds {
        user_id: String,
        t: u64,
        lat: f64,
        lon: f64,
    },

    #[error("zero duration between fixes at t={0}")]
    ZeroDuration(u64),

    #[error("trace is empty")]
    EmptyTrace,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{}:{line}: malformed row: {reason}", path.display())]
    MalformedRow {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("no user has at least {0} distinct points")]
    InsufficientPoints(usize),

    #[error("fewer than two rungs have positive unicity; cannot fit decay")]
    DegenerateFit,

    #[error("index sets differ: {0}")]
    ShapeMismatch(String),

    #[error("weights must be non-negative and sum to 1, got {0:?}")]
    BadWeights([f64; 4]),

    #[error("level {0} records cannot be linked into trajectories without reconstruction")]
    UnlinkableInput(u8),

    #[error("rung {rung}: {source}")]
    Rung {
        rung: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{}:{line}: {reason}", path.display())]
    ConfigParse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable kind used by the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidPoint { .. } => "InvalidPoint",
            Error::OutOfBounds { .. } | Error::PingOutOfBounds { .. } => "OutOfBounds",
            Error::ZeroDuration(_) => "ZeroDuration",
            Error::EmptyTrace => "EmptyTrace",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::MalformedRow { .. } => "MalformedRow",
            Error::InsufficientPoints(_) => "InsufficientPoints",
            Error::DegenerateFit => "DegenerateFit",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::BadWeights(_) => "BadWeights",
            Error::UnlinkableInput(_) => "UnlinkableInput",
            Error::Rung { source, .. } => source.kind(),
            Error::ConfigParse { .. } => "ConfigParse",
            Error::Io(_) => "IoError",
            Error::Csv(_) => "CsvError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
