use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid case: {0}")]
    Validation(String),

    #[error("infeasible dispatch: {0}")]
    Infeasible(String),

    #[error("power flow did not converge (max mismatch {max_mismatch:.3e} pu)")]
    PowerFlow { max_mismatch: f64 },

    #[error("motor initialization infeasible at bus {bus}: {reason}")]
    MotorInit { bus: u32, reason: String },

    #[error("machine initialization failed at bus {bus}: {reason}")]
    MachineInit { bus: u32, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("episode already finished")]
    EpisodeDone,

    #[error("environment not reset")]
    NotReset,

    #[error("scenario {scenario}: {reason}")]
    Scenario { scenario: String, reason: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("result sets differ: {0}")]
    Mismatch(String),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
