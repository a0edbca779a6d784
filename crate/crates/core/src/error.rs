use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input (bad shapes, out-of-range values, empty data).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Every hidden path has probability zero under the current parameters.
    #[error("impossible observation{} at week {week}: no state path can produce the reports", entity_suffix(.entity))]
    ImpossibleObservation { entity: Option<String>, week: usize },

    /// EM cannot start: the initial parameters give a sequence zero probability.
    #[error(
        "sequence `{entity}` is impossible under the initial parameters (week {week}); \
         start from a smoothed initialization with no zero entries, e.g. `smoothed-table`"
    )]
    ImpossibleInitialization { entity: String, week: usize },

    /// A parameter set failed stochasticity checks.
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    /// A row of a delimited input file could not be interpreted.
    #[error("{}:{line}: {message}", .path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("configuration key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn entity_suffix(entity: &Option<String>) -> String {
    match entity {
        Some(e) => format!(" in `{e}`"),
        None => String::new(),
    }
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach an entity identifier to an impossible-observation error.
    pub fn with_entity(self, id: &str) -> Self {
        match self {
            Error::ImpossibleObservation { week, .. } => Error::ImpossibleObservation {
                entity: Some(id.to_string()),
                week,
            },
            other => other,
        }
    }

    /// True for failures of the numerical model rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::ImpossibleObservation { .. } | Error::ImpossibleInitialization { .. })
    }
}
