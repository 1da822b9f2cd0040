use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("shape error{}: {message}", layer_suffix(*layer))]
    Shape {
        layer: Option<usize>,
        message: String,
    },

    /// A NaN or infinity showed up where finite values are required.
    #[error("numeric failure in {context}")]
    NonFinite { context: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An API was used outside of its contract (stale cache, wrong mode, ...).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{}:{line}: cannot parse `{token}`", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        token: String,
    },

    #[error("{}:{line}: expected {expected} tokens, found {found}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn layer_suffix(layer: Option<usize>) -> String {
    match layer {
        Some(i) => format!(" at layer {i}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn shape(message: impl Into<String>) -> Self {
        Error::Shape {
            layer: None,
            message: message.into(),
        }
    }

    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_owned(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a layer index to a shape error that does not carry one yet.
    pub(crate) fn at_layer(self, index: usize) -> Self {
        match self {
            Error::Shape {
                layer: None,
                message,
            } => Error::Shape {
                layer: Some(index),
                message,
            },
            other => other,
        }
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidInput(_) | Error::Json(_) => 1,
            Error::NonFinite { .. } => 2,
            Error::Io { .. } | Error::Csv(_) | Error::Parse { .. } | Error::Format { .. } => 3,
            Error::Shape { .. } | Error::ContractViolation(_) => 2,
        }
    }
}
