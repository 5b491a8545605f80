use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed XML at byte {offset}: {message}")]
    Xml { offset: u64, message: String },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unsupported {schema} version {found} (expected {expected})")]
    Version {
        schema: String,
        found: u64,
        expected: u64,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("instance {instance_id} needs {needed} tokens but max_len is {max_len}")]
    Overflow {
        instance_id: String,
        needed: usize,
        max_len: usize,
    },

    #[error("input error: {0}")]
    Input(String),

    #[error("lookup error: no entry for instance {0}")]
    Lookup(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("[{stage}]")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("JSON error")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tag an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The stage tag, if any.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
