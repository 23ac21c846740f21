use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid record: {0}")]
    Validation(String),

    #[error("{format} version mismatch: expected v{expected}, found v{found}")]
    VersionMismatch {
        format: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("degenerate labels: training requires both classes")]
    DegenerateLabels,

    #[error("not enough samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("entity {0:?} is not in the dataset")]
    NotInDataset(String),

    #[error("no findings")]
    NoFindings,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("provider error: {0}")]
    Provider(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
