use std::io::Write;
use std::path::Path;

use crpse_core::Error;
use serde::Serialize;

/// Failure reported as one `key=value` line on stderr.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    pub code: u8,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
            code: 1,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    }

    pub fn context(mut self, at: &str) -> Self {
        self.message = format!("{at}: {}", self.message);
        self
    }

    pub fn exit_code(&self) -> u8 {
        self.code
    }

    pub fn to_line(&self) -> String {
        let msg = serde_json::to_string(&self.message).expect("string serializes");
        format!("error kind={} exit={} message={msg}", self.kind, self.code)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (kind, code) = match &e {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ("not_found", 2),
            Error::Io { .. } => ("io", 1),
            Error::VersionMismatch { .. } => ("version_mismatch", 3),
            Error::Parse { .. } => ("parse", 1),
            Error::Validation(_) => ("validation", 1),
            Error::DegenerateLabels => ("degenerate_labels", 1),
            Error::TooFewSamples { .. } => ("too_few_samples", 1),
            Error::NotInDataset(_) => ("not_in_dataset", 1),
            Error::NoFindings => ("no_findings", 1),
            Error::EmptyInput(_) => ("empty_input", 1),
            Error::Provider(_) => ("provider", 1),
            Error::InvalidArgument(_) => ("invalid_argument", 1),
        };
        CliError {
            kind,
            message: e.to_string(),
            code,
        }
    }
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    Ok(crpse_core::fsutil::write_atomic(path, contents)?)
}

pub fn json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("output serializes") + "\n"
}

/// Sends `text` to `out` atomically, or to stdout.
pub fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io(Path::new("<stdout>"), e)),
                _ => Ok(()),
            }
        }
    }
}
