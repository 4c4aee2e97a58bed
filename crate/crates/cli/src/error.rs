use serde::Serialize;
use thiserror::Error;

use ncml_core::Error as CoreError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Numeric,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Numeric => 3,
            ErrorKind::Io => 4,
        }
    }
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub code: String,
    pub message: String,
}

#[derive(Serialize)]
struct Line<'a> {
    error: &'a str,
    kind: ErrorKind,
    exit_code: i32,
    message: &'a str,
}

impl CliError {
    pub fn new(kind: ErrorKind, code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind,
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, "config", message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Io, "io", message)
    }

    pub fn numeric(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Numeric, code, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// Single-line JSON for the error stream.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&Line {
            error: &self.code,
            kind: self.kind,
            exit_code: self.exit_code(),
            message: &self.message,
        })
        .expect("error serializes")
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let message = e.to_string();
        let (kind, code) = match &e {
            CoreError::NonFiniteDensity { .. } => (ErrorKind::Numeric, "non_finite_density"),
            CoreError::NonFiniteLoss { .. } => (ErrorKind::Numeric, "non_finite_loss"),
            CoreError::NonFiniteParameters { .. } => (ErrorKind::Numeric, "non_finite_parameters"),
            CoreError::Divergence { .. } => (ErrorKind::Numeric, "divergence"),
            CoreError::Checkpoint(c) => (ErrorKind::Io, c.code()),
            CoreError::GridFormat(_) => (ErrorKind::Io, "grid_format"),
            CoreError::Io(_) => (ErrorKind::Io, "io"),
            CoreError::UnknownGenerator { .. } => (ErrorKind::Config, "unknown_generator"),
            CoreError::NonContiguousPrefix { .. } => (ErrorKind::Config, "non_contiguous_prefix"),
            CoreError::EmptyDataset => (ErrorKind::Config, "empty_dataset"),
            CoreError::TimeOutOfRange { .. } => (ErrorKind::Config, "time_out_of_range"),
            CoreError::ValueOutOfRange { .. } => (ErrorKind::Config, "value_out_of_range"),
            _ => (ErrorKind::Config, "invalid"),
        };
        Self::new(kind, code, message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ncml_core::checkpoint::CheckpointError;

    #[test]
    fn core_errors_map_to_exit_codes() {
        let div: CliError = CoreError::Divergence { step: 1, norm: 2e3 }.into();
        assert_eq!((div.exit_code(), div.code.as_str()), (3, "divergence"));
        let crc: CliError = CoreError::Checkpoint(CheckpointError::Crc { stored: 1, computed: 2 }).into();
        assert_eq!((crc.exit_code(), crc.code.as_str()), (4, "checkpoint_crc"));
        let empty: CliError = CoreError::EmptyDataset.into();
        assert_eq!(empty.exit_code(), 2);
    }

    #[test]
    fn json_line_is_single_line() {
        let e = CliError::config("bad\nvalue");
        let line = e.to_json_line();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["exit_code"], 2);
        assert_eq!(v["error"], "config");
    }
}
