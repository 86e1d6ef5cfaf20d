use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed input; `pointer` locates the offending key.
    #[error("{source_name}{pointer}: {reason}")]
    Input {
        source_name: String,
        pointer: String,
        reason: String,
    },

    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {reason}")]
    Write { path: PathBuf, reason: String },

    #[error(transparent)]
    Numeric(wdiff::Error),
}

impl CliError {
    pub fn input(source_name: impl Into<String>, pointer: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Input {
            source_name: source_name.into(),
            pointer: pointer.into(),
            reason: reason.into(),
        }
    }

    /// Attach a library error to the input it came from.
    pub fn from_lib(source_name: &str, e: wdiff::Error) -> Self {
        use wdiff::Error as E;
        match e {
            E::Schema { pointer, reason } => CliError::input(source_name, pointer, reason),
            E::InvalidParameter { name, reason } => CliError::input(source_name, format!("/{name}"), reason),
            E::InvalidWeight(_)
            | E::DimensionMismatch { .. }
            | E::NonSymmetric { .. }
            | E::Indefinite { .. }
            | E::UnknownField(_)
            | E::NonPositiveRatio { .. }
            | E::SingularPoint { .. }
            | E::CoincidentPoints => CliError::input(source_name, "", e.to_string()),
            other => CliError::Numeric(other),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input { .. } | CliError::Read { .. } => 2,
            CliError::Write { .. } | CliError::Numeric(_) => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Input {
                source_name,
                pointer,
                reason,
            } => serde_json::json!({
                "error": "input",
                "source": source_name,
                "pointer": pointer,
                "reason": reason,
            }),
            CliError::Read { path, source } => serde_json::json!({
                "error": "input",
                "source": path.display().to_string(),
                "pointer": "",
                "reason": source.to_string(),
            }),
            other => serde_json::json!({ "error": "runtime", "reason": other.to_string() }),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
