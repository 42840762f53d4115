use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped by the exit-code family the CLI maps them to:
/// configuration (2), data (3) and numeric (4).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("index error in {op}: index {index} out of range 0..{bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error(
        "non-finite training loss at epoch {epoch}, batch {batch}; parameter norms: {}",
        format_norms(.param_norms)
    )]
    Diverged {
        epoch: usize,
        batch: usize,
        param_norms: Vec<(String, f64)>,
    },

    #[error("I/O error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch: checkpoint vocabulary {expected}, corpus vocabulary {found}")]
    Checksum { expected: String, found: String },
}

fn format_norms(norms: &[(String, f64)]) -> String {
    norms
        .iter()
        .map(|(name, norm)| format!("{name}={norm:.4e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 usage/config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Dimension { .. } | Error::Index { .. } => 2,
            Error::NonFinite { .. } | Error::Diverged { .. } => 4,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::EmptyCorpus(_)
            | Error::Split(_)
            | Error::Format(_)
            | Error::Checksum { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
