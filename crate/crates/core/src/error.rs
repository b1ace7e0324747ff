use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("degenerate vector: norm {norm:e} is below epsilon")]
    DegenerateVector { norm: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value in tensor `{name}` (node {node})")]
    NonFinite { node: usize, name: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("integrity error{}: {detail}", record.map(|r| format!(" at record {r}")).unwrap_or_default())]
    Integrity {
        record: Option<usize>,
        detail: String,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("AUC undefined: labels contain a single class")]
    UndefinedAuc,

    #[error("degenerate query set for `{label}`: averaged embedding has norm {norm:e}")]
    DegenerateQuery { label: String, norm: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn integrity(record: Option<usize>, detail: impl Into<String>) -> Self {
        Error::Integrity {
            record,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
