use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] pafimocs_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl HarnessError {
    /// Short stable identifier printed on the machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Core(e) => match e {
                pafimocs_core::Error::Parameter { .. } => "parameter",
                pafimocs_core::Error::Domain(_) => "domain",
                pafimocs_core::Error::Size(_) => "size",
                pafimocs_core::Error::Contract(_) => "contract",
                pafimocs_core::Error::RankDeficient { .. } => "rank-deficient",
                pafimocs_core::Error::NonFinite(_) => "non-finite",
                pafimocs_core::Error::EnumerationGuard { .. } => "enumeration-guard",
                pafimocs_core::Error::InvalidRoi => "invalid-roi",
                pafimocs_core::Error::TrackerLost { .. } => "tracker-lost",
            },
            HarnessError::Io { .. } => "io",
            HarnessError::Config { .. } => "config",
            HarnessError::Format { .. } => "format",
            HarnessError::Csv(_) => "csv",
            HarnessError::Json(_) => "json",
            HarnessError::Image(_) => "image",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        HarnessError::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
