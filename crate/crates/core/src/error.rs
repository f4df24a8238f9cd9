use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unreadable image {path}: {msg}")]
    Decode { path: PathBuf, msg: String },
    #[error("multi-channel input: {0}")]
    MultiChannel(String),
    #[error("missing ppc metadata for {0}")]
    MissingPpc(PathBuf),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("out-of-bounds rectangle: {0}")]
    OutOfBounds(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no dynamic range")]
    NoDynamicRange,
    #[error("no dominant frequency")]
    NoDominantFrequency,
    #[error("too few points: {0}")]
    TooFewPoints(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("unassigned source_id {0}")]
    Unassigned(String),
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in machine-readable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Decode { .. } => "decode",
            Error::MultiChannel(_) => "multi_channel",
            Error::MissingPpc(_) => "missing_ppc",
            Error::InvalidParam(_) => "invalid_param",
            Error::OutOfBounds(_) => "out_of_bounds",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NoDynamicRange => "no_dynamic_range",
            Error::NoDominantFrequency => "no_dominant_frequency",
            Error::TooFewPoints(_) => "too_few_points",
            Error::Empty(_) => "empty",
            Error::Unassigned(_) => "unassigned",
            Error::Format(_) => "format",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
