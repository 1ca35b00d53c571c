use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// Variants are grouped so the command line can map them onto distinct exit
/// codes (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown word {word:?} in caption {caption:?}")]
    UnknownWord { word: String, caption: String },

    #[error("empty caption")]
    EmptyCaption,

    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("gradient wiring error: parameter {0:?} has no layer assignment")]
    Wiring(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("missing artifact {}: {reason}", path.display())]
    MissingArtifact { path: PathBuf, reason: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command line: 2 config, 3 data, 4 numeric, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::UnknownWord { .. }
            | Error::EmptyCaption
            | Error::SequenceTooLong { .. }
            | Error::Data(_)
            | Error::EmptyInput(_)
            | Error::MissingArtifact { .. }
            | Error::Json(_) => 3,
            Error::NonFinite(_) => 4,
            _ => 1,
        }
    }
}
