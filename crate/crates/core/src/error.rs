use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt record {index}: label byte {label} is outside 0..=9")]
    CorruptRecord { index: usize, label: u8 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("normal matrix is singular; use a positive ridge penalty")]
    Singular,

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("covariance factorization failed even after shrinkage {shrinkage}: {source}; raise the shrinkage")]
    PriorFit {
        shrinkage: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite loss at epoch {epoch}, step {step}; first non-finite parameter: {parameter}")]
    NonFinite {
        epoch: usize,
        step: usize,
        parameter: String,
    },

    #[error("checkpoint: bad magic {0:?}, expected \"SDG1\"")]
    BadMagic([u8; 4]),

    #[error("checkpoint: unsupported version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading field `{0}`")]
    Truncated(&'static str),

    #[error("checkpoint: invalid value in field `{field}`: {detail}")]
    CheckpointField { field: &'static str, detail: String },

    #[error("checkpoint has no fitted prior; run `sdg fit-prior` first")]
    MissingPrior,

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png encoding: {0}")]
    Png(#[from] png::EncodingError),

    #[error("png decoding: {0}")]
    PngDecode(#[from] png::DecodingError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
