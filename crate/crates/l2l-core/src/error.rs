use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode error on {path}: {message}")]
    ImageDecode { path: PathBuf, message: String },

    #[error("channel count mismatch: file has {found} channels, {expected} labels given")]
    ChannelCountMismatch { expected: usize, found: usize },

    #[error("unsupported bit depth: expected 8-bit samples, got {0}")]
    UnsupportedBitDepth(String),

    #[error("duplicate channel label {0:?}")]
    DuplicateChannelLabel(String),

    #[error("spatial dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("calibration error: measured probe intensities are not strictly increasing in channel {channel}")]
    DegenerateProbes { channel: String },

    #[error("skeleton extraction failed: empty leaf region after thresholding ({source_id})")]
    EmptyLeafRegion { source_id: String },

    #[error("refinement failed: mask has no foreground component")]
    EmptyMask,

    #[error("dataset error for {source_id}: {message}")]
    Dataset { source_id: String, message: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("latent length mismatch: expected {expected}, got {got}")]
    LatentLengthMismatch { expected: usize, got: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite loss at {unit} {index}: {value}")]
    NonFiniteLoss {
        unit: &'static str,
        index: usize,
        value: f32,
    },

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint corruption detected in {path}: {message}")]
    CheckpointCorrupt { path: PathBuf, message: String },

    #[error("checkpoint version mismatch: file has {found}, supported {supported}")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("wrong model kind: expected {expected}, got {got}")]
    WrongModelKind { expected: String, got: String },

    #[error("config error at {key}: {message}")]
    Config { key: String, message: String },

    #[error("roc error: need at least one real and one synthetic score")]
    SingleClassRoc,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Machine-readable error category, used for CLI exit-status mapping
    /// and structured logs.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Io { .. } | Error::ImageDecode { .. } => "io",
            Error::CheckpointFormat(_)
            | Error::CheckpointCorrupt { .. }
            | Error::CheckpointVersion { .. }
            | Error::WrongModelKind { .. } => "checkpoint",
            Error::InvalidArgument(_) => "usage",
            _ => "runtime",
        }
    }
}
