use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PrismError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PrismError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("tensor contains non-finite values ({0})")]
    NonFinite(String),

    #[error("svd did not converge within {sweeps} sweeps")]
    NonConvergence { sweeps: usize },

    #[error("no activations recorded; run a forward pass with recording enabled first")]
    EmptyStack,

    #[error("{0} principal components cannot be rendered as RGB; exactly 3 are required")]
    UnrenderableComponents(usize),

    #[error("not an npy file (bad magic bytes)")]
    BadMagic,

    #[error("unsupported npy version {0}.{1}; only 1.0 is supported")]
    UnsupportedVersion(u8, u8),

    #[error("unsupported npy dtype '{0}'; expected '<f4' or '<f8'")]
    UnsupportedDtype(String),

    #[error("fortran-ordered npy arrays are not supported")]
    FortranOrderUnsupported,

    #[error("npy arrays of rank {0} are not supported")]
    ShapeRankUnsupported(usize),

    #[error("npy payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("malformed npy header: {0}")]
    BadNpyHeader(String),

    #[error("layer '{layer}': manifest declares shape {declared:?} but file holds {actual:?}")]
    ManifestShapeMismatch {
        layer: String,
        declared: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("batch size mismatch: expected {expected}, '{layer}' has {found}")]
    BatchSizeMismatch {
        layer: String,
        expected: usize,
        found: usize,
    },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("bad ppm header: {0}")]
    BadHeader(String),

    #[error("ppm pixel data truncated: expected {expected} bytes, found {found}")]
    TruncatedPixels { expected: usize, found: usize },

    #[error("invalid model description: {0}")]
    InvalidModel(String),

    #[error("json error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PrismError {
    /// Errors raised by the numerical pipeline itself rather than by its inputs.
    pub fn is_pipeline_failure(&self) -> bool {
        matches!(
            self,
            PrismError::EmptyStack | PrismError::NonConvergence { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            PrismError::MissingFile(path)
        } else {
            PrismError::Io { path, source }
        }
    }
}
