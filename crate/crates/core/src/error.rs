use crate::geom::FdiTooth;

/// Errors produced anywhere in the reconstruction stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid FDI tooth: quadrant {quadrant}, position {position}")]
    InvalidTooth { quadrant: u8, position: u8 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point ({:.6}, {:.6}, {:.6}) lies outside the voxel bounds", .point[0], .point[1], .point[2])]
    OutOfBounds { point: [f64; 3] },

    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("tooth {0} is not present")]
    MissingTooth(FdiTooth),

    #[error("missing registration transform for tooth {0}")]
    MissingTransform(FdiTooth),

    #[error("tooth placement failed: {0}")]
    Placement(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("function is not deterministic: two forward passes disagree")]
    NonDeterministic,

    #[error("no teeth extracted: {0}")]
    NoTeethExtracted(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures caused by numerics (NaN/Inf, degenerate solves)
    /// rather than bad input or I/O.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite(_) | Error::Degenerate(_) | Error::NonDeterministic => true,
            Error::Context { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, reason: impl Into<String>) -> Error {
        Error::Format {
            path: path.as_ref().display().to_string(),
            reason: reason.into(),
        }
    }
}
