use std::path::PathBuf;

/// Errors raised anywhere in the segmentation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("all weights are zero; distribution is undefined")]
    AllZeroWeights,
    #[error("non-positive input: {0}")]
    NonPositiveInput(&'static str),
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("instance point cloud is empty")]
    EmptyInstance,
    #[error("resolution mismatch: expected {expected:?}, got {got:?}")]
    ResolutionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("catalog has a single class; observation spread is undefined")]
    SingleClassCatalog,
    #[error("region {0} not present in mask set")]
    UnknownRegion(u32),
    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("rotation matrix is not orthonormal with det +1")]
    NonOrthonormalRotation,
    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),
    #[error("invalid mask set: {0}")]
    InvalidMask(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("unknown class id {0}")]
    UnknownClassId(u32),
    #[error("region {0} has no pixels")]
    RegionWithoutPixels(u32),
    #[error("pixels labeled {0} have no region record")]
    PixelsWithoutRegion(u32),
    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),
    #[error("unsupported PLY property {0:?}")]
    UnsupportedProperty(String),
    #[error("malformed PLY body: {0}")]
    MalformedBody(String),
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("object placement failed after {0} attempts")]
    PlacementFailure(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{stage} (view {view_id:?}): {source}")]
    Stage {
        stage: &'static str,
        view_id: Option<u32>,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn in_stage(self, stage: &'static str, view_id: Option<u32>) -> Self {
        Error::Stage {
            stage,
            view_id,
            source: Box::new(self),
        }
    }

    pub fn at_path(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage and path wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::File { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by malformed input files.
    pub fn is_input_format(&self) -> bool {
        matches!(
            self.root(),
            Error::MalformedHeader(_)
                | Error::MalformedBody(_)
                | Error::UnsupportedProperty(_)
                | Error::SchemaError(_)
                | Error::NonOrthonormalRotation
                | Error::InvalidCamera(_)
                | Error::InvalidCatalog(_)
                | Error::InvalidMask(_)
                | Error::UnknownClass(_)
                | Error::UnknownClassId(_)
                | Error::RegionWithoutPixels(_)
                | Error::PixelsWithoutRegion(_)
                | Error::NonFinite(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Image(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
