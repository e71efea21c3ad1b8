use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no instance with id {0}")]
    NoSuchInstance(u32),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("bad resize schedule: {0}")]
    BadSchedule(String),

    #[error("bad thresholds: {0}")]
    BadThresholds(String),

    #[error("patch rectangle {rect:?} lies outside a {width}x{height} image")]
    BadRect {
        rect: (usize, usize, usize, usize),
        width: usize,
        height: usize,
    },

    #[error("{flows} scale predictions but {maps} attention maps")]
    ScaleCountMismatch { flows: usize, maps: usize },

    #[error("prediction unavailable: {}", path.display())]
    PredictionUnavailable { path: PathBuf },

    #[error("both pixel sets are empty")]
    EmptyOperands,

    #[error("instance has zero area")]
    EmptyInstance,

    #[error("label map contains no instances")]
    EmptyLabelMap,

    #[error("synthetic generation infeasible: {0}")]
    SynthInfeasible(String),

    #[error("invalid label map: {0}")]
    InvalidLabelMap(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
