use thiserror::Error;

/// Errors produced by the calibration library.
#[derive(Debug, Error)]
pub enum GeocalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: node {node} and event {event} are {separation:.3e} m apart")]
    DegenerateGeometry {
        node: usize,
        event: usize,
        separation: f64,
    },

    #[error("could not place scene in room after {attempts} attempts")]
    InfeasibleRoom { attempts: usize },

    #[error("scale is not identifiable from the given relative geometry")]
    UnidentifiableScale,

    #[error("relative error undefined: ground truth has zero norm")]
    UndefinedDenominator,

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<GeocalError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(#[from] toml::de::Error),
}

pub type Result<T, E = GeocalError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> GeocalError {
    GeocalError::InvalidArgument(msg.into())
}
