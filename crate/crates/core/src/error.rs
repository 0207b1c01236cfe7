use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh topology: {0}")]
    Topology(String),

    #[error("zero-magnitude normal at vertex {vertex}")]
    DegenerateNormal { vertex: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-finite {component} loss")]
    NonFinite { component: &'static str },

    #[error("optimization diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("embedding provider failed for view {pose_index}: {source}")]
    ViewEmbedding {
        pose_index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("transport: {0}")]
    Transport(String),

    #[error("sketch rejected: {0}")]
    SketchRejected(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image codec: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
