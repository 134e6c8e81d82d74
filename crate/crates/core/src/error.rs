use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh configuration: {0}")]
    Config(String),

    #[error("mesh is idle; start a job before stepping")]
    Idle,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid fault: {0}")]
    Fault(String),

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid hook: {0}")]
    Hook(String),

    #[error("trial {trial} (layer {layer}, input {input}): {source}")]
    Trial {
        trial: u64,
        layer: usize,
        input: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
