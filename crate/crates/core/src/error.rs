use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("numerical blow-up on rod {rod}: {detail}")]
    NumericalBlowup { rod: usize, detail: String },

    #[error("rollout diverged at step {step}")]
    Diverged { step: usize },

    #[error("invalid observation window: {0}")]
    InvalidWindow(String),

    #[error("invalid dataset id {id} (one-hot width {width})")]
    InvalidId { id: usize, width: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },

    #[error("empty pool: {0}")]
    EmptyPool(String),

    #[error("goal {0:?} lies inside an obstacle or outside the map")]
    InvalidGoal([f64; 2]),

    #[error("every MPPI sample diverged")]
    NoValidSample,

    #[error("degenerate axis: {0}")]
    DegenerateAxis(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
