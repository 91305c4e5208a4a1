use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {node}: expected {expected:?}, got {got:?}")]
    Shape {
        node: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("backward called before a matching forward pass")]
    BackwardBeforeForward,
    #[error("unsupported resolution {0} (expected 32 or 64)")]
    UnsupportedResolution(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("tensor {name} has shape {found:?}, descriptor expects {expected:?}")]
    TensorShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {0} missing")]
    MissingTensor(String),
    #[error("unexpected tensor {0}")]
    UnexpectedTensor(String),

    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unreadable image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("training diverged at iteration {iteration}: {what} is not finite")]
    Diverged { iteration: usize, what: &'static str },

    #[error("every restart produced a non-finite loss")]
    AllRestartsFailed,
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
    #[error("edit energy is not finite")]
    EnergyDiverged,
    #[error("flow solver diverged: {0}")]
    SolverDiverged(String),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
