use latentbrush::Error as CoreError;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Short machine-readable reason, printed ahead of the message.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => "not_found",
            CliError::Io(_) => "io",
            CliError::Core(e) => match e {
                CoreError::InvalidArgument(_) | CoreError::UnsupportedResolution(_) => "invalid_argument",
                CoreError::InvalidConstraint(_) => "invalid_constraint",
                CoreError::EmptyDataset => "empty_dataset",
                CoreError::UnreadableImage { .. } | CoreError::Image(_) => "bad_image",
                CoreError::Json(_) => "bad_json",
                CoreError::BadMagic { .. }
                | CoreError::VersionMismatch { .. }
                | CoreError::Corrupt(_)
                | CoreError::TensorShapeMismatch { .. }
                | CoreError::MissingTensor(_)
                | CoreError::UnexpectedTensor(_) => "bad_model",
                CoreError::Diverged { .. } => "diverged",
                CoreError::AllRestartsFailed | CoreError::EnergyDiverged | CoreError::SolverDiverged(_) => "numeric",
                CoreError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => "not_found",
                CoreError::Io(_) => "io",
                CoreError::Shape { .. } | CoreError::BackwardBeforeForward => "internal",
            },
        }
    }

    /// 1 for problems with what the user passed in, 2 for failures inside the run.
    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "usage" | "not_found" | "invalid_argument" | "invalid_constraint" | "empty_dataset" | "bad_image"
            | "bad_json" | "bad_model" => 1,
            _ => 2,
        }
    }

    /// The single line printed on stderr.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error[{}]: {}", self.code(), msg.trim())
    }
}
