use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Nn(#[from] romforge_nn::NnError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{solver} solver failed: {message}")]
    Solver { solver: &'static str, message: String },
    #[error("linear solve did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("dataset format error: {0}")]
    Format(String),
    #[error("{what} mismatch: expected {expected}, got {got}")]
    Mismatch {
        what: String,
        expected: String,
        got: String,
    },
    #[error("non-finite value during {0}")]
    NonFinite(String),
    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<CoreError>,
    },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CoreError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CoreError {
    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }

    pub fn mismatch(what: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        CoreError::Mismatch {
            what: what.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True when the failure stems from invalid user input rather than a
    /// numerical or I/O problem.
    pub fn is_validation(&self) -> bool {
        match self {
            CoreError::Config(_) | CoreError::Mismatch { .. } => true,
            CoreError::Nn(romforge_nn::NnError::Config(_)) => true,
            CoreError::Stage { source, .. } | CoreError::Trajectory { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| CoreError::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
