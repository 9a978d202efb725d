use romforge_core::CoreError;

/// Command failure classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration, missing inputs or mismatched artifacts (exit 2).
    Validation(String),
    /// Solver, training or I/O failure (exit 3).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<romforge_nn::NnError> for CliError {
    fn from(e: romforge_nn::NnError) -> Self {
        CoreError::from(e).into()
    }
}
