use thiserror::Error;

/// Failure of one external black-box evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("could not start '{0}'")]
    Spawn(String),
    #[error("evaluation timed out after {0} s")]
    Timeout(f64),
    #[error("evaluator exited with status {code}: {stderr}")]
    NonZeroExit { code: i32, stderr: String },
    #[error("malformed evaluator output: {0}")]
    Malformed(String),
    #[error("evaluator output lacks function '{0}'")]
    MissingKey(String),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("state file error: {0}")]
    State(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Engine(#[from] pesc::Error),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    /// 2 for caller mistakes (bad arguments, contract violations), 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Engine(pesc::Error::Contract(_) | pesc::Error::InvalidObservation(_) | pesc::Error::Graph(_)) => 2,
            CliError::Engine(pesc::Error::NoEligibleTask(_)) => 2,
            _ => 1,
        }
    }
}
