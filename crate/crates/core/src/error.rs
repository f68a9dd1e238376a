use thiserror::Error;

/// Errors raised by the orchestration engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid workflow: {0}")]
    InvalidWorkflow(String),
    #[error("path {0:?} does not resolve")]
    BadPath(Vec<usize>),
    #[error("goal `{0}` has an empty token set")]
    EmptyGoal(String),
    #[error("duplicate goal id `{0}`")]
    DuplicateGoal(String),
    #[error("no eligible agent")]
    NoEligibleAgent,
    #[error("decomposition failed for goal `{0}`")]
    DecompositionFailure(String),
    #[error("oracle verification requires an expected workflow")]
    MissingOracle,
    #[error("diagnose called on a passing verdict")]
    NotAFailure,
    #[error("repair rejected: {0}")]
    RejectedRepair(String),
    #[error("repair made no progress")]
    StalledRepair,
    #[error("repair budget exhausted")]
    BudgetExhausted,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("infeasible corpus profile: {0}")]
    InfeasibleProfile(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Process exit code for this error: 2 for usage and configuration
    /// problems, 3 for I/O and corrupt input, 4 for internal invariant
    /// breaches, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Precondition(_) | Error::InfeasibleProfile(_) => 2,
            Error::Io(_) | Error::Parse { .. } | Error::DuplicateGoal(_) | Error::EmptyGoal(_) | Error::InvalidWorkflow(_) => 3,
            Error::Invariant(_) => 4,
            _ => 1,
        }
    }
}
