use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension {dim}: unknown state {state}")]
    UnknownState { dim: usize, state: String },

    #[error("support violation: sample {sample} has zero probability under the proposal")]
    SupportViolation { sample: usize },

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("limit-state evaluation failed: {0}")]
    Evaluation(String),

    #[error("unsupported prior: {0}")]
    UnsupportedPrior(String),

    #[error("state space has {size:.3e} states, exceeding the enumeration limit of {limit}")]
    StateSpaceTooLarge { size: f64, limit: u64 },

    #[error("weighted sums do not lie on an integer lattice: {0}")]
    NonLattice(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }
}
