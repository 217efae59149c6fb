use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("plant model rejected: {0}")]
    Plant(String),

    #[error("riccati iteration failed: {0}")]
    Riccati(String),

    #[error("rank condition fails: rank {rank}, required {required}")]
    RankCondition { rank: usize, required: usize },

    #[error("index {index} out of range [{lo}, {hi}]")]
    OutOfRange { index: i64, lo: i64, hi: i64 },

    #[error("unsafe trajectory: {0}")]
    UnsafeTrajectory(String),

    #[error("point is outside the convex safe set")]
    OutsideSafeSet,

    #[error("rpi construction failed: {0}")]
    Rpi(String),

    #[error("tightened constraint set is empty: {0}")]
    EmptyTightening(String),

    #[error("optimization problem infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("exploration stalled: no left-kernel direction acts on the input")]
    ExplorationStalled,

    #[error("iteration did not converge within {0} steps")]
    NotConverged(usize),

    #[error("config error at {key} (line {line}): {message}")]
    Config {
        key: String,
        line: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}
