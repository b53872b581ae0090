use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("category {value} out of range for dimension {dim} with {categories} categories")]
    CategoryOutOfRange { dim: usize, value: usize, categories: usize },

    #[error("category count {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("stick-breaking order is not ascending (stick {stick} has probability {prob})")]
    NotAscending { stick: usize, prob: f64 },

    #[error("importance weight requested on the diagonal z = z~ = {0}")]
    DiagonalWeight(usize),

    #[error("zero tail mass after stick {0}")]
    ZeroTailMass(usize),

    #[error("missing importance weight for dimension {0}")]
    MissingWeight(usize),

    #[error("state space too large: {size} > {limit}")]
    TooLarge { size: u128, limit: u128 },

    #[error("estimator {0} has continuous randomness and cannot be enumerated")]
    NotEnumerable(String),

    #[error("inconsistent swap configurations: interval [{lo}, {hi}] is empty")]
    EmptyInterval { lo: f64, hi: f64 },

    #[error("rejection sampler acceptance rate {rate:.3e} below limit ({accepted} accepted of {proposed})")]
    LowAcceptance { rate: f64, accepted: usize, proposed: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown estimator id {0:?}")]
    UnknownEstimator(String),

    #[error("training diverged at step {step}: {what}")]
    Diverged { step: usize, what: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
