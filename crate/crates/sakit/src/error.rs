use thiserror::Error;

/// Errors raised by the SA engine, the problem instances and the diagnostics layer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("iterate diverged at k = {k} (non-finite entry or norm above 1e12)")]
    Divergence { k: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("bias too large: b1 = {b1} must be below rho = {rho}")]
    BiasTooLarge { b1: f64, rho: f64 },
    #[error("c_V is infinite but the oracle is biased (tau0 = {tau0}, tau1 = {tau1})")]
    InfiniteCvWithBias { tau0: f64, tau1: f64 },
    #[error("invalid step schedule: {0}")]
    InvalidSchedule(String),
    #[error("non-positive stopping weight at index {index}: gamma = {gamma} is not below gamma_max")]
    NonPositiveWeight { index: usize, gamma: f64 },
    #[error("the stopping rule needs stored iterates")]
    MissingIterates,
    #[error("oracle is biased (tau0 = {tau0}, tau1 = {tau1}); the epsilon budget needs an unbiased oracle")]
    BiasedOracle { tau0: f64, tau1: f64 },
    #[error("problem has no components")]
    EmptyProblem,
    #[error("regime unavailable: {0}")]
    RegimeUnavailable(String),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("low-precision wrapper needs the constant step {expected}, schedule is {found}")]
    NonconstantStep { expected: f64, found: String },
    #[error("degenerate posterior for observation {index}")]
    DegeneratePosterior { index: usize },
    #[error("batch size {batch} exceeds the number of components {n}")]
    BatchTooLarge { batch: usize, n: usize },
    #[error("importance weights sum to zero")]
    ZeroWeightSum,
    #[error("epsilon {eps} outside the admissible interval (0, {upper})")]
    EpsilonOutOfRange { eps: f64, upper: f64 },
    #[error("transition matrix is reducible")]
    Reducible,
    #[error("matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("configuration violates a hypothesis: {0}")]
    ConfigViolation(String),
    #[error("not enough points for a rate fit: {0}")]
    InsufficientPoints(String),
}

pub type Result<T> = std::result::Result<T, Error>;
