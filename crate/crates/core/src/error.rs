use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("invalid delay: {0}")]
    InvalidDelay(f64),
    #[error("empty tensor: no frames")]
    EmptyTensor,
    #[error("invalid variance for channel {channel}: {value}")]
    InvalidVariance { channel: usize, value: f64 },
    #[error("degenerate pair: reference and target are both channel {0}")]
    DegeneratePair(usize),
    #[error("channel {channel} out of range for {channels} channels")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("degenerate curvature: {0}")]
    DegenerateCurvature(String),
    #[error("flat objective: curvature weights sum to zero")]
    FlatObjective,
    #[error("degenerate steering vector: zero norm")]
    DegenerateSteering,
    #[error("non-finite objective at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },
    #[error("oracle too expensive: {dims} free delays (at most 3 supported)")]
    OracleTooExpensive { dims: usize },
    #[error("oracle budget exceeded: {evaluations} evaluations requested, budget {budget}")]
    OracleBudgetExceeded { evaluations: u64, budget: u64 },
    #[error("no valid trials: all {0} trials flagged as gross errors")]
    NoValidTrials(usize),
    #[error("missing estimate for reference channel {0}")]
    MissingReference(usize),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
