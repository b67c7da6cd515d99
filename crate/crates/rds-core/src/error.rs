//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample is empty; estimators need at least one record")]
    EmptySample,

    #[error("degree must be at least 1 ({context})")]
    ZeroDegree { context: &'static str },

    #[error("degree {degree} exceeds the population's maximum degree class {k_max}")]
    DegreeAboveMax { degree: u32, k_max: u32 },

    #[error("outcome {value} lies outside the declared bounds [{lo}, {hi}]")]
    OutcomeOutOfBounds { value: f64, lo: f64, hi: f64 },

    #[error("population must contain at least one unit")]
    EmptyPopulation,

    #[error("invalid f specification: {0}")]
    InvalidFSpec(String),

    #[error("f table has no entry for degree class {class}; the observed support is not covered")]
    MissingDegreeClass { class: u32 },

    #[error("invalid degree distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid outcome model: {0}")]
    InvalidOutcomeModel(String),

    #[error("inclusion probability c*f(k) = {prob} exceeds 1 at degree class {class} (c = {c})")]
    InclusionProbabilityTooLarge { c: f64, class: u32, prob: f64 },

    #[error("degree sequence sums to an odd total ({total}); no multigraph realizes it")]
    OddDegreeSum { total: u64 },

    #[error(
        "stub matching deadlocked after {attempts} attempts; \
         relax homophily/bottleneck/simple-graph constraints or change the degree sequence"
    )]
    StubMatchingFailed { attempts: u32 },

    #[error("{design} design requires a realized graph")]
    GraphRequired { design: &'static str },

    #[error("random-walk inclusion law undefined: graph is {reason}")]
    NoStationaryLaw { reason: &'static str },

    #[error("no exact {quantity} exists for {design} designs; only Monte Carlo evidence applies")]
    UnsupportedDesign {
        design: &'static str,
        quantity: &'static str,
    },

    #[error("identification requires an ignorable design; an outcome-tilted design violates that premise")]
    NonIgnorableDesign,

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown grid axis `{0}`")]
    UnknownAxis(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the error reflects bad input (configs, data files, parameter
    /// constraints) rather than a runtime failure. The CLI maps these to a
    /// distinct exit code.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::StubMatchingFailed { .. })
    }
}
