use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: &'static str, expected: usize, actual: usize },

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid distribution ({what}): {detail}")]
    InvalidDistribution { what: &'static str, detail: String },

    #[error("invalid feature matrix: {0}")]
    InvalidFeatures(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("stationary distribution is not unique: eigenvalue 1 has multiplicity {multiplicity}")]
    NonUniqueStationary { multiplicity: usize },

    #[error("chain did not mix within {cap} steps (slem = {slem})")]
    MixingCapExceeded { cap: usize, slem: f64 },

    #[error("linear solve failed: {0}")]
    SolveFailed(&'static str),

    #[error("A_theta is singular or ill-conditioned (condition number {condition:e})")]
    SingularA { condition: f64 },

    #[error("exploration margin {margin} is not positive")]
    NonPositiveMargin { margin: f64 },

    #[error("action {action} has zero probability in state {state}")]
    ZeroProbabilityAction { state: usize, action: usize },

    #[error("step size {alpha} exceeds the admissible limit {limit}")]
    StepTooLarge { alpha: f64, limit: f64 },

    #[error("small-gain condition violated: 2ce = {two_ce} >= 1")]
    GainTooLarge { two_ce: f64 },

    #[error("tail window for t = {t} holds only {points} logged points")]
    WindowIncomplete { t: usize, points: usize },

    #[error("insufficient data for rate fit: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("at theta grid point {index}: {source}")]
    AtGridPoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("at iteration {t}: {source}")]
    AtIteration {
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },
}

impl Error {
    pub(crate) fn at_iteration(self, t: usize) -> Self {
        Error::AtIteration { t, source: Box::new(self) }
    }

    pub(crate) fn at_grid_point(self, index: usize) -> Self {
        Error::AtGridPoint { index, source: Box::new(self) }
    }

    /// Innermost error, with iteration / grid context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIteration { source, .. } | Error::AtGridPoint { source, .. } => source.root(),
            other => other,
        }
    }
}
