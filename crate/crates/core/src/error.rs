use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular step matrix at step {step} (stability preconditions violated?)")]
    SingularStep { step: usize },

    #[error("non-finite or exploding state at step {step}: max |entry| = {magnitude:e}")]
    NonFiniteState { step: usize, magnitude: f64 },

    #[error("Newton iteration stalled: residual {residual:e} after {iterations} iterations")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("timestamp {t} of series {series} is not an integer multiple of dt = {dt}")]
    TimestampMismatch { series: usize, t: f64, dt: f64 },

    #[error("rollout cache does not match the request: {0}")]
    CacheMismatch(String),

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("split `{0}` would be empty")]
    EmptySplit(&'static str),

    #[error("training diverged at iteration {iteration} (loss = {loss})")]
    DivergedTraining { iteration: usize, loss: f64 },

    #[error("matrix T is not symmetric (max asymmetry {0:e})")]
    AsymmetricT(f64),

    #[error("coincident points {i} and {j}: spring force is singular")]
    CoincidentPoints { i: usize, j: usize },

    #[error("degenerate (zero-length) edge at point {0}")]
    DegenerateEdge(usize),

    #[error("shape has isotropic second moments; principal axis undefined")]
    DegenerateShape,

    #[error("inverse Cayley map evaluated at its pole")]
    PoleInput,

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dt in header ({header}) disagrees with timestamps (step {observed})")]
    InconsistentDt { header: f64, observed: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// True for failures caused by numerics rather than input or IO.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SingularStep { .. }
                | Error::NonFiniteState { .. }
                | Error::NewtonDiverged { .. }
                | Error::NonFiniteGradient
                | Error::DivergedTraining { .. }
                | Error::Eigen(_)
                | Error::CoincidentPoints { .. }
                | Error::DegenerateEdge(_)
                | Error::DegenerateShape
                | Error::PoleInput
        )
    }
}
