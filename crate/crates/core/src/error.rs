use thiserror::Error;

/// Errors raised by model evaluation, integration, steady-state search and
/// spectral analysis.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("unknown model '{0}'")]
    UnknownModel(String),

    #[error("unknown parameter {name} for model {model}")]
    UnknownParameter { model: String, name: String },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: String,
        value: f64,
        reason: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model domain error at state {state:?}: {reason}")]
    ModelDomain { state: Vec<f64>, reason: String },

    /// A step or shooting matrix could not be factored. With a nonsingular
    /// `dq/dx` this does not happen, so the usual cause is an index-1 DAE.
    #[error("singular matrix in {context}{}: the system may be a higher-index DAE or degenerate", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Singular {
        context: &'static str,
        step: Option<usize>,
    },

    #[error("Newton iteration failed at t = {time:e} after {iterations} iterations (scaled residual {residual:e}, iterate {iterate:?})")]
    StepFailure {
        time: f64,
        iterations: usize,
        residual: f64,
        iterate: Vec<f64>,
    },

    #[error("shooting Newton did not converge after {iterations} iterations (last residual {residual:e})")]
    ShootingDivergence { iterations: usize, residual: f64 },

    #[error("conservative or degenerate orbit: shooting Jacobian condition estimate {condition:e}; use period detection instead")]
    DegenerateOrbit { condition: f64 },

    #[error("shooting converged to a constant solution (equilibrium), not an oscillation")]
    ConstantSolution,

    #[error("no oscillation detected: {0}")]
    NoOscillation(String),

    #[error("QR iteration failed to converge after {iterations} sweeps")]
    EigenFailure { iterations: usize },

    #[error("too few usable cycles ({usable}) above the noise floor; increase eps")]
    TooFewCycles { usable: usize },

    #[error("no oscillation point in range: power curves do not cross on the grid")]
    NoIntersection,

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
