use thiserror::Error;

/// Errors raised by parameter handling, model evaluation and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required key `{0}`")]
    MissingField(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid parameters: {0}")]
    Invalid(String),

    #[error("singular constant: {0} evaluates to zero")]
    SingularConstant(&'static str),

    #[error("singular machine algebra: {0}")]
    Singularity(String),

    #[error("non-finite value in {0}")]
    Domain(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("{what} did not converge in {iterations} iterations (last residual {residual:.3e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("load P = {p}, Q = {q} cannot be delivered (best residual {residual:.3e})")]
    InfeasibleLoad { p: f64, q: f64, residual: f64 },

    #[error("no reference voltage in [{lo}, {hi}] holds the bus at {target} pu")]
    Autotune { lo: f64, hi: f64, target: f64 },

    #[error("{model} model is not applicable: {reason}")]
    NotApplicable { model: &'static str, reason: String },

    #[error("state became non-finite at t = {t} s (last good time {last_good} s)")]
    Divergence { t: f64, last_good: f64 },

    #[error("implicit step failed at t = {t} s (residual {residual:.3e})")]
    StepFailure { t: f64, residual: f64 },

    #[error("equilibrium not found (best residual {residual:.3e})")]
    EquilibriumNotFound { residual: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics (non-convergence, divergence, singular
    /// algebra) as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularConstant(_)
                | Error::Singularity(_)
                | Error::Domain(_)
                | Error::Convergence { .. }
                | Error::InfeasibleLoad { .. }
                | Error::Autotune { .. }
                | Error::Divergence { .. }
                | Error::StepFailure { .. }
                | Error::EquilibriumNotFound { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
