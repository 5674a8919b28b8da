use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not skew-symmetric (|m + m^T| = {0:.3e})")]
    NotSkew(f64),
    #[error("matrix is not symmetric (|m - m^T| = {0:.3e})")]
    NotSymmetric(f64),
    #[error("invalid weighting matrix P: {0}")]
    BadP(String),
    #[error("invalid vehicle parameters: {0}")]
    BadParams(String),
    #[error("time-constant uncertainty alpha = {0} must be < 1")]
    AlphaTooLarge(f64),
    #[error("filtered derivative needs at least one prior sample")]
    NeedsHistory,
    #[error("epsilon = {eps} violates the ultimate-bound condition (max admissible {max_eps})")]
    EpsilonTooLarge { eps: f64, max_eps: f64 },
    #[error("rotation is not an equilibrium of the error dynamics (|f| = {0:.3e})")]
    NotEquilibrium(f64),
    #[error("eigenvalue iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("psi = {psi} exceeds the sublevel parameter xi_2 = {xi_2}")]
    OutsideSublevel { psi: f64, xi_2: f64 },
    #[error("invalid specification: {0}")]
    BadSpec(String),
    #[error("infeasible: max violation {violation:.3e} at {constraint}")]
    Infeasible { violation: f64, constraint: String },
    #[error("solver hit the iteration cap ({0})")]
    MaxIterations(usize),
    #[error("time {t} outside [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("fit tolerance {tol} not met with {segments} segments (max error {err:.3e}); allow more segments")]
    TolNotMet { tol: f64, err: f64, segments: usize },
    #[error("numerical blow-up at t = {t} (step {step}, |omega| = {omega_norm:.3e})")]
    NumericalBlowup { t: f64, step: usize, omega_norm: f64 },
    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema { .. }
            | Error::BadSpec(_)
            | Error::BadParams(_)
            | Error::BadP(_)
            | Error::AlphaTooLarge(_)
            | Error::EpsilonTooLarge { .. }
            | Error::Unknown { .. } => 2,
            Error::NumericalBlowup { .. } => 3,
            Error::Infeasible { .. } => 4,
            _ => 1,
        }
    }
}
