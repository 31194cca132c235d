use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no linear instability: all Fourier coefficients are nonnegative up to k = {k_max}")]
    NoInstability { k_max: f64 },

    #[error("uniform state is linearly stable (max growth rate {psi_max})")]
    StableSystem { psi_max: f64 },

    #[error("initial mode amplitude is zero and no particle count was given")]
    DegenerateInit,

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("time step {dt} violates the positivity bound {bound}")]
    CflViolation { dt: f64, bound: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (best residual {best_residual:e})")]
    NoConvergence { iterations: usize, best_residual: f64 },

    #[error("branch continuation failed at its first point: {0}")]
    EmptyBranch(String),

    #[error("scaled state is not a fixed point (residual {residual:e})")]
    Residual { residual: f64 },

    #[error("gamma = {gamma} is not above the transition point {gamma_c}")]
    Subcritical { gamma: f64, gamma_c: f64 },

    #[error("invalid cluster geometry: {0}")]
    Geometry(String),

    #[error("ODE step size underflow at t = {t}")]
    StepFailure { t: f64 },

    #[error("a single cluster is absorbing; no further events")]
    Absorbed,

    #[error("quadrature failed to reach tolerance (estimated error {error:e})")]
    Quadrature { error: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
