use thiserror::Error;

/// Errors produced by the scattering solvers.
#[derive(Error, Debug, Clone)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature failed to converge: {0}")]
    Quadrature(String),

    #[error("no turning point at radius >= 1 (r_tp below the modeled core)")]
    TurningPointBelowCore,

    #[error("angle {theta} out of the admissible range (limit {limit})")]
    AngleOutOfRange { theta: f64, limit: f64 },

    #[error("momentum kappa^2 = {kappa_sq} exceeds the admissibility cap {cap}")]
    KappaInadmissible { kappa_sq: f64, cap: f64 },

    #[error("point is not in the required cone: {0}")]
    ConeMembership(String),

    #[error("orbit entered the core region |x| < 1 at t = {0}")]
    CoreEntry(f64),

    #[error("integrator step failure at t = {0}")]
    StepFailure(f64),

    #[error("orbit is not escaping: {0}")]
    NonEscaping(String),

    #[error("Hardy coercivity condition violated (margin {0})")]
    HardyViolation(f64),

    #[error("grid refinement did not converge (ratio {0})")]
    NonConvergence(f64),

    #[error("cutoff active at the fixed point; increase |x| beyond R0 = {r0}")]
    CutoffActive { r0: f64 },

    #[error("Picard iteration is not contracting (ratio {0})")]
    NonContraction(f64),

    #[error("infeasible parameters: {0}")]
    InfeasibleParameters(String),

    #[error("classification found no matching T after {0} doublings")]
    NoMatch(usize),

    #[error("root solve failed: {0}")]
    RootSolve(String),
}

pub type Result<T> = std::result::Result<T, Error>;
