use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate correlation geometry: {0}")]
    DegenerateGeometry(String),
    #[error("correlation triple is not positive semi-definite: {0}")]
    InvalidTriple(String),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("series did not converge within i_max={i_max} (last group {last:.3e})")]
    SeriesDivergence { i_max: usize, last: f64 },
    #[error("target {target} lies within 6 sqrt(tau) of an uncorrected boundary")]
    DomainTooNarrow { target: f64 },
    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),
    #[error("order {0} is not supported (max {1})")]
    UnsupportedOrder(usize, usize),
    #[error("point ({0}, {1}) is outside the grid")]
    OutOfDomain(f64, f64),
    #[error("fixed-point iteration diverged at step {step} after {iters} iterations")]
    FixedPointDiverged { step: usize, iters: usize },
    #[error("singular linear system (pivot {0:.3e})")]
    SingularSystem(f64),
    #[error("value function has zero convexity in wealth")]
    ZeroConvexity,
    #[error("evaluation failed: {0}")]
    EvaluationFailure(String),
    #[error("exponent {0:.1} exceeds the overflow guard; gamma*K is too large")]
    ExponentOverflow(f64),
    #[error("psi = gamma*K_z = {psi} exceeds cap {cap}")]
    PsiTooLarge { psi: f64, cap: f64 },
    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },
}

pub type Result<T> = std::result::Result<T, Error>;
