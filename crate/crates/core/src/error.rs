use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid spin size: 2j = {0} (must be a positive integer)")]
    InvalidSpin(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("phase-space variances violate b*c = hbar: b*c = {product}, hbar = {hbar}")]
    UncertaintyViolation { product: f64, hbar: f64 },

    #[error("operator term exceeds power limits (m,n <= {max_boson}; p,q,r <= {max_spin}): {term}")]
    PowerLimit {
        term: String,
        max_boson: u32,
        max_spin: u32,
    },

    #[error("chart singularity 1 + UV = 0 at U = {big_u}, V = {big_v}")]
    ChartSingularity { big_u: Complex64, big_v: Complex64 },

    #[error(
        "coherent-state truncation tail mass {tail:e} exceeds threshold {threshold:e}; need n_max >= {required_n_max}"
    )]
    Truncation {
        tail: f64,
        threshold: f64,
        required_n_max: usize,
    },

    #[error("integrator step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("trajectory diverged at t = {t} (|state| = {magnitude:e})")]
    Divergence { t: f64, magnitude: f64 },

    #[error("integrator exceeded {0} steps")]
    TooManySteps(usize),

    #[error("newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("singular shooting jacobian (|det| = {det:e}); likely near a caustic")]
    SingularJacobian { det: f64 },

    #[error("line search failed after {halvings} halvings (residual {residual:e})")]
    LineSearchFailed { halvings: usize, residual: f64 },

    #[error("caustic: |det Mbb| = {det:e} below threshold")]
    Caustic { det: f64 },

    #[error("hamiltonian is not separable (contains boson-spin product terms)")]
    NotSeparable,

    #[error("hamiltonian is not of the form H0 + hbar s.C: {0}")]
    NotSpinHalfLinear(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("continuation failed at parameter {parameter}: {source}")]
    Continuation {
        parameter: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("LU breakdown (zero pivot) for N = {n}")]
    LuBreakdown { n: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
