use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("degenerate region: {0}")]
    DegenerateRegion(String),
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
    #[error("singular metric at site {0}")]
    SingularMetric(usize),
    #[error("metric leaves the equivalence band at site {0}")]
    EquivalenceViolation(usize),
    #[error("stencil out of domain: {0}")]
    StencilOutOfDomain(String),
    #[error("insufficient smoothness: {0}")]
    InsufficientSmoothness(String),
    #[error("unknown identity `{0}`")]
    UnknownIdentity(String),
    #[error("kind mismatch: {0}")]
    KindMismatch(String),
    #[error("empty test family")]
    EmptyFamily,
    #[error("solver did not converge after {iters} iterations (residual {residual:e})")]
    SolverDivergence { iters: usize, residual: f64 },
    #[error("weight {0} outside the admissible window")]
    WeightOutOfRange(f64),
    #[error("window violation: {0}")]
    WindowViolation(String),
    #[error("support violation: {0}")]
    SupportViolation(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("range error: {0}")]
    Range(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
