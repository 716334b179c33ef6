use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix maps the point to zero (norm {norm:e})")]
    NullImage { norm: f64 },

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("wedge square needs dimension >= 2, got {0}")]
    WedgeDimension(usize),

    #[error("invalid instrument: {0}")]
    InvalidInstrument(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("unknown builtin instrument `{0}` (expected UNI, AD, NDM, PNDM or DR)")]
    UnknownBuiltin(String),

    #[error("parameter {name} = {value} out of range {range}")]
    ParamOutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("{what}: size {requested} exceeds limit {limit}")]
    SizeLimit {
        what: &'static str,
        requested: usize,
        limit: usize,
    },

    #[error("combinatorial budget exceeded: {requested:e} sequences > {budget:e}")]
    BudgetExceeded { requested: f64, budget: f64 },

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("ergodicity check fails: fixed space of the adjoint channel has dimension {0}")]
    ErgFails(usize),

    #[error("peripheral eigenvalues are not roots of unity: {0}")]
    PeripheralNotRoots(String),

    #[error("peripheral eigenvalue is not simple: {0}")]
    NonSimplePeripheral(String),

    #[error("index {index} out of range 0..{len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("non-positive value in g series at n = {n}")]
    NonPositive { n: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    NotConverged { iterations: usize, last_change: f64 },

    #[error("tilt parameter {value} outside the allowed domain ({lower}, {upper})")]
    TiltOutOfRange { value: f64, lower: f64, upper: f64 },

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("curve is not convex: second difference {0:e} at grid index {1}")]
    NonConvex(f64, usize),

    #[error("event unreachable: {0}")]
    Unreachable(String),

    #[error("sample is concentrated near a hyperplane (smallest eigenvalue {0:e})")]
    HyperplaneDegenerate(f64),

    #[error("tracked product overflow at step {0}")]
    Overflow(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),
}
