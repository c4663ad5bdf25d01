use thiserror::Error;

/// Errors raised by the solver and its diagnostics.
#[derive(Debug, Error)]
pub enum MfgError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("kinetic cost is infinite: cell {cell} has m = {m:e} but flux magnitude {flux:e}")]
    InfeasibleKinetic { cell: usize, m: f64, flux: f64 },

    #[error("linear solver did not reach tolerance {tol:e} in {iterations} iterations (residual {residual:e})")]
    SolverDiverged {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("alternating projection stalled after {rounds} rounds (min m = {min_m:e})")]
    AlternatingProjectionStalled { rounds: usize, min_m: f64 },

    #[error("input too negative for clipping: min m = {0:e}")]
    SeverelyNegative(f64),

    #[error("descent hit the iteration cap ({0}) before converging")]
    MaxIterExceeded(usize),

    #[error("energy {energy:e} fell below the divergence floor {floor:e}")]
    EnergyDiverging { energy: f64, floor: f64 },

    #[error("fictitious play stalled after {iterations} iterations (update {update:e})")]
    FixedPointStalled { iterations: usize, update: f64 },

    #[error("continuation failed at way-point {index}: {source}")]
    Continuation {
        index: usize,
        #[source]
        source: Box<MfgError>,
    },

    #[error("rescaled profile under-resolved: {cells:.2} cells across half-height width (need 8)")]
    ScaleOutOfRange { cells: f64 },

    #[error("cell {0} carries flux with zero density")]
    DegenerateCell(usize),

    #[error("HJB marching diverged: {0}")]
    MarchingDiverged(String),

    #[error("only {0} usable tail cells for the decay fit (need 10)")]
    InsufficientTail(usize),

    #[error("potentials share no common zero")]
    NoCommonZero,

    #[error("rate fit needs >= 4 points spanning >= 1.5 decades (got {points} points, {decades:.2} decades)")]
    InsufficientSpan { points: usize, decades: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("schema mismatch in {file}: {message}")]
    SchemaMismatch { file: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MfgError>;
