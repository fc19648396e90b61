use thiserror::Error;

/// Errors produced by the library layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coordinate {index} is not a finite number")]
    NonFiniteCoordinate { index: usize },

    #[error("nodes {first} and {second} coincide (distance {distance:e})")]
    CoincidentNodes {
        first: usize,
        second: usize,
        distance: f64,
    },

    #[error(
        "node {node_pos} of positive plate {plate_pos} coincides with node {node_neg} of \
         negative plate {plate_neg} (distance {distance:e}); perturb the sampling seed"
    )]
    CrossSignCoincidence {
        plate_pos: usize,
        node_pos: usize,
        plate_neg: usize,
        node_neg: usize,
        distance: f64,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("plate {plate} is infeasible: capacity {available:e} falls short of mass {required:e} (deficit {deficit:e})")]
    Infeasible {
        plate: usize,
        available: f64,
        required: f64,
        deficit: f64,
    },

    #[error("candidate is not feasible: {0}")]
    InfeasibleCandidate(String),

    #[error("negative radicand {value:e} exceeds tolerance; the diagonal policy breaks positive definiteness")]
    NegativeRadicand { value: f64 },

    #[error("short-circuit: mass concentrates on nodes of plates {plate_pos} (+) and {plate_neg} (-) at distance {distance:e}")]
    ShortCircuit {
        plate_pos: usize,
        plate_neg: usize,
        distance: f64,
    },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
