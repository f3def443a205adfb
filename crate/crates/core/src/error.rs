use thiserror::Error;

pub type Result<T, E = KoopError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum KoopError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("trajectory left the admissible region at t={t:.6e} (|x|={norm:.3e})")]
    BlowUp { t: f64, norm: f64 },

    #[error("step size underflow at t={t:.6e} (h={h:.3e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("integrator exceeded {max_steps} steps before reaching t={target:.6e}")]
    TooManySteps { max_steps: usize, target: f64 },

    #[error("basis mismatch: expected {expected}, found {found}")]
    BasisMismatch { expected: String, found: String },

    #[error("feature matrix is rank deficient: rank {rank} < {columns}")]
    DegenerateFeatures { rank: usize, columns: usize },

    #[error("matrix is not diagonalizable within tolerance (eigenvector condition {condition:.3e})")]
    NonDiagonalizable { condition: f64 },

    #[error("eigenvalue {re:.6e}{im:+.6e}i lies on the logarithm branch cut")]
    BranchCut { re: f64, im: f64 },

    #[error("eigensolver failed to converge")]
    ConvergenceFailure,

    #[error("coordinate x{coordinate} is not a member of the dictionary")]
    CoordinateNotInDictionary { coordinate: usize },

    #[error("{failed} of {total} samples failed; first failure at sample {first_index}: {first_error}")]
    SampleFailures {
        failed: usize,
        total: usize,
        first_index: usize,
        first_error: Box<KoopError>,
    },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for KoopError {
    fn from(e: std::io::Error) -> Self {
        KoopError::Io(e.to_string())
    }
}

impl From<csv::Error> for KoopError {
    fn from(e: csv::Error) -> Self {
        KoopError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for KoopError {
    fn from(e: serde_json::Error) -> Self {
        KoopError::Io(e.to_string())
    }
}
