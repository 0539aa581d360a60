use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("simulation diverged at frame {frame}, substep {substep}, particle {particle}: {reason}")]
    SimulationDiverged {
        frame: usize,
        substep: usize,
        particle: usize,
        reason: String,
    },

    #[error("CFL violated at frame {frame}, substep {substep}: max displacement {displacement:.3e} >= dx {dx:.3e}")]
    Cfl {
        frame: usize,
        substep: usize,
        displacement: f64,
        dx: f64,
    },

    #[error("trajectory has no adjoint checkpoints; re-run the simulation with checkpointing enabled")]
    MissingCheckpoints,

    #[error("non-finite loss at iteration {iteration}: {term}")]
    NonFiniteLoss { iteration: usize, term: String },

    #[error("degenerate solid: {0}")]
    DegenerateSolid(String),

    #[error("empty point set")]
    EmptyPointSet,

    #[error("mass must be positive, got {0}")]
    NonPositiveMass(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in CLI failure records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::SimulationDiverged { .. } => "simulation_diverged",
            Error::Cfl { .. } => "cfl",
            Error::MissingCheckpoints => "missing_checkpoints",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::DegenerateSolid(_) => "degenerate_solid",
            Error::EmptyPointSet => "empty_point_set",
            Error::NonPositiveMass(_) => "non_positive_mass",
            Error::Unsupported(_) => "unsupported",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }
}
