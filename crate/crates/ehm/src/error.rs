use thiserror::Error;

/// Error type shared by all modules.
#[derive(Debug, Error)]
pub enum EhmError {
    #[error("infeasible partition: {n_grains} grains cannot fill {voxels} voxels")]
    InfeasiblePartition { n_grains: usize, voxels: usize },

    #[error("temperature {t} K outside valid range [{lo}, {hi}] K")]
    OutOfRangeTemperature { t: f64, lo: f64, hi: f64 },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("non-physical density: {0}")]
    NonPhysicalDensity(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("RVE has a single grain: no grain pairs exist")]
    NoPairs,

    #[error("infeasible bounds: {0}")]
    InfeasibleBounds(String),

    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EhmError {
    pub fn parse(path: impl Into<String>, msg: impl Into<String>) -> Self {
        EhmError::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
