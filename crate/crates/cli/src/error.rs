use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("verification failed: {0}")]
    Verification(String),
    /// The worst-case bound holds for every phase of the sweep.
    #[error("N = {n_atoms}, any phase: {source}")]
    Leakage {
        n_atoms: usize,
        #[source]
        source: cat_ifm::Error,
    },
    #[error(transparent)]
    Core(#[from] cat_ifm::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for bad invocations, 1 for failed or inconsistent numerics.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(cat_ifm::Error::InvalidArgument(_)) => 2,
            _ => 1,
        }
    }
}
