use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] riesz_core::Error),

    /// The solve finished but did not converge or failed certification.
    #[error("{0}")]
    NotCertified(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 0 success, 2 infeasible, 3 non-convergence, 4 config error, 1 other.
    pub fn exit_code(&self) -> i32 {
        use riesz_core::Error as E;
        match self {
            CliError::Config(_) => 4,
            CliError::NotCertified(_) => 3,
            CliError::Core(E::Infeasible { .. } | E::InfeasibleCandidate(_)) => 2,
            CliError::Core(E::NonConvergence { .. }) => 3,
            CliError::Core(E::Parse { .. }) => 4,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
