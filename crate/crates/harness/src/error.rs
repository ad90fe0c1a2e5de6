use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Invalid generator, metric or protocol input.
    #[error("invalid input: {0}")]
    Spec(String),

    #[error(transparent)]
    Core(#[from] weaksup::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// `true` for failures of the numerical pipeline, as opposed to bad input.
    pub fn is_solver_error(&self) -> bool {
        use weaksup::Error as E;
        match self {
            HarnessError::Core(e) => matches!(
                e,
                E::StepNotConcave(_)
                    | E::IpfpNoConvergence { .. }
                    | E::Transport(_)
                    | E::NoDescent { .. }
                    | E::MStepDiverged { .. }
                    | E::MilInfeasible(_)
                    | E::DegenerateEmbedding
            ),
            _ => false,
        }
    }
}
