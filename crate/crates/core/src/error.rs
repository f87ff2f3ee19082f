use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdeError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("simulation overflow for subject {subject} at step {step}")]
    SimulationOverflow { subject: usize, step: usize },

    #[error("diffusion domain error for subject {subject} at step {step}: state {state} is not positive")]
    DiffusionDomain { subject: usize, step: usize, state: f64 },

    #[error("singular diffusion for subject {subject} at step {step}")]
    SingularDiffusion { subject: usize, step: usize },

    #[error("non-finite value while updating coordinate {coordinate}")]
    NonFiniteCoordinate { coordinate: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("grid search refused: dimension {dim} exceeds the oracle limit of {max}")]
    GridSearchDimension { dim: usize, max: usize },

    #[error("model is not identifiable: {0}")]
    NotIdentifiable(String),

    #[error("bootstrap failed: {failed} of {total} replicates did not converge")]
    BootstrapFailures { failed: usize, total: usize },

    #[error(
        "ABC trial budget of {trials} exhausted with {accepted} acceptances (rate {rate:.3e})"
    )]
    AbcBudget { trials: u64, accepted: usize, rate: f64 },

    #[error("Gibbs sampler internal consistency: {0}")]
    GibbsConsistency(String),

    #[error("empty input: {0}")]
    Empty(String),
}

impl SdeError {
    /// Numerical failures, as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SdeError::SimulationOverflow { .. }
                | SdeError::DiffusionDomain { .. }
                | SdeError::SingularDiffusion { .. }
                | SdeError::NonFiniteCoordinate { .. }
                | SdeError::Numerical(_)
                | SdeError::BootstrapFailures { .. }
                | SdeError::AbcBudget { .. }
                | SdeError::GibbsConsistency(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, SdeError>;
