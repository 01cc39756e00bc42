use thiserror::Error;

use crate::optim::StepError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("integration produced a non-finite state at step {step}")]
    NonFiniteState { step: usize },
    #[error("time {t} outside [0, {total}]")]
    TimeOutOfRange { t: f64, total: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("training aborted at step {step}: {reason}")]
    Diverged { step: usize, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("symmetric eigendecomposition did not converge")]
    EigenNonConvergent,
    #[error("point cloud has zero variance")]
    ZeroVariance,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
