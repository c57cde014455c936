//! Model adaptation: the extended Kalman filter on states and parameters,
//! the steady-state parameter fit, and the identifiability Monte Carlo.

mod ekf;
mod fit;
mod mc;

pub use ekf::{EstimateRecord, Ekf, EkfConfig, ExtendedState, N_EXT};
pub use fit::{ss_fit, SsFitConfig, SsFitOutcome};
pub use mc::{identifiability_mc, param_names, Ellipse, FlaggedPair, McConfig, McReport, ParamStats};

use crate::model::ModelError;
use crate::nlp::{NlpError, SolveStatus};
use crate::twin::TwinError;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("model evaluation failed: {0}")]
    Model(#[from] ModelError),
    #[error("innovation covariance is not positive definite")]
    CovarianceNotPd,
    #[error("optimizer: {0}")]
    Nlp(#[from] NlpError),
    #[error("steady-state fit did not converge ({status:?} after {iterations} iterations)")]
    NoConvergence { status: SolveStatus, iterations: usize },
    #[error("twin: {0}")]
    Twin(#[from] TwinError),
    #[error("invalid estimation settings: {0}")]
    Config(String),
}

#[cfg(test)]
mod tests;
