//! Small dense-network stack: reverse-mode backward pass, gradient reversal,
//! the three training losses, momentum SGD and a finite-difference checker.

pub mod checkpoint;
pub mod grad_check;
pub mod grl;
pub mod loss;
pub mod matrix;
pub mod mlp;
pub mod optim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_model, save_model};
pub use grad_check::{check_gradients, grad_check, AdversarialProbe, GradProbe};
pub use grl::GrlNode;
pub use loss::{loss_eval, LossKind, LossTarget};
pub use matrix::Matrix;
pub use mlp::{backward, forward, Activation, Activations, Gradients, Layer, MlpModel};
pub use optim::{sgd_step, Sgd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSchedule {
    Constant,
    /// `λ_fd · (2 / (1 + e^(−10p)) − 1)` over training progress `p ∈ [0, 1]`.
    DannRamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdLoss {
    Dann,
    MomentMatching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub lambda_fd: f64,
    pub lambda_schedule: LambdaSchedule,
    pub fd_loss: FdLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            lambda_fd: 0.1,
            lambda_schedule: LambdaSchedule::DannRamp,
            fd_loss: FdLoss::Dann,
        }
    }
}

impl TrainConfig {
    /// Zero epochs is allowed and means "return the initialization".
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.lambda_fd >= 0.0 && self.lambda_fd.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda_fd must be >= 0, got {}", self.lambda_fd)));
        }
        Ok(())
    }

    /// Weight of the feature-distribution loss at progress `p ∈ [0, 1]`.
    pub fn lambda_at(&self, progress: f64) -> f64 {
        match self.lambda_schedule {
            LambdaSchedule::Constant => self.lambda_fd,
            LambdaSchedule::DannRamp => self.lambda_fd * (2.0 / (1.0 + (-10.0 * progress).exp()) - 1.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        let cfg = TrainConfig { lambda_fd: 2.0, ..TrainConfig::default() };
        assert_eq!(cfg.lambda_at(0.0), 0.0);
        assert!((cfg.lambda_at(1.0) - 2.0 * (2.0 / (1.0 + (-10f64).exp()) - 1.0)).abs() < 1e-15);
        let c = TrainConfig { lambda_schedule: LambdaSchedule::Constant, ..cfg };
        assert_eq!(c.lambda_at(0.3), 2.0);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lambda_fd: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_ok());
    }
}
