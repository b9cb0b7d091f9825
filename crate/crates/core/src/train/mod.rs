//! Loss, initialisation, optimiser, training loop and checkpoints.

mod adam;
mod checkpoint;
mod init;
mod loss;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::Result;

pub use adam::{adam_step, OptimState};
pub use checkpoint::{checkpoint_load, checkpoint_save, decode_checkpoint, encode_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use init::{xavier_bound, xavier_init, xavier_model};
pub use loss::{clipped_bce, clipped_bce_value, LossConfig};
pub use trainer::{train, LogRecord, TrainObserver};

/// Optimiser and loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_steps: u64,
    pub seed: u64,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_steps: 1000,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err!("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(config_err!("epsilon must be positive"));
        }
        Ok(())
    }
}
