//! Alternating discriminator/generator optimisation, checkpointed state,
//! the epoch loop and finite-difference gradient verification.

mod adam;
mod gradcheck;
mod run;
mod state;
mod step;
mod suite;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use gradcheck::{compare_gradients, gradient_check, GradCheck, Probe, DEFAULT_EPSILON};
pub use run::{
    epoch_order, steps_per_epoch, train, train_on, TrainOutcome, ABORT_FILE, CHECKPOINT_DIR,
    LATEST_FILE, LOSS_FILE, SAMPLE_DIR,
};
pub use state::{TrainState, STATE_KIND};
pub use step::{
    d_phase_loss, discriminator_update, g_phase_loss, generator_pass, generator_update, train_step,
    Batch, GenPass,
};
pub use suite::{
    architecture_suite, check_params, config_suite, gradient_suite, standalone_loss_suite,
    SuiteEntry, ARCH_TOLERANCE, LOSS_TOLERANCE,
};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::models::ArchConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub g_steps_per_d_step: usize,
    pub seed: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    pub manifest: Option<PathBuf>,
    /// Stop after this many steps even if epochs remain.
    pub max_steps: Option<u64>,
    /// Images in the per-epoch sample grid.
    pub grid_size: usize,
    /// Single-threaded, fully reproducible execution.
    pub deterministic: bool,
}

impl TrainConfig {
    /// Defaults for an architecture: batch 16 up to 64 px, 4 above.
    pub fn new(arch: ArchConfig) -> Self {
        let batch_size = if arch.image_size <= 64 { 16 } else { 4 };
        Self {
            arch,
            weights: LossWeights::default(),
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size,
            epochs: 14,
            g_steps_per_d_step: 1,
            seed: 0,
            checkpoint_interval: 500,
            manifest: None,
            max_steps: None,
            grid_size: 9,
            deterministic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.weights.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.adam_eps > 0.0)
        {
            return Err(Error::invalid(
                "Adam betas must lie in [0, 1) and eps be positive",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.g_steps_per_d_step == 0 {
            return Err(Error::invalid("g_steps_per_d_step must be at least 1"));
        }
        if self.grid_size == 0 {
            return Err(Error::invalid("grid size must be positive"));
        }
        Ok(())
    }
}
