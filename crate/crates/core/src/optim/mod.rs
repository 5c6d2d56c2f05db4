//! Adam and L-BFGS over flat parameter vectors, and the two-phase
//! schedule that chains them.

mod adam;
mod lbfgs;

pub use adam::{adam_step, AdamState};
pub use lbfgs::{
    lbfgs_minimize, lbfgs_minimize_observed, LbfgsConfig, LbfgsReport, LbfgsState, LineSearchRecord, StopReason,
};

use crate::error::{Error, Result};

/// Adam for a fixed number of epochs, then L-BFGS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub adam_lr: f64,
    pub adam_epochs: usize,
    pub lbfgs_lr: f64,
    pub lbfgs_max_iter: usize,
}

impl Schedule {
    pub fn discovery() -> Self {
        Self {
            adam_lr: 1e-3,
            adam_epochs: 2000,
            lbfgs_lr: 1.0,
            lbfgs_max_iter: 500,
        }
    }

    pub fn pretrain() -> Self {
        Self {
            adam_lr: 1e-3,
            adam_epochs: 1000,
            lbfgs_lr: 1.0,
            lbfgs_max_iter: 500,
        }
    }

    pub fn finetune() -> Self {
        Self {
            adam_lr: 1e-4,
            adam_epochs: 500,
            lbfgs_lr: 1.0,
            lbfgs_max_iter: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.adam_lr > 0.0 && self.lbfgs_lr > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        Ok(())
    }
}
