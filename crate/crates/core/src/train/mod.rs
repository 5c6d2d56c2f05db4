//! Training procedures: dynamics discovery through an unrolled solver, and
//! parameter estimation by pre-training on a simulated trajectory then
//! fine-tuning network and physical parameters together.

mod discovery;
mod estimation;

pub use discovery::{discovery_loss, train_discovery, DiscoveryModel, NetworkField};
pub use estimation::{
    draw_parameters, finetune, finetune_loss, finetune_with, finetune_without_pretrain, pretrain,
    pretrain_loss, range_penalty, EstimationModel, FinetuneOptions, TimeMap, IC_WEIGHT,
};

use std::cell::RefCell;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::io::CsvTable;
use crate::optim::{adam_step, lbfgs_minimize_observed, AdamState, LbfgsConfig, LbfgsState, Schedule};

/// Loss terms at one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub epoch: usize,
    pub l_ic: f64,
    /// Weight applied to `l_ic` in `total`.
    pub ic_weight: f64,
    pub l_p: f64,
    pub l_d: f64,
    pub l_lambda: Vec<f64>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn l_lambda_total(&self) -> f64 {
        self.l_lambda.iter().sum()
    }

    /// `ic_weight * l_ic + l_p + l_d + sum(l_lambda)`, recomputed from the parts.
    pub fn recombined(&self) -> f64 {
        self.ic_weight * self.l_ic + self.l_p + self.l_d + self.l_lambda_total()
    }
}

/// Scalar loss nodes recorded on a tape, combined into the total.
pub(crate) struct LossNodes {
    pub l_ic: Var,
    pub ic_weight: f64,
    pub l_p: Var,
    pub l_d: Option<Var>,
    pub l_lambda: Vec<Var>,
}

impl LossNodes {
    /// Builds the total, runs backward and reads off the term values.
    pub(crate) fn finish(self, tape: &mut Tape) -> Result<(LossBreakdown, crate::autodiff::Gradients)> {
        let mut terms = vec![(self.ic_weight, self.l_ic), (1.0, self.l_p)];
        if let Some(d) = self.l_d {
            terms.push((1.0, d));
        }
        terms.extend(self.l_lambda.iter().map(|&v| (1.0, v)));
        let total = tape.lin_comb(&terms)?;
        let breakdown = LossBreakdown {
            epoch: 0,
            l_ic: tape.value(self.l_ic).item(),
            ic_weight: self.ic_weight,
            l_p: tape.value(self.l_p).item(),
            l_d: self.l_d.map_or(0.0, |d| tape.value(d).item()),
            l_lambda: self.l_lambda.iter().map(|&v| tape.value(v).item()).collect(),
            total: tape.value(total).item(),
        };
        let grads = tape.backward(total)?;
        Ok((breakdown, grads))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingReport {
    /// Adam epochs first (loss before each update), then the L-BFGS start
    /// point and every accepted iterate. The last entry is the loss at the
    /// returned parameters.
    pub history: Vec<LossBreakdown>,
    pub adam_epochs: usize,
    pub lbfgs_iterations: usize,
    pub lbfgs_fallback_steps: usize,
    /// Physical parameters the run started from (estimation only).
    pub initial_physical: Vec<f64>,
    /// Set when an optimizer stage aborted; the model keeps the last good
    /// parameters.
    pub failure: Option<String>,
}

impl TrainingReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.history.first().map(|b| b.total)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().map(|b| b.total)
    }

    pub fn loss_table(&self) -> CsvTable {
        let columns = ["epoch", "L_ic", "L_p", "L_d", "L_lambda_total", "total"];
        let mut t = CsvTable::new(columns.iter().map(|s| s.to_string()).collect());
        for b in &self.history {
            t.rows
                .push(vec![b.epoch as f64, b.l_ic, b.l_p, b.l_d, b.l_lambda_total(), b.total]);
        }
        t
    }

    /// Appends another stage's history, continuing the epoch count.
    pub fn extend(&mut self, other: TrainingReport) {
        let offset = self.history.last().map_or(0, |b| b.epoch + 1);
        self.history.extend(other.history.into_iter().map(|mut b| {
            b.epoch += offset;
            b
        }));
        self.adam_epochs += other.adam_epochs;
        self.lbfgs_iterations += other.lbfgs_iterations;
        self.lbfgs_fallback_steps += other.lbfgs_fallback_steps;
        if self.failure.is_none() {
            self.failure = other.failure;
        }
    }
}

/// Runs Adam then L-BFGS on `objective`, logging every evaluation that
/// corresponds to a kept iterate. Errors inside the optimizers end the run
/// early and are recorded in the report rather than returned.
pub(crate) fn run_schedule<F>(mut objective: F, start: Vec<f64>, schedule: &Schedule, stage: &str) -> (Vec<f64>, TrainingReport)
where
    F: FnMut(&[f64]) -> Result<(LossBreakdown, Vec<f64>)>,
{
    let mut report = TrainingReport::default();
    let mut params = start;
    let mut adam = AdamState::new(params.len(), schedule.adam_lr);
    for epoch in 0..schedule.adam_epochs {
        let step = objective(&params).and_then(|(mut b, g)| {
            check_losses(&b)?;
            b.epoch = epoch;
            let mut next = params.clone();
            adam_step(&mut adam, &mut next, &g)?;
            Ok((b, next))
        });
        match step {
            Ok((b, next)) => {
                report.history.push(b);
                params = next;
                report.adam_epochs += 1;
            }
            Err(e) => {
                report.failure = Some(format!("{stage}: adam epoch {epoch}: {e}"));
                break;
            }
        }
    }
    let epoch0 = report.adam_epochs;

    if report.failure.is_none() && schedule.lbfgs_max_iter > 0 {
        let last = RefCell::new(None::<LossBreakdown>);
        let logged = RefCell::new(Vec::new());
        let accepted = RefCell::new(params.clone());
        let mut state = LbfgsState::new(LbfgsConfig::new(schedule.lbfgs_lr, schedule.lbfgs_max_iter));
        let result = lbfgs_minimize_observed(
            |x: &[f64]| {
                let (b, g) = objective(x)?;
                check_losses(&b)?;
                let total = b.total;
                *last.borrow_mut() = Some(b);
                Ok((total, g))
            },
            &params,
            &mut state,
            |iteration, x| {
                accepted.borrow_mut().copy_from_slice(x);
                if let Some(mut b) = last.borrow().clone() {
                    b.epoch = epoch0 + iteration;
                    logged.borrow_mut().push(b);
                }
            },
        );
        report.history.extend(logged.into_inner());
        report.lbfgs_iterations = state.iterations;
        report.lbfgs_fallback_steps = state.fallback_steps;
        match result {
            Ok(r) => params = r.params,
            Err(e) => {
                params = accepted.into_inner();
                report.failure = Some(format!("{stage}: lbfgs: {e}"));
            }
        }
    } else if report.failure.is_none() || report.history.is_empty() {
        match objective(&params) {
            Ok((mut b, _)) => {
                b.epoch = epoch0;
                report.history.push(b);
            }
            Err(e) => {
                if report.failure.is_none() {
                    report.failure = Some(format!("{stage}: final evaluation: {e}"));
                }
            }
        }
    }
    (params, report)
}

fn check_losses(b: &LossBreakdown) -> Result<()> {
    let parts = [b.l_ic, b.l_p, b.l_d, b.total];
    if parts.iter().chain(&b.l_lambda).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Optimizer(format!("invalid loss terms {b:?}")));
    }
    Ok(())
}
