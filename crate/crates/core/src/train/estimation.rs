use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::data::ObservationSet;
use crate::error::{Error, Result};
use crate::network::{init_network, BoundNetwork, Checkpoint, NetworkParams, NetworkSpec, TrainingPhase};
use crate::optim::Schedule;
use crate::problems::Problem;
use crate::solvers::{integrate, SolverScheme, TimeGrid};

use super::{run_schedule, LossBreakdown, LossNodes, TrainingReport};

/// Weight on the initial-condition term during fine-tuning.
pub const IC_WEIGHT: f64 = 1e3;

/// Affine map of the horizon `[t0, t1]` onto `[-1, 1]`, applied to the time
/// input of estimation networks so that tanh units see inputs of order one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeMap {
    pub t0: f64,
    pub t1: f64,
}

impl TimeMap {
    pub fn new(t0: f64, t1: f64) -> Result<Self> {
        if !(t1 > t0) {
            return Err(Error::invalid(format!("empty time range [{t0}, {t1}]")));
        }
        Ok(Self { t0, t1 })
    }

    pub fn for_problem(problem: &Problem) -> Self {
        Self {
            t0: problem.t0,
            t1: problem.t_end,
        }
    }

    pub fn apply(&self, t: f64) -> f64 {
        2.0 * (t - self.t0) / (self.t1 - self.t0) - 1.0
    }

    /// `d(mapped)/dt`.
    pub fn rate(&self) -> f64 {
        2.0 / (self.t1 - self.t0)
    }

    fn column(&self, times: &[f64]) -> Tensor {
        Tensor::column(times.iter().map(|&t| self.apply(t)).collect())
    }
}

/// A time-to-state network plus the current physical parameter estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationModel {
    pub spec: NetworkSpec,
    pub params: NetworkParams,
    pub physical: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    pub phase: TrainingPhase,
    pub time_map: TimeMap,
}

impl EstimationModel {
    /// Network states at `times`, one row per time.
    pub fn predict(&self, times: &[f64]) -> Result<Tensor> {
        self.spec.forward(&self.params, &self.time_map.column(times))
    }

    /// Network time derivative at `times`.
    pub fn predict_derivative(&self, times: &[f64]) -> Result<Tensor> {
        let d = self.spec.time_derivative(&self.params, &self.time_map.column(times))?;
        Ok(Tensor::new(d.rows(), d.cols(), d.data().iter().map(|v| v * self.time_map.rate()).collect())?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            spec: self.spec,
            params: self.params.clone(),
            physical: self.physical.clone(),
            phase: self.phase,
        }
    }

    /// Rebuilds a model saved for `problem`; the time map and bounds come
    /// from the problem.
    pub fn from_checkpoint(ckpt: Checkpoint, problem: &Problem) -> Result<Self> {
        if ckpt.physical.len() != problem.param_count() {
            return Err(Error::invalid(format!(
                "checkpoint carries {} physical parameters, {} needs {}",
                ckpt.physical.len(),
                problem.name(),
                problem.param_count()
            )));
        }
        Ok(Self {
            spec: ckpt.spec,
            params: ckpt.params,
            physical: ckpt.physical,
            bounds: problem.bounds.clone(),
            phase: ckpt.phase,
            time_map: TimeMap::for_problem(problem),
        })
    }
}

/// One uniform draw inside each `[min, max]`.
pub fn draw_parameters<R: Rng>(bounds: &[(f64, f64)], rng: &mut R) -> Vec<f64> {
    bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect()
}

/// `min(0, v - lo)^2 + max(0, v - hi)^2`.
pub fn range_penalty(value: f64, (lo, hi): (f64, f64)) -> f64 {
    let below = (value - lo).min(0.0);
    let above = (value - hi).max(0.0);
    below * below + above * above
}

fn check_spec(spec: &NetworkSpec, problem: &Problem) -> Result<()> {
    if spec.input_dim != 1 || spec.output_dim != problem.state_dim() {
        return Err(Error::invalid(format!(
            "estimation network must map time to {} states, got {} -> {}",
            problem.state_dim(),
            spec.input_dim,
            spec.output_dim
        )));
    }
    Ok(())
}

/// `L_ic + L_p` of pre-training: network at `times[0]` against `x0` and
/// network at every time against the simulated `x_nm`.
pub fn pretrain_loss(
    spec: &NetworkSpec,
    params: &[f64],
    time_map: &TimeMap,
    times: &[f64],
    x_nm: &Tensor,
    x0: &[f64],
) -> Result<(LossBreakdown, Vec<f64>)> {
    if x_nm.rows() != times.len() {
        return Err(Error::shape("pretrain_loss", "one simulated state per time is required"));
    }
    let mut tape = Tape::new();
    let net = BoundNetwork::bind(&mut tape, *spec, params, true)?;
    let t = tape.constant(time_map.column(times))?;
    let out = net.forward(&mut tape, t)?;

    let first = tape.slice(out, Axis::Rows, 0, 1)?;
    let start = tape.constant(Tensor::row(x0.to_vec()))?;
    let ic = tape.sub(first, start)?;
    let l_ic = tape.mean_square(ic)?;

    let target = tape.constant(x_nm.clone())?;
    let diff = tape.sub(out, target)?;
    let l_p = tape.mean_square(diff)?;

    let (b, grads) = LossNodes {
        l_ic,
        ic_weight: 1.0,
        l_p,
        l_d: None,
        l_lambda: Vec::new(),
    }
    .finish(&mut tape)?;
    Ok((b, net.flat_gradient(&grads)))
}

/// Fits the network to a numerical solution of the known equations at
/// parameters drawn uniformly inside the bounds. A draw whose solve fails is
/// replaced once.
pub fn pretrain(
    problem: &Problem,
    grid: &TimeGrid,
    spec: NetworkSpec,
    scheme: &SolverScheme,
    schedule: &Schedule,
    init_seed: u64,
    lambda_seed: u64,
) -> Result<(EstimationModel, TrainingReport)> {
    schedule.validate()?;
    check_spec(&spec, problem)?;
    let mut rng = ChaCha8Rng::seed_from_u64(lambda_seed);
    let mut attempt = 0;
    let (lambda, x_nm) = loop {
        let lambda = draw_parameters(&problem.bounds, &mut rng);
        match integrate(&problem.field(&lambda)?, &problem.initial_condition, grid, scheme) {
            Ok(traj) => break (lambda, traj.states),
            Err(e) if attempt == 0 => {
                log::warn!("pre-training solve failed at {lambda:?} ({e}); redrawing");
                attempt += 1;
            }
            Err(e) => return Err(e.in_stage("pre-training solve")),
        }
    };
    let time_map = TimeMap::for_problem(problem);
    let times = grid.times();
    let (params, mut report) = run_schedule(
        |p| pretrain_loss(&spec, p, &time_map, &times, &x_nm, &problem.initial_condition),
        init_network(&spec, init_seed).into_values(),
        schedule,
        "pre-training",
    );
    report.initial_physical = lambda.clone();
    let model = EstimationModel {
        spec,
        params: NetworkParams::from_values(&spec, params)?,
        physical: lambda,
        bounds: problem.bounds.clone(),
        phase: TrainingPhase::Pretrained,
        time_map,
    };
    Ok((model, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneOptions {
    pub ic_weight: f64,
    /// Keep the physical parameters fixed and train only the network.
    pub freeze_physical: bool,
}

impl Default for FinetuneOptions {
    fn default() -> Self {
        Self {
            ic_weight: IC_WEIGHT,
            freeze_physical: false,
        }
    }
}

/// Fine-tuning loss over `theta_tilde = (theta; lambda)`:
/// `w L_ic + L_p + L_d + sum_i L_lambda_i`, where `L_p` compares the network's
/// time derivative with the governing equations evaluated on the network
/// output. Returns the gradient over the whole augmented vector (zeros in
/// the physical slots when frozen).
pub fn finetune_loss(
    problem: &Problem,
    spec: &NetworkSpec,
    time_map: &TimeMap,
    theta_tilde: &[f64],
    obs: &ObservationSet,
    options: &FinetuneOptions,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let n_net = spec.param_count();
    if theta_tilde.len() != n_net + problem.param_count() {
        return Err(Error::shape("finetune_loss", "augmented vector has the wrong length"));
    }
    let (theta, lambda) = theta_tilde.split_at(n_net);
    let mut tape = Tape::new();
    let net = BoundNetwork::bind(&mut tape, *spec, theta, true)?;
    let lam: Vec<Var> = lambda
        .iter()
        .map(|&v| {
            let s = Tensor::scalar(v);
            if options.freeze_physical {
                tape.constant(s)
            } else {
                tape.param(s)
            }
        })
        .collect::<Result<_>>()?;

    let times = obs.times();
    let t = tape.constant(time_map.column(&times))?;
    let (out, dout) = net.forward_with_tangent(&mut tape, t)?;
    let dxdt = tape.scale(dout, time_map.rate())?;

    let first = tape.slice(out, Axis::Rows, 0, 1)?;
    let start = tape.constant(Tensor::row(problem.initial_condition.clone()))?;
    let ic = tape.sub(first, start)?;
    let l_ic = tape.mean_square(ic)?;

    let f_param = problem.record_rhs(&mut tape, out, &lam)?;
    let resid = tape.sub(dxdt, f_param)?;
    let l_p = tape.mean_square(resid)?;

    let x_obs = tape.constant(obs.states.clone())?;
    let d = tape.sub(out, x_obs)?;
    let l_d = tape.mean_square(d)?;

    let mut l_lambda = Vec::with_capacity(lam.len());
    for (&v, &(lo, hi)) in lam.iter().zip(&problem.bounds) {
        let value = tape.value(v).item();
        let term = if value < lo || value > hi {
            let edge = tape.constant(Tensor::scalar(if value < lo { lo } else { hi }))?;
            let gap = tape.sub(v, edge)?;
            tape.square(gap)?
        } else {
            tape.constant(Tensor::scalar(0.0))?
        };
        l_lambda.push(term);
    }

    let (b, grads) = LossNodes {
        l_ic,
        ic_weight: options.ic_weight,
        l_p,
        l_d: Some(l_d),
        l_lambda,
    }
    .finish(&mut tape)?;
    let mut grad = net.flat_gradient(&grads);
    grad.extend(
        lam.iter()
            .map(|&v| grads.get(v).map_or(0.0, |g| g.item())),
    );
    Ok((b, grad))
}

/// Joint optimisation of network and physical parameters from a
/// pre-trained model.
pub fn finetune(
    model: &EstimationModel,
    problem: &Problem,
    obs: &ObservationSet,
    schedule: &Schedule,
) -> Result<(EstimationModel, TrainingReport)> {
    finetune_with(model, problem, obs, schedule, &FinetuneOptions::default())
}

pub fn finetune_with(
    model: &EstimationModel,
    problem: &Problem,
    obs: &ObservationSet,
    schedule: &Schedule,
    options: &FinetuneOptions,
) -> Result<(EstimationModel, TrainingReport)> {
    if !matches!(model.phase, TrainingPhase::Pretrained | TrainingPhase::Finetuned) {
        return Err(Error::invalid(format!(
            "fine-tuning needs a pre-trained model, got phase '{}'",
            model.phase.name()
        )));
    }
    finetune_core(model, problem, obs, schedule, options)
}

fn finetune_core(
    model: &EstimationModel,
    problem: &Problem,
    obs: &ObservationSet,
    schedule: &Schedule,
    options: &FinetuneOptions,
) -> Result<(EstimationModel, TrainingReport)> {
    schedule.validate()?;
    check_spec(&model.spec, problem)?;
    if obs.dim() != problem.state_dim() {
        return Err(Error::invalid("observations do not match the problem's state size"));
    }
    if obs.grid.t0 != problem.t0 {
        return Err(Error::invalid("observations must start at the problem's initial time"));
    }
    let mut start = model.params.values().to_vec();
    start.extend_from_slice(&model.physical);
    let spec = model.spec;
    let (values, mut report) = run_schedule(
        |p| finetune_loss(problem, &spec, &model.time_map, p, obs, options),
        start,
        schedule,
        "fine-tuning",
    );
    report.initial_physical = model.physical.clone();
    let (theta, lambda) = values.split_at(spec.param_count());
    let tuned = EstimationModel {
        params: NetworkParams::from_values(&spec, theta.to_vec())?,
        physical: lambda.to_vec(),
        phase: TrainingPhase::Finetuned,
        ..model.clone()
    };
    Ok((tuned, report))
}

/// Fine-tuning from a freshly initialised network and a uniform parameter
/// draw, skipping pre-training. Exists for ablation comparisons.
pub fn finetune_without_pretrain(
    problem: &Problem,
    obs: &ObservationSet,
    spec: NetworkSpec,
    schedule: &Schedule,
    init_seed: u64,
    lambda_seed: u64,
) -> Result<(EstimationModel, TrainingReport)> {
    check_spec(&spec, problem)?;
    let mut rng = ChaCha8Rng::seed_from_u64(lambda_seed);
    let model = EstimationModel {
        spec,
        params: init_network(&spec, init_seed),
        physical: draw_parameters(&problem.bounds, &mut rng),
        bounds: problem.bounds.clone(),
        phase: TrainingPhase::Initialized,
        time_map: TimeMap::for_problem(problem),
    };
    finetune_core(&model, problem, obs, schedule, &FinetuneOptions::default())
}
