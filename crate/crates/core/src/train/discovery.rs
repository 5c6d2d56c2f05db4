use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::data::{finite_diff_rhs, ObservationSet};
use crate::error::{Error, Result};
use crate::network::{init_network, BoundNetwork, NetworkParams, NetworkSpec, RowEvaluator};
use crate::optim::Schedule;
use crate::problems::Problem;
use crate::solvers::{integrate, integrate_on_tape, SolverScheme, TapeField, TimeGrid, Trajectory, VectorField};

use super::{run_schedule, LossBreakdown, LossNodes, TrainingReport};

impl VectorField for RowEvaluator<'_> {
    fn eval(&self, _t: f64, x: &[f64]) -> Result<Vec<f64>> {
        RowEvaluator::eval(self, x)
    }
}

/// A state-to-derivative network used as the right-hand side of a solve,
/// both on plain vectors and on a tape.
pub struct NetworkField<'a> {
    plain: RowEvaluator<'a>,
    bound: &'a BoundNetwork,
}

impl<'a> NetworkField<'a> {
    pub fn new(bound: &'a BoundNetwork, params: &'a [f64]) -> Result<Self> {
        Ok(Self {
            plain: RowEvaluator::new(*bound.spec(), params)?,
            bound,
        })
    }
}

impl VectorField for NetworkField<'_> {
    fn eval(&self, _t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.plain.eval(x)
    }
}

impl TapeField for NetworkField<'_> {
    fn record(&self, tape: &mut Tape, _t: f64, x: Var) -> Result<Var> {
        self.bound.forward(tape, x)
    }
}

/// A learned vector field together with the grid and scheme it was trained
/// to be integrated with.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryModel {
    pub spec: NetworkSpec,
    pub params: NetworkParams,
    pub scheme: SolverScheme,
    pub grid: TimeGrid,
    pub x0: Vec<f64>,
}

impl DiscoveryModel {
    pub fn new(spec: NetworkSpec, params: NetworkParams, scheme: SolverScheme, grid: TimeGrid, x0: Vec<f64>) -> Result<Self> {
        if spec.input_dim != x0.len() || spec.output_dim != x0.len() {
            return Err(Error::invalid(format!(
                "discovery network must map {} states to {} derivatives",
                x0.len(),
                x0.len()
            )));
        }
        Ok(Self {
            spec,
            params,
            scheme,
            grid,
            x0,
        })
    }

    /// Integrates the learned field from `x0` over the training grid.
    pub fn rollout(&self) -> Result<Trajectory> {
        let field = RowEvaluator::new(self.spec, self.params.values())?;
        integrate(&field, &self.x0, &self.grid, &self.scheme)
    }

    /// Rollout evaluated at arbitrary times by cubic Hermite interpolation
    /// between grid points, using the network's own derivative there.
    pub fn predict(&self, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        let traj = self.rollout()?;
        let field = RowEvaluator::new(self.spec, self.params.values())?;
        let derivs = (0..traj.grid.len())
            .map(|j| field.eval(traj.state(j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(times.iter().map(|&t| hermite(&traj, &derivs, t)).collect())
    }
}

fn hermite(traj: &Trajectory, derivs: &[Vec<f64>], t: f64) -> Vec<f64> {
    let g = &traj.grid;
    let pos = ((t - g.t0) / g.dt).clamp(0.0, g.steps as f64);
    let j = (pos.floor() as usize).min(g.steps - 1);
    let s = pos - j as f64;
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let (a, b) = (traj.state(j), traj.state(j + 1));
    (0..a.len())
        .map(|i| h00 * a[i] + h10 * g.dt * derivs[j][i] + h01 * b[i] + h11 * g.dt * derivs[j + 1][i])
        .collect()
}

/// `L_ic + L_p + L_d` with the network as the solver's right-hand side,
/// and its gradient with respect to the network parameters.
///
/// The rollout starts at `x0`, so `L_ic` vanishes whenever `x0` is the
/// supplied initial condition; it is still computed.
pub fn discovery_loss(
    model: &DiscoveryModel,
    obs: &ObservationSet,
    f_obs: &Tensor,
    x0: &[f64],
) -> Result<(LossBreakdown, Vec<f64>)> {
    discovery_objective(&model.spec, model.params.values(), &model.scheme, obs, f_obs, x0)
}

fn discovery_objective(
    spec: &NetworkSpec,
    params: &[f64],
    scheme: &SolverScheme,
    obs: &ObservationSet,
    f_obs: &Tensor,
    x0: &[f64],
) -> Result<(LossBreakdown, Vec<f64>)> {
    if obs.states.shape() != f_obs.shape() {
        return Err(Error::shape("discovery_loss", "observations and derivative targets differ in shape"));
    }
    let mut tape = Tape::new();
    let net = BoundNetwork::bind(&mut tape, *spec, params, true)?;
    let field = NetworkField::new(&net, params)?;

    let start = tape.constant(Tensor::row(x0.to_vec()))?;
    let states = integrate_on_tape(&mut tape, &field, start, &obs.grid, scheme)?;
    let x_nm = tape.concat(&states, Axis::Rows)?;

    let ic_diff = tape.sub(states[0], start)?;
    let l_ic = tape.mean_square(ic_diff)?;

    let x_obs = tape.constant(obs.states.clone())?;
    let f_hat = net.forward(&mut tape, x_obs)?;
    let target = tape.constant(f_obs.clone())?;
    let p_diff = tape.sub(f_hat, target)?;
    let l_p = tape.mean_square(p_diff)?;

    let d_diff = tape.sub(x_nm, x_obs)?;
    let l_d = tape.mean_square(d_diff)?;

    let (breakdown, grads) = LossNodes {
        l_ic,
        ic_weight: 1.0,
        l_p,
        l_d: Some(l_d),
        l_lambda: Vec::new(),
    }
    .finish(&mut tape)?;
    Ok((breakdown, net.flat_gradient(&grads)))
}

/// Learns the right-hand side from observations: Adam then L-BFGS on
/// `L_ic + L_p + L_d`, rolling out from the problem's initial condition.
pub fn train_discovery(
    problem: &Problem,
    obs: &ObservationSet,
    spec: NetworkSpec,
    scheme: SolverScheme,
    schedule: &Schedule,
    seed: u64,
) -> Result<(DiscoveryModel, TrainingReport)> {
    schedule.validate()?;
    if obs.dim() != problem.state_dim() {
        return Err(Error::invalid("observations do not match the problem's state size"));
    }
    let f_obs = finite_diff_rhs(obs)?;
    let x0 = problem.initial_condition.clone();
    let init = init_network(&spec, seed);
    let model = DiscoveryModel::new(spec, init, scheme.clone(), obs.grid, x0.clone())?;

    let (params, report) = run_schedule(
        |p| discovery_objective(&spec, p, &scheme, obs, &f_obs, &x0),
        model.params.values().to_vec(),
        schedule,
        "discovery",
    );
    let model = DiscoveryModel {
        params: NetworkParams::from_values(&spec, params)?,
        ..model
    };
    Ok((model, report))
}
