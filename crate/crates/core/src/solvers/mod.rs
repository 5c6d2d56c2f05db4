//! Fixed-grid integrators (RKF45 and AB/AM/BDF multistep methods) that run
//! either on plain vectors or recorded on an autodiff tape, plus
//! absolute-stability analysis of the multistep families.

mod backend;
mod linalg;
pub mod lmm;
mod newton;
mod rk;
pub mod stability;

use std::fmt;
use std::str::FromStr;

pub use lmm::{all_methods, lmm_coefficients, LmmCoefficients, LmmFamily};
pub use newton::{fd_jacobian, implicit_step_solve, NewtonSolution, NEWTON_MAX_ITER, NEWTON_TOL};
pub use stability::{is_absolutely_stable, stability_boundary, StabilityRegion};

pub(crate) use linalg::Lu;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use backend::{Backend, PlainBackend, TapeBackend};

/// Number of Newton iterations replayed on the tape after an implicit step
/// has converged, so gradients flow through the solution.
pub const UNROLLED_NEWTON_ITERS: usize = 3;

/// A right-hand side `f(t, x)` evaluated on plain vectors.
pub trait VectorField {
    fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>>;
}

/// A right-hand side that can also be recorded on a tape for a `1 x n` state.
pub trait TapeField: VectorField {
    fn record(&self, tape: &mut Tape, t: f64, x: Var) -> Result<Var>;
}

impl<F> VectorField for F
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self(t, x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverScheme {
    Rkf45,
    Lmm(LmmCoefficients),
}

impl SolverScheme {
    pub fn name(&self) -> String {
        match self {
            SolverScheme::Rkf45 => "rkf45".to_string(),
            SolverScheme::Lmm(c) => c.name(),
        }
    }

    pub fn is_implicit(&self) -> bool {
        matches!(self, SolverScheme::Lmm(c) if !c.is_explicit())
    }
}

impl fmt::Display for SolverScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for SolverScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rkf45" | "rk45" | "rk" => Ok(SolverScheme::Rkf45),
            other => Ok(SolverScheme::Lmm(other.parse()?)),
        }
    }
}

/// Uniform grid `t_j = t0 + j dt`, `j = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        if steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        Ok(Self { t0, dt, steps })
    }

    /// Grid covering `[t0, t_end]`; `dt` must divide the span.
    pub fn spanning(t0: f64, t_end: f64, dt: f64) -> Result<Self> {
        let ratio = (t_end - t0) / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.abs().max(1.0) || steps < 1.0 {
            return Err(Error::invalid(format!(
                "step {dt} does not divide the horizon [{t0}, {t_end}]"
            )));
        }
        Self::new(t0, dt, steps as usize)
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.time(j)).collect()
    }
}

/// States on a grid, one row per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Tensor,
}

impl Trajectory {
    pub fn state(&self, j: usize) -> &[f64] {
        self.states.row_slice(j)
    }

    pub fn dim(&self) -> usize {
        self.states.cols()
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.grid.steps)
    }

    /// Piecewise-linear interpolation at `t`, clamped to the grid.
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        let pos = ((t - self.grid.t0) / self.grid.dt).clamp(0.0, self.grid.steps as f64);
        let j = (pos.floor() as usize).min(self.grid.steps.saturating_sub(1));
        let w = pos - j as f64;
        let (a, b) = (self.state(j), self.state((j + 1).min(self.grid.steps)));
        a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect()
    }

    /// Every `stride`-th row, starting from the first.
    pub fn subsample(&self, stride: usize) -> Result<Trajectory> {
        if stride == 0 || self.grid.steps % stride != 0 {
            return Err(Error::invalid(format!(
                "stride {stride} does not divide {} steps",
                self.grid.steps
            )));
        }
        let rows: Vec<Vec<f64>> = (0..=self.grid.steps)
            .step_by(stride)
            .map(|j| self.state(j).to_vec())
            .collect();
        Ok(Trajectory {
            grid: TimeGrid::new(self.grid.t0, self.grid.dt * stride as f64, self.grid.steps / stride)?,
            states: Tensor::from_rows(&rows)?,
        })
    }
}

fn collect_plain(grid: TimeGrid, states: Vec<Vec<f64>>) -> Result<Trajectory> {
    Ok(Trajectory {
        grid,
        states: Tensor::from_rows(&states)?,
    })
}

/// Fixed-step Runge-Kutta-Fehlberg 4(5), propagating the fifth-order solution.
pub fn rkf45_integrate<F: VectorField + ?Sized>(rhs: &F, x0: &[f64], grid: &TimeGrid) -> Result<Trajectory> {
    let mut b = PlainBackend::new(rhs);
    let states = rk::rkf45_steps(&mut b, x0.to_vec(), grid)?;
    collect_plain(*grid, states)
}

/// Classical four-stage Runge-Kutta at fixed step.
pub fn rk4_integrate<F: VectorField + ?Sized>(rhs: &F, x0: &[f64], grid: &TimeGrid) -> Result<Trajectory> {
    let mut b = PlainBackend::new(rhs);
    let states = rk::rk4_steps(&mut b, x0.to_vec(), grid, grid.steps)?;
    collect_plain(*grid, states)
}

/// Multistep integration; the first `M - 1` points come from RK4.
pub fn lmm_integrate<F: VectorField + ?Sized>(
    rhs: &F,
    x0: &[f64],
    grid: &TimeGrid,
    coeffs: &LmmCoefficients,
) -> Result<Trajectory> {
    let mut b = PlainBackend::new(rhs);
    let states = rk::lmm_steps(&mut b, x0.to_vec(), grid, coeffs)?;
    collect_plain(*grid, states)
}

pub fn integrate<F: VectorField + ?Sized>(
    rhs: &F,
    x0: &[f64],
    grid: &TimeGrid,
    scheme: &SolverScheme,
) -> Result<Trajectory> {
    match scheme {
        SolverScheme::Rkf45 => rkf45_integrate(rhs, x0, grid),
        SolverScheme::Lmm(c) => lmm_integrate(rhs, x0, grid, c),
    }
}

/// Records the whole solve on `tape`. `x0` is a `1 x n` node; the result has
/// one `1 x n` node per grid point, the first being `x0` itself.
pub fn integrate_on_tape<F: TapeField + ?Sized>(
    tape: &mut Tape,
    rhs: &F,
    x0: Var,
    grid: &TimeGrid,
    scheme: &SolverScheme,
) -> Result<Vec<Var>> {
    if tape.shape(x0).0 != 1 {
        return Err(Error::shape("integrate_on_tape", "initial state must be a single row"));
    }
    let mut b = TapeBackend::new(tape, rhs);
    match scheme {
        SolverScheme::Rkf45 => rk::rkf45_steps(&mut b, x0, grid),
        SolverScheme::Lmm(c) => rk::lmm_steps(&mut b, x0, grid, c),
    }
}

pub(crate) fn diverged<S, B: Backend<State = S> + ?Sized>(b: &B, x: &S, step: usize) -> Result<()> {
    if b.finite(x) {
        Ok(())
    } else {
        Err(Error::SolverDiverged { step })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, x: &[f64]) -> Vec<f64> {
        vec![-x[0]]
    }

    #[test]
    fn constant_field_is_preserved() {
        let zero = |_t: f64, x: &[f64]| vec![0.0; x.len()];
        let grid = TimeGrid::new(0.0, 0.3, 7).unwrap();
        let mut schemes = vec![SolverScheme::Rkf45];
        schemes.extend(lmm::all_methods().into_iter().map(SolverScheme::Lmm));
        for s in schemes {
            let tr = integrate(&zero, &[1.0, -2.0], &grid, &s).unwrap();
            for j in 0..=grid.steps {
                assert_eq!(tr.state(j), &[1.0, -2.0], "{s}");
            }
        }
    }

    #[test]
    fn rkf45_decay_and_quadrature() {
        let grid = TimeGrid::new(0.0, 0.1, 10).unwrap();
        let tr = rkf45_integrate(&decay, &[1.0], &grid).unwrap();
        assert!((tr.final_state()[0] - (-1.0f64).exp()).abs() < 1e-7);

        let ramp = |t: f64, _x: &[f64]| vec![t];
        let grid = TimeGrid::new(0.0, 0.5, 2).unwrap();
        let tr = rkf45_integrate(&ramp, &[0.0], &grid).unwrap();
        assert!((tr.final_state()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ab2_second_order() {
        let ab2: LmmCoefficients = "ab2".parse().unwrap();
        let err = |n: usize| {
            let grid = TimeGrid::new(0.0, 1.0 / n as f64, n).unwrap();
            let tr = lmm_integrate(&decay, &[1.0], &grid, &ab2).unwrap();
            (tr.final_state()[0] - (-1.0f64).exp()).abs()
        };
        let (e1, e2) = (err(10), err(20));
        assert!(e1 < 5e-3);
        let ratio = e1 / e2;
        assert!((3.4..4.6).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn backward_euler_single_step() {
        let bdf1: LmmCoefficients = "bdf1".parse().unwrap();
        let grid = TimeGrid::new(0.0, 0.1, 1).unwrap();
        let tr = lmm_integrate(&decay, &[1.0], &grid, &bdf1).unwrap();
        assert!((tr.final_state()[0] - 1.0 / 1.1).abs() < 1e-10);
    }

    #[test]
    fn lmm_needs_enough_steps() {
        let ab3: LmmCoefficients = "ab3".parse().unwrap();
        let grid = TimeGrid::new(0.0, 0.1, 2).unwrap();
        assert!(lmm_integrate(&decay, &[1.0], &grid, &ab3).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let blowup = |_t: f64, x: &[f64]| vec![x[0] * x[0]];
        let grid = TimeGrid::new(0.0, 0.5, 40).unwrap();
        let err = rkf45_integrate(&blowup, &[10.0], &grid).unwrap_err();
        assert!(matches!(err, Error::SolverDiverged { .. }), "{err}");
    }

    #[test]
    fn grid_spanning() {
        let g = TimeGrid::spanning(0.0, 20.0, 0.1).unwrap();
        assert_eq!(g.steps, 200);
        assert!(TimeGrid::spanning(0.0, 1.0, 0.3).is_err());
    }

    #[test]
    fn interpolation_and_subsampling() {
        let grid = TimeGrid::new(0.0, 0.5, 4).unwrap();
        let states = Tensor::column(vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let tr = Trajectory { grid, states };
        assert_eq!(tr.interpolate(0.75), vec![1.5]);
        assert_eq!(tr.interpolate(2.0), vec![4.0]);
        let sub = tr.subsample(2).unwrap();
        assert_eq!(sub.states.data(), &[0.0, 2.0, 4.0]);
        assert!(tr.subsample(3).is_err());
    }
}
