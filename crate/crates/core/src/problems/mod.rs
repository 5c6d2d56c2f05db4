//! Benchmark systems: FitzHugh-Nagumo, Lorenz-63 and the method-of-lines
//! heat equation.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::io::CsvTable;
use crate::solvers::{rkf45_integrate, TapeField, TimeGrid, Trajectory, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    FitzHughNagumo,
    Lorenz,
    Heat,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::FitzHughNagumo => "fitzhugh-nagumo",
            ProblemKind::Lorenz => "lorenz",
            ProblemKind::Heat => "heat",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fitzhugh-nagumo" | "fn" | "fhn" => Ok(ProblemKind::FitzHughNagumo),
            "lorenz" | "lorenz63" => Ok(ProblemKind::Lorenz),
            "heat" => Ok(ProblemKind::Heat),
            other => Err(Error::invalid(format!("unknown problem '{other}'"))),
        }
    }
}

/// How the "exact" trajectory is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceRecipe {
    /// RKF45 at a fine fixed step.
    Fine { dt: f64 },
    Analytic,
}

/// Spatial grid of the heat equation on `[0, L]`; the state holds the
/// interior nodes `u_1 .. u_{M-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatDiscretization {
    pub intervals: usize,
    pub length: f64,
}

impl HeatDiscretization {
    pub fn new(intervals: usize, length: f64) -> Result<Self> {
        if intervals < 2 {
            return Err(Error::invalid(format!("heat grid needs M >= 2, got {intervals}")));
        }
        if !(length > 0.0) {
            return Err(Error::invalid("heat domain length must be positive"));
        }
        Ok(Self { intervals, length })
    }

    pub fn h(&self) -> f64 {
        self.length / self.intervals as f64
    }

    pub fn state_dim(&self) -> usize {
        self.intervals - 1
    }

    /// Positions of the state entries.
    pub fn nodes(&self) -> Vec<f64> {
        (1..self.intervals).map(|i| i as f64 * self.h()).collect()
    }

    /// State index of the node at `x`, if `x` is an interior node.
    pub fn node_index(&self, x: f64) -> Option<usize> {
        let i = (x / self.h()).round();
        let on_grid = (i * self.h() - x).abs() < 1e-9;
        (on_grid && i >= 1.0 && (i as usize) < self.intervals).then(|| i as usize - 1)
    }

    /// Second-difference operator with the boundary closure folded in,
    /// scaled by `1/h^2`.
    pub fn laplacian(&self) -> Tensor {
        let n = self.state_dim();
        let s = 1.0 / (self.h() * self.h());
        let mut a = Tensor::zeros(n, n);
        let d = a.data_mut();
        for i in 0..n {
            d[i * n + i] = -2.0 * s;
            if i > 0 {
                d[i * n + i - 1] = s;
            }
            if i + 1 < n {
                d[i * n + i + 1] = s;
            }
        }
        // u_M = u_{M-1}
        d[n * n - 1] += s;
        a
    }
}

/// `dv = v - v^3/3 - w + z`, `dw = (v + a - b w) / c`.
pub fn fn_rhs(state: &[f64], params: &[f64]) -> Result<Vec<f64>> {
    let (v, w) = (state[0], state[1]);
    let (a, b, c, z) = (params[0], params[1], params[2], params[3]);
    if c == 0.0 {
        return Err(Error::invalid("FitzHugh-Nagumo time scale c must be nonzero"));
    }
    Ok(vec![v - v * v * v / 3.0 - w + z, (v + a - b * w) / c])
}

/// Parameters in the order `(sigma, beta, rho)`.
pub fn lorenz_rhs(state: &[f64], params: &[f64]) -> Vec<f64> {
    let (x, y, z) = (state[0], state[1], state[2]);
    let (sigma, beta, rho) = (params[0], params[1], params[2]);
    vec![sigma * (y - x), x * (rho - z) - y, x * y - beta * z]
}

/// Central second difference with ghost values `u_0 = 0`, `u_M = u_{M-1}`,
/// on the unit interval.
pub fn heat_mol_rhs(u: &[f64], k: f64, intervals: usize) -> Result<Vec<f64>> {
    let disc = HeatDiscretization::new(intervals, 1.0)?;
    heat_rhs_on(&disc, u, k)
}

fn heat_rhs_on(disc: &HeatDiscretization, u: &[f64], k: f64) -> Result<Vec<f64>> {
    let n = disc.state_dim();
    if u.len() != n {
        return Err(Error::shape(
            "heat_mol_rhs",
            format!("state has {} entries, grid needs {n}", u.len()),
        ));
    }
    let s = k / (disc.h() * disc.h());
    Ok((0..n)
        .map(|i| {
            let left = if i == 0 { 0.0 } else { u[i - 1] };
            let right = if i + 1 == n { u[i] } else { u[i + 1] };
            s * (right - 2.0 * u[i] + left)
        })
        .collect())
}

/// `u(x, t) = sin(pi x / 2) exp(-pi^2 t / 4)`.
pub fn heat_exact(x: f64, t: f64) -> f64 {
    (PI * x / 2.0).sin() * (-PI * PI * t / 4.0).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub kind: ProblemKind,
    pub param_names: Vec<&'static str>,
    pub true_params: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    pub initial_condition: Vec<f64>,
    pub t0: f64,
    pub t_end: f64,
    pub reference: ReferenceRecipe,
    pub heat: Option<HeatDiscretization>,
}

impl Problem {
    pub fn fitzhugh_nagumo() -> Self {
        Self {
            kind: ProblemKind::FitzHughNagumo,
            param_names: vec!["a", "b", "c", "z"],
            true_params: vec![0.7, 0.8, 12.5, 1.0],
            bounds: vec![(0.0, 1.0), (0.0, 1.0), (10.0, 15.0), (0.5, 1.5)],
            initial_condition: vec![-2.8, -1.8],
            t0: 0.0,
            t_end: 20.0,
            reference: ReferenceRecipe::Fine { dt: 1e-4 },
            heat: None,
        }
    }

    pub fn lorenz() -> Self {
        Self {
            kind: ProblemKind::Lorenz,
            param_names: vec!["sigma", "beta", "rho"],
            true_params: vec![10.0, 8.0 / 3.0, 28.0],
            bounds: vec![(8.0, 12.0), (2.0, 3.5), (25.0, 30.0)],
            initial_condition: vec![-8.0, 7.0, 27.0],
            t0: 0.0,
            t_end: 2.0,
            reference: ReferenceRecipe::Fine { dt: 2.5e-4 },
            heat: None,
        }
    }

    /// Heat equation with diffusivity 1 on `[0, 1]` using `intervals` cells.
    pub fn heat(intervals: usize) -> Result<Self> {
        let disc = HeatDiscretization::new(intervals, 1.0)?;
        Ok(Self {
            kind: ProblemKind::Heat,
            param_names: vec!["k"],
            true_params: vec![1.0],
            bounds: vec![(0.5, 2.0)],
            initial_condition: disc.nodes().iter().map(|&x| heat_exact(x, 0.0)).collect(),
            t0: 0.0,
            t_end: 2.5,
            reference: ReferenceRecipe::Analytic,
            heat: Some(disc),
        })
    }

    pub fn from_kind(kind: ProblemKind) -> Self {
        match kind {
            ProblemKind::FitzHughNagumo => Self::fitzhugh_nagumo(),
            ProblemKind::Lorenz => Self::lorenz(),
            ProblemKind::Heat => Self::heat(20).expect("M = 20 is valid"),
        }
    }

    pub fn with_horizon(mut self, t0: f64, t_end: f64) -> Result<Self> {
        if !(t_end > t0) {
            return Err(Error::invalid(format!("empty horizon [{t0}, {t_end}]")));
        }
        self.t0 = t0;
        self.t_end = t_end;
        if self.kind == ProblemKind::Heat {
            let disc = self.heat.expect("heat problems carry a grid");
            self.initial_condition = disc.nodes().iter().map(|&x| heat_exact(x, t0)).collect();
        }
        Ok(self)
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn state_dim(&self) -> usize {
        self.initial_condition.len()
    }

    pub fn param_count(&self) -> usize {
        self.true_params.len()
    }

    /// Names of the state components, used as CSV/report labels.
    pub fn state_names(&self) -> Vec<String> {
        match self.kind {
            ProblemKind::FitzHughNagumo => vec!["v".into(), "w".into()],
            ProblemKind::Lorenz => vec!["x".into(), "y".into(), "z".into()],
            ProblemKind::Heat => (1..=self.state_dim()).map(|i| format!("u{i}")).collect(),
        }
    }

    pub fn grid(&self, dt: f64) -> Result<TimeGrid> {
        TimeGrid::spanning(self.t0, self.t_end, dt)
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "{} takes {} parameters, got {}",
                self.name(),
                self.param_count(),
                params.len()
            )));
        }
        Ok(())
    }

    pub fn rhs(&self, _t: f64, x: &[f64], params: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        if x.len() != self.state_dim() {
            return Err(Error::shape(
                "rhs",
                format!("{} state has {} entries, got {}", self.name(), self.state_dim(), x.len()),
            ));
        }
        match self.kind {
            ProblemKind::FitzHughNagumo => fn_rhs(x, params),
            ProblemKind::Lorenz => Ok(lorenz_rhs(x, params)),
            ProblemKind::Heat => heat_rhs_on(self.heat.as_ref().expect("heat grid"), x, params[0]),
        }
    }

    /// Records the right-hand side for a batch of states (`T x n`, one state
    /// per row). `params` are `1 x 1` nodes, constant or trainable.
    pub fn record_rhs(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "{} takes {} parameters, got {}",
                self.name(),
                self.param_count(),
                params.len()
            )));
        }
        if tape.shape(x).1 != self.state_dim() {
            return Err(Error::shape("record_rhs", "state width does not match problem"));
        }
        match self.kind {
            ProblemKind::FitzHughNagumo => {
                let (a, b, c, z) = (params[0], params[1], params[2], params[3]);
                let v = tape.slice(x, Axis::Cols, 0, 1)?;
                let w = tape.slice(x, Axis::Cols, 1, 1)?;
                let v3 = tape.powi(v, 3)?;
                let dv = tape.lin_comb(&[(1.0, v), (-1.0 / 3.0, v3), (-1.0, w)])?;
                let dv = tape.add(dv, z)?;
                let bw = tape.mul(w, b)?;
                let num = tape.sub(v, bw)?;
                let num = tape.add(num, a)?;
                let inv_c = tape.reciprocal(c)?;
                let dw = tape.mul(num, inv_c)?;
                tape.concat(&[dv, dw], Axis::Cols)
            }
            ProblemKind::Lorenz => {
                let (sigma, beta, rho) = (params[0], params[1], params[2]);
                let px = tape.slice(x, Axis::Cols, 0, 1)?;
                let py = tape.slice(x, Axis::Cols, 1, 1)?;
                let pz = tape.slice(x, Axis::Cols, 2, 1)?;
                let d = tape.sub(py, px)?;
                let dx = tape.mul(d, sigma)?;
                let r = tape.sub(rho, pz)?;
                let xr = tape.mul(px, r)?;
                let dy = tape.sub(xr, py)?;
                let xy = tape.mul(px, py)?;
                let bz = tape.mul(pz, beta)?;
                let dz = tape.sub(xy, bz)?;
                tape.concat(&[dx, dy, dz], Axis::Cols)
            }
            ProblemKind::Heat => {
                let disc = self.heat.as_ref().expect("heat grid");
                // the operator is symmetric, so x A^T = x A
                let lap = tape.constant(disc.laplacian())?;
                let d = tape.matmul(x, lap)?;
                tape.mul(d, params[0])
            }
        }
    }

    /// The vector field at fixed parameter values.
    pub fn field(&self, params: &[f64]) -> Result<ProblemField<'_>> {
        self.check_params(params)?;
        Ok(ProblemField {
            problem: self,
            params: params.to_vec(),
        })
    }

    /// Dense "exact" trajectory: RKF45 at the fine step over the horizon, or
    /// the closed form sampled at `dt` for the heat equation.
    pub fn fine_reference(&self, dt_hint: f64) -> Result<Trajectory> {
        match self.reference {
            ReferenceRecipe::Fine { dt } => {
                let grid = self.grid(dt)?;
                rkf45_integrate(&self.field(&self.true_params)?, &self.initial_condition, &grid)
            }
            ReferenceRecipe::Analytic => self.analytic_on(&self.grid(dt_hint)?),
        }
    }

    fn analytic_on(&self, grid: &TimeGrid) -> Result<Trajectory> {
        let disc = self.heat.as_ref().expect("heat grid");
        let nodes = disc.nodes();
        let rows: Vec<Vec<f64>> = grid
            .times()
            .iter()
            .map(|&t| nodes.iter().map(|&x| heat_exact(x, t)).collect())
            .collect();
        Ok(Trajectory {
            grid: *grid,
            states: Tensor::from_rows(&rows)?,
        })
    }

    /// Reference states on the experiment grid. The fine step must divide
    /// the experiment step.
    pub fn reference_solution(&self, grid: &TimeGrid) -> Result<Trajectory> {
        match self.reference {
            ReferenceRecipe::Fine { dt } => {
                let stride = stride_of(grid.dt, dt)?;
                let fine = TimeGrid::new(grid.t0, dt, grid.steps * stride)?;
                let traj = rkf45_integrate(&self.field(&self.true_params)?, &self.initial_condition, &fine)?;
                traj.subsample(stride)
            }
            ReferenceRecipe::Analytic => self.analytic_on(grid),
        }
    }

    /// Exact values at arbitrary times: closed form for the heat equation,
    /// linear interpolation of `fine` otherwise.
    pub fn exact_at(&self, fine: &Trajectory, times: &[f64]) -> Vec<Vec<f64>> {
        match self.reference {
            ReferenceRecipe::Fine { .. } => times.iter().map(|&t| fine.interpolate(t)).collect(),
            ReferenceRecipe::Analytic => {
                let nodes = self.heat.as_ref().expect("heat grid").nodes();
                times
                    .iter()
                    .map(|&t| nodes.iter().map(|&x| heat_exact(x, t)).collect())
                    .collect()
            }
        }
    }

    /// Reference solution, read from `path` when a matching cache exists and
    /// written there otherwise.
    pub fn cached_reference(&self, grid: &TimeGrid, path: &Path) -> Result<Trajectory> {
        if path.exists() {
            let table = CsvTable::load(path)?;
            if let Some(traj) = self.trajectory_from_table(&table, grid) {
                return Ok(traj);
            }
        }
        let traj = self.reference_solution(grid)?;
        self.reference_table(&traj).save(path)?;
        Ok(traj)
    }

    pub fn reference_table(&self, traj: &Trajectory) -> CsvTable {
        let (scheme, fine_dt) = match self.reference {
            ReferenceRecipe::Fine { dt } => ("rkf45", dt.to_string()),
            ReferenceRecipe::Analytic => ("analytic", "none".to_string()),
        };
        trajectory_table(traj, "state")
            .with_meta("problem", self.name())
            .with_meta("scheme", scheme)
            .with_meta("fine_dt", fine_dt)
    }

    fn trajectory_from_table(&self, table: &CsvTable, grid: &TimeGrid) -> Option<Trajectory> {
        let matches = table.meta.get("problem").map(String::as_str) == Some(self.name())
            && table.meta_f64("dt") == Some(grid.dt)
            && table.meta_f64("t0") == Some(grid.t0)
            && table.rows.len() == grid.len()
            && table.columns.len() == self.state_dim() + 1;
        if !matches {
            return None;
        }
        let rows: Vec<Vec<f64>> = table.rows.iter().map(|r| r[1..].to_vec()).collect();
        Some(Trajectory {
            grid: *grid,
            states: Tensor::from_rows(&rows).ok()?,
        })
    }
}

/// `t, <prefix>_0, ...` table with the grid recorded in the metadata.
pub fn trajectory_table(traj: &Trajectory, prefix: &str) -> CsvTable {
    let mut columns = vec!["t".to_string()];
    columns.extend((0..traj.dim()).map(|i| format!("{prefix}_{i}")));
    let mut table = CsvTable::new(columns)
        .with_meta("t0", traj.grid.t0)
        .with_meta("dt", traj.grid.dt)
        .with_meta("steps", traj.grid.steps);
    for (j, t) in traj.grid.times().into_iter().enumerate() {
        let mut row = vec![t];
        row.extend_from_slice(traj.state(j));
        table.rows.push(row);
    }
    table
}

fn stride_of(coarse: f64, fine: f64) -> Result<usize> {
    let ratio = coarse / fine;
    let r = ratio.round();
    if r < 1.0 || (ratio - r).abs() > 1e-9 * ratio {
        return Err(Error::invalid(format!(
            "reference step {fine} does not divide experiment step {coarse}"
        )));
    }
    Ok(r as usize)
}

/// A problem's right-hand side with its parameters fixed.
#[derive(Debug, Clone)]
pub struct ProblemField<'a> {
    problem: &'a Problem,
    params: Vec<f64>,
}

impl VectorField for ProblemField<'_> {
    fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.problem.rhs(t, x, &self.params)
    }
}

impl TapeField for ProblemField<'_> {
    fn record(&self, tape: &mut Tape, _t: f64, x: Var) -> Result<Var> {
        let params = self
            .params
            .iter()
            .map(|&p| tape.constant(Tensor::scalar(p)))
            .collect::<Result<Vec<_>>>()?;
        self.problem.record_rhs(tape, x, &params)
    }
}
