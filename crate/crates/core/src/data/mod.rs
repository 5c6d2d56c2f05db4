//! Noisy observations, finite-difference derivative targets and random
//! evaluation times.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::CsvTable;
use crate::problems::trajectory_table;
use crate::solvers::{TimeGrid, Trajectory};

/// Standard normal draws by Box-Muller over a seeded ChaCha stream.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite
        let u1 = 1.0 - self.rng.gen::<f64>();
        let u2: f64 = self.rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * a.sin());
        r * a.cos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub grid: TimeGrid,
    /// One observed state per grid time.
    pub states: Tensor,
    pub delta: f64,
    pub seed: u64,
    /// Per-state variance of the reference, the diagonal of the noise
    /// covariance.
    pub variances: Vec<f64>,
}

impl ObservationSet {
    pub fn dim(&self) -> usize {
        self.states.cols()
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    pub fn initial_state(&self) -> &[f64] {
        self.states.row_slice(0)
    }

    pub fn to_table(&self) -> CsvTable {
        let traj = Trajectory {
            grid: self.grid,
            states: self.states.clone(),
        };
        trajectory_table(&traj, "obs")
            .with_meta("delta", self.delta)
            .with_meta("seed", self.seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_table().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let table = CsvTable::load(path)?;
        let origin = path.display().to_string();
        let bad = |detail: &str| Error::Format {
            path: origin.clone(),
            detail: detail.to_string(),
        };
        let meta = |k: &str| table.meta_f64(k).ok_or_else(|| bad(&format!("missing {k}")));
        let steps = meta("steps")? as usize;
        let grid = TimeGrid::new(meta("t0")?, meta("dt")?, steps)?;
        if table.rows.len() != grid.len() || table.columns.len() < 2 {
            return Err(bad("row count does not match the grid"));
        }
        let rows: Vec<Vec<f64>> = table.rows.iter().map(|r| r[1..].to_vec()).collect();
        let states = Tensor::from_rows(&rows)?;
        let variances = (0..states.cols()).map(|c| variance(&states.column_values(c))).collect();
        Ok(Self {
            grid,
            states,
            delta: meta("delta")?,
            seed: meta("seed")? as u64,
            variances,
        })
    }
}

/// Population variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// `X_obs = X_exact + delta * eta`, with `eta_j ~ N(0, diag(var_i))` i.i.d.
/// over grid points and `var_i` the variance of state `i` over the reference.
pub fn synthesize_observations(reference: &Trajectory, delta: f64, seed: u64) -> Result<ObservationSet> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!("noise level must be >= 0, got {delta}")));
    }
    let x = &reference.states;
    let variances: Vec<f64> = (0..x.cols()).map(|c| variance(&x.column_values(c))).collect();
    let mut states = x.clone();
    if delta > 0.0 {
        let sd: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
        let mut noise = NormalStream::new(seed);
        let n = x.cols();
        for (k, value) in states.data_mut().iter_mut().enumerate() {
            *value += delta * sd[k % n] * noise.next_normal();
        }
    }
    Ok(ObservationSet {
        grid: reference.grid,
        states,
        delta,
        seed,
        variances,
    })
}

/// Second-order derivative estimate on a uniform grid: central differences
/// inside, three-point one-sided formulas at both ends.
pub fn finite_diff(states: &Tensor, dt: f64) -> Result<Tensor> {
    let (t, n) = states.shape();
    if t < 3 {
        return Err(Error::invalid(format!("finite differences need at least 3 samples, got {t}")));
    }
    let x = |j: usize, i: usize| states.get(j, i);
    let mut out = Tensor::zeros(t, n);
    let d = out.data_mut();
    for i in 0..n {
        d[i] = (-3.0 * x(0, i) + 4.0 * x(1, i) - x(2, i)) / (2.0 * dt);
        for j in 1..t - 1 {
            d[j * n + i] = (x(j + 1, i) - x(j - 1, i)) / (2.0 * dt);
        }
        let l = t - 1;
        d[l * n + i] = (3.0 * x(l, i) - 4.0 * x(l - 1, i) + x(l - 2, i)) / (2.0 * dt);
    }
    Ok(out)
}

pub fn finite_diff_rhs(obs: &ObservationSet) -> Result<Tensor> {
    finite_diff(&obs.states, obs.grid.dt)
}

/// `count` sorted uniform times strictly inside `(t0, t1)`.
pub fn test_points(t0: f64, t1: f64, count: usize, seed: u64) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::invalid("need at least one test point"));
    }
    if !(t1 > t0) {
        return Err(Error::invalid(format!("empty test interval [{t0}, {t1}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(count);
    while pts.len() < count {
        let t = t0 + (t1 - t0) * rng.gen::<f64>();
        if t > t0 && t < t1 {
            pts.push(t);
        }
    }
    pts.sort_by(f64::total_cmp);
    Ok(pts)
}
