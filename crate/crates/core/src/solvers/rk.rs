use super::backend::Backend;
use super::newton::fd_jacobian;
use super::{diverged, LmmCoefficients, TimeGrid};
use crate::error::{Error, Result};

// Fehlberg tableau
const C: [f64; 6] = [0.0, 1.0 / 4.0, 3.0 / 8.0, 12.0 / 13.0, 1.0, 1.0 / 2.0];
const A: [&[f64]; 6] = [
    &[],
    &[1.0 / 4.0],
    &[3.0 / 32.0, 9.0 / 32.0],
    &[1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0],
    &[439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0],
    &[-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
];
const B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];
const B4: [f64; 6] = [25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -1.0 / 5.0, 0.0];

fn at_step<T>(r: Result<T>, step: usize) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite { .. } => Error::SolverDiverged { step },
        Error::NewtonFailed {
            iterations,
            residual,
            ..
        } => Error::NewtonFailed {
            step,
            iterations,
            residual,
        },
        other => other,
    })
}

fn rkf45_step<B: Backend>(b: &mut B, t: f64, h: f64, x: &B::State) -> Result<(B::State, f64)> {
    let mut k: Vec<B::State> = Vec::with_capacity(6);
    for s in 0..6 {
        let stage = if s == 0 {
            x.clone()
        } else {
            let mut terms: Vec<(f64, &B::State)> = vec![(1.0, x)];
            terms.extend(A[s].iter().zip(&k).map(|(a, ki)| (h * a, ki)));
            b.combine(&terms)?
        };
        k.push(b.rhs(t + C[s] * h, &stage)?);
    }
    let mut terms: Vec<(f64, &B::State)> = vec![(1.0, x)];
    terms.extend(
        B5.iter()
            .zip(&k)
            .filter(|(w, _)| **w != 0.0)
            .map(|(w, ki)| (h * w, ki)),
    );
    let next = b.combine(&terms)?;

    // embedded error estimate, logged only
    let vals: Vec<Vec<f64>> = k.iter().map(|ki| b.values(ki)).collect();
    let mut err: f64 = 0.0;
    for i in 0..vals[0].len() {
        let e: f64 = (0..6).map(|s| (B5[s] - B4[s]) * vals[s][i]).sum();
        err = err.max((h * e).abs());
    }
    Ok((next, err))
}

pub(crate) fn rkf45_steps<B: Backend>(b: &mut B, x0: B::State, grid: &TimeGrid) -> Result<Vec<B::State>> {
    let mut states = Vec::with_capacity(grid.len());
    states.push(x0);
    let mut max_err: f64 = 0.0;
    for j in 0..grid.steps {
        let (next, err) = at_step(rkf45_step(b, grid.time(j), grid.dt, &states[j]), j + 1)?;
        diverged(b, &next, j + 1)?;
        max_err = max_err.max(err);
        states.push(next);
    }
    log::debug!("rkf45: {} steps, max local error estimate {max_err:e}", grid.steps);
    Ok(states)
}

fn rk4_step<B: Backend>(b: &mut B, t: f64, h: f64, x: &B::State) -> Result<B::State> {
    let k1 = b.rhs(t, x)?;
    let s2 = b.combine(&[(1.0, x), (h / 2.0, &k1)])?;
    let k2 = b.rhs(t + h / 2.0, &s2)?;
    let s3 = b.combine(&[(1.0, x), (h / 2.0, &k2)])?;
    let k3 = b.rhs(t + h / 2.0, &s3)?;
    let s4 = b.combine(&[(1.0, x), (h, &k3)])?;
    let k4 = b.rhs(t + h, &s4)?;
    b.combine(&[
        (1.0, x),
        (h / 6.0, &k1),
        (h / 3.0, &k2),
        (h / 3.0, &k3),
        (h / 6.0, &k4),
    ])
}

/// `count` RK4 steps from `x0` along `grid`.
pub(crate) fn rk4_steps<B: Backend>(
    b: &mut B,
    x0: B::State,
    grid: &TimeGrid,
    count: usize,
) -> Result<Vec<B::State>> {
    let mut states = Vec::with_capacity(count + 1);
    states.push(x0);
    for j in 0..count {
        let next = at_step(rk4_step(b, grid.time(j), grid.dt, &states[j]), j + 1)?;
        diverged(b, &next, j + 1)?;
        states.push(next);
    }
    Ok(states)
}

/// Largest absolute row sum of the rhs Jacobian times `h`, an upper bound on
/// `|h * lambda|` over its eigenvalues.
fn scaled_jacobian_bound<B: Backend>(b: &B, t: f64, x: &B::State, h: f64) -> Result<f64> {
    let x = b.values(x);
    let f0 = b.plain_rhs(t, &x)?;
    let n = x.len();
    let jac = fd_jacobian(&mut |y: &[f64]| b.plain_rhs(t, y), &x, &f0)?;
    let rho = (0..n)
        .map(|i| jac[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(rho * h)
}

/// RK4 substeps per bootstrap step so that each substep keeps `|h lambda|`
/// inside the RK4 stability region. Non-stiff problems get one.
pub(crate) fn bootstrap_substeps(bound: f64) -> usize {
    if !bound.is_finite() {
        return 1;
    }
    ((bound / BOOTSTRAP_SAFE_Z).ceil() as usize).clamp(1, MAX_BOOTSTRAP_SUBSTEPS)
}

const BOOTSTRAP_SAFE_Z: f64 = 2.0;
const MAX_BOOTSTRAP_SUBSTEPS: usize = 1000;

/// The first `count` grid steps by RK4, each split into equal substeps when
/// the problem is stiff at the initial state.
fn bootstrap_steps<B: Backend>(b: &mut B, x0: B::State, grid: &TimeGrid, count: usize) -> Result<Vec<B::State>> {
    if count == 0 {
        return Ok(vec![x0]);
    }
    let subs = bootstrap_substeps(at_step(scaled_jacobian_bound(b, grid.time(0), &x0, grid.dt), 0)?);
    if subs == 1 {
        return rk4_steps(b, x0, grid, count);
    }
    let h = grid.dt / subs as f64;
    let mut states = Vec::with_capacity(count + 1);
    states.push(x0);
    for j in 0..count {
        let mut x = states[j].clone();
        for s in 0..subs {
            x = at_step(rk4_step(b, grid.time(j) + s as f64 * h, h, &x), j + 1)?;
        }
        diverged(b, &x, j + 1)?;
        states.push(x);
    }
    Ok(states)
}

pub(crate) fn lmm_steps<B: Backend>(
    b: &mut B,
    x0: B::State,
    grid: &TimeGrid,
    c: &LmmCoefficients,
) -> Result<Vec<B::State>> {
    let m = c.steps;
    if grid.steps < m {
        return Err(Error::invalid(format!(
            "{} needs at least {m} grid steps, got {}",
            c.name(),
            grid.steps
        )));
    }
    let dt = grid.dt;
    let mut states = bootstrap_steps(b, x0, grid, m - 1)?;
    let mut derivs = Vec::with_capacity(grid.len());
    for (j, x) in states.iter().enumerate() {
        derivs.push(at_step(b.rhs(grid.time(j), x), j)?);
    }
    let lead = c.alpha[m];
    for n in 0..=grid.steps - m {
        let new = n + m;
        let t_new = grid.time(new);
        let next = if c.is_explicit() {
            let mut terms = Vec::with_capacity(2 * m);
            for j in 0..m {
                if c.alpha[j] != 0.0 {
                    terms.push((-c.alpha[j] / lead, &states[n + j]));
                }
                if c.beta[j] != 0.0 {
                    terms.push((dt * c.beta[j] / lead, &derivs[n + j]));
                }
            }
            at_step(b.combine(&terms), new)?
        } else {
            let mut terms = Vec::with_capacity(2 * m);
            for j in 0..m {
                if c.alpha[j] != 0.0 {
                    terms.push((-c.alpha[j], &states[n + j]));
                }
                if c.beta[j] != 0.0 {
                    terms.push((dt * c.beta[j], &derivs[n + j]));
                }
            }
            let known = at_step(b.combine(&terms), new)?;
            // explicit Euler predictor from the latest point
            let last = b.values(&states[new - 1]);
            let slope = b.values(&derivs[new - 1]);
            let guess = last.iter().zip(&slope).map(|(x, f)| x + dt * f).collect();
            at_step(b.implicit(t_new, lead, dt * c.beta[m], &known, guess), new)?
        };
        diverged(b, &next, new)?;
        if new < grid.steps {
            derivs.push(at_step(b.rhs(t_new, &next), new)?);
        }
        states.push(next);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::backend::PlainBackend;
    use crate::solvers::{lmm_coefficients, LmmFamily};

    #[test]
    fn substep_count() {
        assert_eq!(bootstrap_substeps(0.0), 1);
        assert_eq!(bootstrap_substeps(1.9), 1);
        assert_eq!(bootstrap_substeps(64.0), 32);
        assert_eq!(bootstrap_substeps(f64::NAN), 1);
        assert_eq!(bootstrap_substeps(1e9), MAX_BOOTSTRAP_SUBSTEPS);
    }

    #[test]
    fn stiff_bootstrap_stays_bounded() {
        // x' = -500 x with dt = 0.02 puts h*lambda = -10, far outside RK4's region
        let f = |_t: f64, x: &[f64]| vec![-500.0 * x[0]];
        let grid = TimeGrid::new(0.0, 0.02, 10).unwrap();
        let c = lmm_coefficients(LmmFamily::Bdf, 3).unwrap();
        let mut b = PlainBackend::new(&f);
        let xs = lmm_steps(&mut b, vec![1.0], &grid, &c).unwrap();
        for x in &xs[1..3] {
            assert!(x[0].abs() < 1e-3, "{}", x[0]);
        }
        let mut b = PlainBackend::new(&f);
        let raw = rk4_steps(&mut b, vec![1.0], &grid, 1).unwrap();
        assert!(raw[1][0].abs() > 100.0);
    }

    #[test]
    fn non_stiff_bootstrap_unchanged() {
        let f = |_t: f64, x: &[f64]| vec![-x[0], x[0] - 0.5 * x[1]];
        let grid = TimeGrid::new(0.0, 0.1, 5).unwrap();
        let mut b = PlainBackend::new(&f);
        let a = bootstrap_steps(&mut b, vec![1.0, 0.5], &grid, 2).unwrap();
        let r = rk4_steps(&mut b, vec![1.0, 0.5], &grid, 2).unwrap();
        assert_eq!(a, r);
    }
}
