use super::linalg::Lu;
use crate::error::{Error, Result};

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Forward-difference Jacobian with perturbation `1e-7 (1 + |x_i|)`.
pub fn fd_jacobian<F>(residual: &mut F, x: &[f64], r0: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut jac = vec![0.0; n * n];
    let mut probe = x.to_vec();
    for c in 0..n {
        let h = 1e-7 * (1.0 + x[c].abs());
        probe[c] = x[c] + h;
        let r = residual(&probe)?;
        probe[c] = x[c];
        let h = (x[c] + h) - x[c];
        for row in 0..n {
            jac[row * n + c] = (r[row] - r0[row]) / h;
        }
    }
    Ok(jac)
}

/// Newton iteration with a finite-difference Jacobian.
///
/// Converged when `||residual||_inf < 1e-10`; gives up after 25 iterations.
/// The returned error has `step = 0`; integrators fill in their step index.
pub fn implicit_step_solve<F>(mut residual: F, guess: &[f64]) -> Result<NewtonSolution>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut x = guess.to_vec();
    let mut r = residual(&x)?;
    let mut norm = inf_norm(&r);
    if !norm.is_finite() {
        return Err(Error::NewtonFailed {
            step: 0,
            iterations: 0,
            residual: norm,
        });
    }
    for k in 0..=NEWTON_MAX_ITER {
        if norm < NEWTON_TOL {
            return Ok(NewtonSolution {
                x,
                iterations: k,
                residual_norm: norm,
            });
        }
        if k == NEWTON_MAX_ITER {
            break;
        }
        let jac = fd_jacobian(&mut residual, &x, &r)?;
        let lu = Lu::factor(jac, x.len()).map_err(|_| Error::NewtonFailed {
            step: 0,
            iterations: k,
            residual: norm,
        })?;
        let dx = lu.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi -= d);
        r = residual(&x)?;
        norm = inf_norm(&r);
        if !norm.is_finite() {
            break;
        }
    }
    Err(Error::NewtonFailed {
        step: 0,
        iterations: NEWTON_MAX_ITER,
        residual: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_residual_one_iteration() {
        let dt = 0.1;
        let sol = implicit_step_solve(|x| Ok(vec![(1.0 + dt) * x[0] - 1.0]), &[1.0]).unwrap();
        assert!((sol.x[0] - 1.0 / 1.1).abs() < 1e-10);
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn zero_residual_returns_guess() {
        let sol = implicit_step_solve(|x| Ok(vec![x[0] - 2.0, x[1]]), &[2.0, 0.0]).unwrap();
        assert_eq!(sol.x, vec![2.0, 0.0]);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn cubic_converges() {
        let sol = implicit_step_solve(|x| Ok(vec![x[0].powi(3) - 8.0]), &[3.0]).unwrap();
        assert!((sol.x[0] - 2.0).abs() < 1e-10);
        assert!(sol.iterations <= 8, "{} iterations", sol.iterations);
    }

    #[test]
    fn reports_non_convergence() {
        // x^2 + 1 has no real root
        let err = implicit_step_solve(|x| Ok(vec![x[0] * x[0] + 1.0]), &[0.5]).unwrap_err();
        assert!(matches!(err, Error::NewtonFailed { .. }), "{err}");
    }
}
