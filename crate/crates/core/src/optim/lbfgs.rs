use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsConfig {
    /// Initial trial step of the line search.
    pub lr: f64,
    pub history: usize,
    pub max_iter: usize,
    pub c1: f64,
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_search_evals: usize,
    pub grad_tol: f64,
    pub rel_loss_tol: f64,
    /// Scale of the plain gradient step taken when the line search fails.
    pub fallback_scale: f64,
}

impl LbfgsConfig {
    pub fn new(lr: f64, max_iter: usize) -> Self {
        Self {
            lr,
            history: 10,
            max_iter,
            c1: 1e-4,
            c2: 0.9,
            max_line_search_evals: 25,
            grad_tol: 1e-9,
            rel_loss_tol: 1e-12,
            fallback_scale: 1e-3,
        }
    }
}

/// An accepted line-search point, kept so callers can audit the Wolfe
/// conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchRecord {
    pub step: f64,
    pub f0: f64,
    pub slope0: f64,
    pub f: f64,
    pub slope: f64,
}

impl LineSearchRecord {
    pub fn satisfies_strong_wolfe(&self, c1: f64, c2: f64) -> bool {
        self.f <= self.f0 + c1 * self.step * self.slope0 && self.slope.abs() <= -c2 * self.slope0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientNorm,
    LossChange,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsState {
    pub config: LbfgsConfig,
    pub pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
    pub iterations: usize,
    pub evaluations: usize,
    pub fallback_steps: usize,
    pub trace: Vec<LineSearchRecord>,
}

impl LbfgsState {
    pub fn new(config: LbfgsConfig) -> Self {
        Self {
            config,
            pairs: VecDeque::new(),
            iterations: 0,
            evaluations: 0,
            fallback_steps: 0,
            trace: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport {
    pub params: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + a * di).collect()
}

/// Errors that mean "this trial point is numerically unusable" rather than
/// a bug; the line search treats them as an infinite loss.
fn is_numerical(e: &Error) -> bool {
    match e {
        Error::NonFinite { .. } | Error::SolverDiverged { .. } | Error::NewtonFailed { .. } => true,
        Error::Training { source, .. } => is_numerical(source),
        _ => false,
    }
}

struct Point {
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

struct LineSearch<'a, F> {
    objective: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    slope0: f64,
    c1: f64,
    c2: f64,
    evals_left: usize,
    evals: usize,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, a: f64) -> Result<Option<Point>> {
        if self.evals_left == 0 {
            return Ok(None);
        }
        self.evals_left -= 1;
        self.evals += 1;
        let p = match (self.objective)(&axpy(self.x, a, self.d)) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                let slope = dot(&g, self.d);
                Point { f, g, slope }
            }
            Ok(_) => Point {
                f: f64::INFINITY,
                g: Vec::new(),
                slope: f64::NAN,
            },
            Err(e) if is_numerical(&e) => Point {
                f: f64::INFINITY,
                g: Vec::new(),
                slope: f64::NAN,
            },
            Err(e) => return Err(e),
        };
        Ok(Some(p))
    }

    fn sufficient(&self, a: f64, f: f64) -> bool {
        f <= self.f0 + self.c1 * a * self.slope0
    }

    fn curvature(&self, slope: f64) -> bool {
        slope.abs() <= -self.c2 * self.slope0
    }

    /// Strong-Wolfe search by bracketing then zooming.
    fn run(&mut self, a_init: f64) -> Result<Option<(f64, Point)>> {
        let (mut a_prev, mut f_prev, mut s_prev) = (0.0, self.f0, self.slope0);
        let mut a = a_init;
        let mut first = true;
        loop {
            let Some(p) = self.eval(a)? else { return Ok(None) };
            if !self.sufficient(a, p.f) || (!first && p.f >= f_prev) {
                return self.zoom((a_prev, f_prev, s_prev), (a, p.f, p.slope));
            }
            if self.curvature(p.slope) {
                return Ok(Some((a, p)));
            }
            if p.slope >= 0.0 {
                return self.zoom((a, p.f, p.slope), (a_prev, f_prev, s_prev));
            }
            (a_prev, f_prev, s_prev) = (a, p.f, p.slope);
            a *= 2.0;
            first = false;
        }
    }

    fn zoom(&mut self, mut lo: (f64, f64, f64), mut hi: (f64, f64, f64)) -> Result<Option<(f64, Point)>> {
        loop {
            let a = interpolate(lo, hi);
            let Some(p) = self.eval(a)? else { return Ok(None) };
            if !self.sufficient(a, p.f) || p.f >= lo.1 {
                hi = (a, p.f, p.slope);
            } else {
                if self.curvature(p.slope) {
                    return Ok(Some((a, p)));
                }
                if p.slope * (hi.0 - lo.0) >= 0.0 {
                    hi = lo;
                }
                lo = (a, p.f, p.slope);
            }
            if (hi.0 - lo.0).abs() < 1e-16 * lo.0.abs().max(1e-16) {
                return Ok(None);
            }
        }
    }
}

/// Minimizer of the cubic through two `(a, f, f')` points, kept at least a
/// tenth of the interval away from either end; bisection when the cubic is
/// unusable.
fn interpolate(lo: (f64, f64, f64), hi: (f64, f64, f64)) -> f64 {
    let (a0, f0, s0) = lo;
    let (a1, f1, s1) = hi;
    let (left, right) = (a0.min(a1), a0.max(a1));
    let width = right - left;
    let mid = 0.5 * (a0 + a1);
    if !(f0.is_finite() && f1.is_finite() && s0.is_finite() && s1.is_finite()) {
        return mid;
    }
    let d1 = s0 + s1 - 3.0 * (f0 - f1) / (a0 - a1);
    let disc = d1 * d1 - s0 * s1;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (a1 - a0).signum() * disc.sqrt();
    let a = a1 - (a1 - a0) * (s1 + d2 - d1) / (s1 - s0 + 2.0 * d2);
    if !a.is_finite() {
        return mid;
    }
    a.clamp(left + 0.1 * width, right - 0.1 * width)
}

/// Limited-memory BFGS with a strong-Wolfe line search.
///
/// `objective` returns the loss and its gradient. Trial points whose
/// evaluation fails numerically (non-finite values, diverged solver) count
/// as infinite loss, so the search backs off; a non-finite loss at the
/// starting point aborts.
pub fn lbfgs_minimize<F>(objective: F, params: &[f64], state: &mut LbfgsState) -> Result<LbfgsReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    lbfgs_minimize_observed(objective, params, state, |_, _| {})
}

/// [`lbfgs_minimize`] with a callback after the starting point (iteration 0)
/// and after every accepted iterate. The objective's most recent evaluation
/// is always at the point being reported.
pub fn lbfgs_minimize_observed<F, O>(
    mut objective: F,
    params: &[f64],
    state: &mut LbfgsState,
    mut observe: O,
) -> Result<LbfgsReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    O: FnMut(usize, &[f64]),
{
    let cfg = state.config.clone();
    let mut x = params.to_vec();
    let (mut f, mut g) = objective(&x)?;
    state.evaluations += 1;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimizer(format!("non-finite loss {f} at the starting point")));
    }
    observe(0, &x);
    let mut iters = 0;
    let stop = loop {
        if norm(&g) < cfg.grad_tol {
            break StopReason::GradientNorm;
        }
        if iters >= cfg.max_iter {
            break StopReason::MaxIterations;
        }
        let mut d = direction(&state.pairs, &g);
        let mut slope0 = dot(&g, &d);
        if !(slope0 < 0.0) {
            state.pairs.clear();
            d = g.iter().map(|v| -v).collect();
            slope0 = dot(&g, &d);
        }
        let a_init = if state.pairs.is_empty() {
            let l1: f64 = g.iter().map(|v| v.abs()).sum();
            cfg.lr * (1.0 / l1).min(1.0)
        } else {
            cfg.lr
        };
        let mut search = LineSearch {
            objective: &mut objective,
            x: &x,
            d: &d,
            f0: f,
            slope0,
            c1: cfg.c1,
            c2: cfg.c2,
            evals_left: cfg.max_line_search_evals,
            evals: 0,
        };
        let found = search.run(a_init)?;
        state.evaluations += search.evals;
        let (x_new, f_new, g_new) = match found {
            Some((a, p)) => {
                state.trace.push(LineSearchRecord {
                    step: a,
                    f0: f,
                    slope0,
                    f: p.f,
                    slope: p.slope,
                });
                (axpy(&x, a, &d), p.f, p.g)
            }
            None => {
                state.fallback_steps += 1;
                log::debug!("lbfgs: line search failed at iteration {iters}, taking a gradient step");
                let x_new = axpy(&x, -cfg.fallback_scale, &g);
                let (f_new, g_new) = objective(&x_new)?;
                state.evaluations += 1;
                if !f_new.is_finite() || g_new.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Optimizer(format!(
                        "non-finite loss {f_new} after fallback step at iteration {iters}"
                    )));
                }
                (x_new, f_new, g_new)
            }
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-10 * norm(&s) * norm(&y) {
            if state.pairs.len() == cfg.history {
                state.pairs.pop_front();
            }
            state.pairs.push_back((s, y));
        }
        iters += 1;
        state.iterations += 1;
        let change = (f - f_new).abs() / f.abs().max(f64::MIN_POSITIVE);
        x = x_new;
        f = f_new;
        g = g_new;
        observe(iters, &x);
        if change < cfg.rel_loss_tol {
            break StopReason::LossChange;
        }
    };
    Ok(LbfgsReport {
        params: x,
        loss: f,
        iterations: iters,
        stop,
    })
}

/// Two-loop recursion, `-H g`, with the usual `s'y / y'y` initial scaling.
fn direction(pairs: &VecDeque<(Vec<f64>, Vec<f64>)>, g: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push((rho, a));
    }
    if let Some((s, y)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y), (rho, a)) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn diagonal_quadratic() {
        let quad = |x: &[f64]| Ok((0.5 * (x[0] * x[0] + 10.0 * x[1] * x[1]), vec![x[0], 10.0 * x[1]]));
        let mut cfg = LbfgsConfig::new(1.0, 10);
        cfg.grad_tol = 1e-9;
        cfg.rel_loss_tol = 0.0;
        let mut st = LbfgsState::new(cfg);
        let r = lbfgs_minimize(quad, &[1.0, 1.0], &mut st).unwrap();
        let (_, g) = quad(&r.params).unwrap();
        assert!(norm(&g) < 1e-8, "{:?} after {}", g, r.iterations);
        assert!(r.iterations <= 10);
    }

    #[test]
    fn stationary_start() {
        let mut st = LbfgsState::new(LbfgsConfig::new(1.0, 50));
        let r = lbfgs_minimize(|x: &[f64]| Ok((x[0] * x[0], vec![2.0 * x[0]])), &[0.0], &mut st).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.stop, StopReason::GradientNorm);
    }

    #[test]
    fn rosenbrock_with_wolfe_points() {
        let mut st = LbfgsState::new(LbfgsConfig::new(1.0, 200));
        let r = lbfgs_minimize(rosenbrock, &[-1.2, 1.0], &mut st).unwrap();
        assert!(r.loss < 1e-8, "loss {} after {} iterations", r.loss, r.iterations);
        for rec in &st.trace {
            assert!(rec.satisfies_strong_wolfe(1e-4, 0.9), "{rec:?}");
        }
        for (s, y) in &st.pairs {
            assert!(dot(s, y) > 0.0);
        }
    }

    #[test]
    fn non_finite_start_aborts() {
        let mut st = LbfgsState::new(LbfgsConfig::new(1.0, 10));
        let err = lbfgs_minimize(|_x: &[f64]| Ok((f64::NAN, vec![0.0])), &[0.0], &mut st).unwrap_err();
        assert!(matches!(err, Error::Optimizer(_)));
    }

    #[test]
    fn backs_off_from_failing_region() {
        // undefined for x > 2; the initial unit step overshoots into it
        let f = |x: &[f64]| {
            if x[0] > 2.0 {
                Err(Error::SolverDiverged { step: 3 })
            } else {
                Ok(((x[0] - 1.5).powi(2), vec![2.0 * (x[0] - 1.5)]))
            }
        };
        let mut cfg = LbfgsConfig::new(100.0, 50);
        cfg.rel_loss_tol = 0.0;
        let mut st = LbfgsState::new(cfg);
        let r = lbfgs_minimize(f, &[0.0], &mut st).unwrap();
        assert!((r.params[0] - 1.5).abs() < 1e-6, "{:?}", r.params);
    }
}
