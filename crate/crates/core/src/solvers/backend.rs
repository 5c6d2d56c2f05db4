//! The two state representations the integrators run on: plain `Vec<f64>`
//! and `1 x n` tape nodes. Step formulas are written once against
//! [`Backend`].

use super::newton::{fd_jacobian, implicit_step_solve};
use super::{Lu, TapeField, VectorField, UNROLLED_NEWTON_ITERS};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub(crate) trait Backend {
    type State: Clone;

    fn rhs(&mut self, t: f64, x: &Self::State) -> Result<Self::State>;

    /// `sum_i c_i x_i`.
    fn combine(&mut self, terms: &[(f64, &Self::State)]) -> Result<Self::State>;

    /// Solves `lead * x - slope * f(t, x) = known` starting from `guess`.
    fn implicit(
        &mut self,
        t: f64,
        lead: f64,
        slope: f64,
        known: &Self::State,
        guess: Vec<f64>,
    ) -> Result<Self::State>;

    fn values(&self, x: &Self::State) -> Vec<f64>;

    /// The right-hand side on plain values, never recorded.
    fn plain_rhs(&self, t: f64, x: &[f64]) -> Result<Vec<f64>>;

    fn finite(&self, x: &Self::State) -> bool {
        self.values(x).iter().all(|v| v.is_finite())
    }
}

fn implicit_residual<'a, F: VectorField + ?Sized>(
    rhs: &'a F,
    t: f64,
    lead: f64,
    slope: f64,
    known: &'a [f64],
) -> impl FnMut(&[f64]) -> Result<Vec<f64>> + 'a {
    move |x: &[f64]| {
        let f = rhs.eval(t, x)?;
        Ok(x.iter()
            .zip(&f)
            .zip(known)
            .map(|((xi, fi), ki)| lead * xi - slope * fi - ki)
            .collect())
    }
}

pub(crate) struct PlainBackend<'a, F: ?Sized> {
    rhs: &'a F,
}

impl<'a, F: VectorField + ?Sized> PlainBackend<'a, F> {
    pub(crate) fn new(rhs: &'a F) -> Self {
        Self { rhs }
    }
}

impl<F: VectorField + ?Sized> Backend for PlainBackend<'_, F> {
    type State = Vec<f64>;

    fn rhs(&mut self, t: f64, x: &Vec<f64>) -> Result<Vec<f64>> {
        let f = self.rhs.eval(t, x)?;
        if f.len() != x.len() {
            return Err(Error::shape(
                "rhs",
                format!("state has {} entries, derivative {}", x.len(), f.len()),
            ));
        }
        Ok(f)
    }

    fn combine(&mut self, terms: &[(f64, &Vec<f64>)]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; terms[0].1.len()];
        for (c, v) in terms {
            out.iter_mut().zip(v.iter()).for_each(|(o, x)| *o += c * x);
        }
        Ok(out)
    }

    fn implicit(&mut self, t: f64, lead: f64, slope: f64, known: &Vec<f64>, guess: Vec<f64>) -> Result<Vec<f64>> {
        let sol = implicit_step_solve(implicit_residual(self.rhs, t, lead, slope, known), &guess)?;
        Ok(sol.x)
    }

    fn values(&self, x: &Vec<f64>) -> Vec<f64> {
        x.clone()
    }

    fn plain_rhs(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.rhs.eval(t, x)
    }
}

pub(crate) struct TapeBackend<'a, F: ?Sized> {
    tape: &'a mut Tape,
    rhs: &'a F,
}

impl<'a, F: TapeField + ?Sized> TapeBackend<'a, F> {
    pub(crate) fn new(tape: &'a mut Tape, rhs: &'a F) -> Self {
        Self { tape, rhs }
    }
}

impl<F: TapeField + ?Sized> Backend for TapeBackend<'_, F> {
    type State = Var;

    fn rhs(&mut self, t: f64, x: &Var) -> Result<Var> {
        let f = self.rhs.record(self.tape, t, *x)?;
        if self.tape.shape(f) != self.tape.shape(*x) {
            return Err(Error::shape("rhs", "derivative shape differs from state"));
        }
        Ok(f)
    }

    fn combine(&mut self, terms: &[(f64, &Var)]) -> Result<Var> {
        let terms: Vec<(f64, Var)> = terms.iter().map(|&(c, v)| (c, *v)).collect();
        self.tape.lin_comb(&terms)
    }

    /// Converges Newton off the tape, then replays a few Newton iterations on
    /// the tape starting from the converged point, with the Jacobian frozen
    /// at that point. The replayed map has the converged state as a fixed
    /// point and its derivative with respect to the inputs approximates the
    /// implicit-function gradient.
    fn implicit(&mut self, t: f64, lead: f64, slope: f64, known: &Var, guess: Vec<f64>) -> Result<Var> {
        let known_vals = self.tape.value(*known).data().to_vec();
        let mut residual = implicit_residual(self.rhs, t, lead, slope, &known_vals);
        let sol = implicit_step_solve(&mut residual, &guess)?;
        let r0 = residual(&sol.x)?;
        let n = sol.x.len();
        let jac = fd_jacobian(&mut residual, &sol.x, &r0)?;
        let inv_t = Tensor::new(n, n, Lu::factor(jac, n)?.inverse())?.transpose();

        let inv_t = self.tape.constant(inv_t)?;
        let mut x = self.tape.constant(Tensor::row(sol.x))?;
        for _ in 0..UNROLLED_NEWTON_ITERS {
            let fx = self.rhs.record(self.tape, t, x)?;
            let r = self.tape.lin_comb(&[(lead, x), (-slope, fx), (-1.0, *known)])?;
            let step = self.tape.matmul(r, inv_t)?;
            x = self.tape.sub(x, step)?;
        }
        Ok(x)
    }

    fn values(&self, x: &Var) -> Vec<f64> {
        self.tape.value(*x).data().to_vec()
    }

    fn plain_rhs(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.rhs.eval(t, x)
    }
}
