//! Coefficients of linear multistep methods
//! `sum_j alpha_j x_{n+j} = dt * sum_j beta_j f_{n+j}`, `j = 0..=M`.
//!
//! Coefficients come from solving the order conditions exactly in rational
//! arithmetic, so the classical closed forms are reproduced bit-for-bit.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;

use crate::error::{Error, Result};

type Q = Ratio<i128>;

pub const MAX_STEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LmmFamily {
    AdamsBashforth,
    AdamsMoulton,
    Bdf,
}

impl LmmFamily {
    pub fn prefix(self) -> &'static str {
        match self {
            LmmFamily::AdamsBashforth => "ab",
            LmmFamily::AdamsMoulton => "am",
            LmmFamily::Bdf => "bdf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmmCoefficients {
    pub family: LmmFamily,
    pub steps: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LmmCoefficients {
    pub fn is_explicit(&self) -> bool {
        self.beta[self.steps] == 0.0
    }

    /// Consistency order: `M` for AB and BDF, `M + 1` for AM.
    pub fn order(&self) -> usize {
        match self.family {
            LmmFamily::AdamsMoulton => self.steps + 1,
            _ => self.steps,
        }
    }

    pub fn name(&self) -> String {
        format!("{}{}", self.family.prefix(), self.steps)
    }

    /// Residuals of the order conditions: `sum alpha_j` for p = 0, then
    /// `sum j^p alpha_j - p sum j^(p-1) beta_j` for p = 1..=order.
    pub fn order_residuals(&self) -> Vec<f64> {
        let mut out = vec![self.alpha.iter().sum()];
        for p in 1..=self.order() as i32 {
            let lhs: f64 = self
                .alpha
                .iter()
                .enumerate()
                .map(|(j, a)| (j as f64).powi(p) * a)
                .sum();
            let rhs: f64 = self
                .beta
                .iter()
                .enumerate()
                .map(|(j, b)| (j as f64).powi(p - 1) * b)
                .sum();
            out.push(lhs - p as f64 * rhs);
        }
        out
    }
}

impl fmt::Display for LmmCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

fn pow(j: usize, p: usize) -> Q {
    Q::from_integer((j as i128).pow(p as u32))
}

/// Gauss-Jordan elimination over the rationals.
fn solve_exact(mut a: Vec<Vec<Q>>, mut b: Vec<Q>) -> Vec<Q> {
    let n = b.len();
    for k in 0..n {
        let pivot = (k..n).find(|&i| a[i][k] != Q::from_integer(0)).expect("order conditions are nonsingular");
        a.swap(k, pivot);
        b.swap(k, pivot);
        let d = a[k][k];
        for c in k..n {
            a[k][c] /= d;
        }
        b[k] /= d;
        for i in 0..n {
            if i != k && a[i][k] != Q::from_integer(0) {
                let f = a[i][k];
                for c in k..n {
                    let v = a[k][c];
                    a[i][c] -= f * v;
                }
                let v = b[k];
                b[i] -= f * v;
            }
        }
    }
    b
}

fn exact_coefficients(family: LmmFamily, m: usize) -> (Vec<Q>, Vec<Q>) {
    let zero = Q::from_integer(0);
    let one = Q::from_integer(1);
    match family {
        LmmFamily::AdamsBashforth | LmmFamily::AdamsMoulton => {
            let mut alpha = vec![zero; m + 1];
            alpha[m] = one;
            alpha[m - 1] = -one;
            // unknown betas: 0..m-1 for AB, 0..=m for AM
            let n_beta = if family == LmmFamily::AdamsBashforth { m } else { m + 1 };
            let mut a = Vec::with_capacity(n_beta);
            let mut b = Vec::with_capacity(n_beta);
            for p in 1..=n_beta {
                a.push((0..n_beta).map(|j| Q::from_integer(p as i128) * pow(j, p - 1)).collect());
                b.push(pow(m, p) - pow(m - 1, p));
            }
            let mut beta = solve_exact(a, b);
            beta.resize(m + 1, zero);
            (alpha, beta)
        }
        LmmFamily::Bdf => {
            // beta_M = 1; unknown alphas 0..=m
            let mut a = Vec::with_capacity(m + 1);
            let mut b = Vec::with_capacity(m + 1);
            for p in 0..=m {
                a.push((0..=m).map(|j| pow(j, p)).collect());
                b.push(if p == 0 {
                    zero
                } else {
                    Q::from_integer(p as i128) * pow(m, p - 1)
                });
            }
            let alpha = solve_exact(a, b);
            let mut beta = vec![zero; m + 1];
            beta[m] = one;
            (alpha, beta)
        }
    }
}

fn to_f64(q: &Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

/// Coefficients of the `steps`-step member of `family`.
///
/// AB and AM are normalized with `alpha_M = 1`; BDF with `beta_M = 1`.
/// `AM1` is the trapezoidal rule.
pub fn lmm_coefficients(family: LmmFamily, steps: usize) -> Result<LmmCoefficients> {
    if !(1..=MAX_STEPS).contains(&steps) {
        return Err(Error::invalid(format!(
            "{}{steps}: step count must be in 1..={MAX_STEPS}",
            family.prefix()
        )));
    }
    let (alpha, beta) = exact_coefficients(family, steps);
    Ok(LmmCoefficients {
        family,
        steps,
        alpha: alpha.iter().map(to_f64).collect(),
        beta: beta.iter().map(to_f64).collect(),
    })
}

impl FromStr for LmmCoefficients {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (family, digits) = if let Some(d) = lower.strip_prefix("bdf") {
            (LmmFamily::Bdf, d)
        } else if let Some(d) = lower.strip_prefix("ab") {
            (LmmFamily::AdamsBashforth, d)
        } else if let Some(d) = lower.strip_prefix("am") {
            (LmmFamily::AdamsMoulton, d)
        } else {
            return Err(Error::invalid(format!("unknown multistep scheme '{s}'")));
        };
        let steps: usize = digits
            .parse()
            .map_err(|_| Error::invalid(format!("unknown multistep scheme '{s}'")))?;
        lmm_coefficients(family, steps)
    }
}

/// All fifteen supported methods, AB1..5, AM1..5, BDF1..5.
pub fn all_methods() -> Vec<LmmCoefficients> {
    [LmmFamily::AdamsBashforth, LmmFamily::AdamsMoulton, LmmFamily::Bdf]
        .into_iter()
        .flat_map(|f| (1..=MAX_STEPS).map(move |m| lmm_coefficients(f, m).unwrap()))
        .collect()
}
