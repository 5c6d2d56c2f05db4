//! Absolute stability of multistep methods on the test equation
//! `x' = lambda x`, with `z = dt * lambda`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;

use super::LmmCoefficients;
use crate::error::{Error, Result};

pub const DK_MAX_SWEEPS: usize = 200;
const DK_TOL: f64 = 1e-13;
const UNIT_TOL: f64 = 1e-9;
const SIMPLE_ROOT_SEP: f64 = 1e-6;

/// Boundary-locus polyline of a scheme's stability region.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRegion {
    pub scheme: LmmCoefficients,
    /// Angles that produced a point, parallel to `points`.
    pub thetas: Vec<f64>,
    pub points: Vec<Complex64>,
    /// Sample indices skipped because `sigma(e^{i theta})` vanished.
    pub gaps: Vec<usize>,
}

impl StabilityRegion {
    pub fn is_closed(&self) -> bool {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => (a - b).norm() < 1e-9,
            _ => false,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,re_z,im_z\n");
        for (t, z) in self.thetas.iter().zip(&self.points) {
            let _ = writeln!(out, "{t},{},{}", z.re, z.im);
        }
        out
    }
}

fn poly_eval(coeffs: &[f64], w: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * w + c)
}

/// `z(theta) = rho(e^{i theta}) / sigma(e^{i theta})` at `n_points` angles
/// spanning `[0, 2 pi]` inclusive, so the polyline closes on itself.
pub fn stability_boundary(scheme: &LmmCoefficients, n_points: usize) -> Result<StabilityRegion> {
    if n_points < 3 {
        return Err(Error::invalid("stability boundary needs at least 3 samples"));
    }
    let mut region = StabilityRegion {
        scheme: scheme.clone(),
        thetas: Vec::with_capacity(n_points),
        points: Vec::with_capacity(n_points),
        gaps: Vec::new(),
    };
    for k in 0..n_points {
        let theta = 2.0 * PI * k as f64 / (n_points - 1) as f64;
        let w = Complex64::from_polar(1.0, theta);
        let sigma = poly_eval(&scheme.beta, w);
        if sigma.norm() < 1e-14 {
            region.gaps.push(k);
            continue;
        }
        region.thetas.push(theta);
        region.points.push(poly_eval(&scheme.alpha, w) / sigma);
    }
    Ok(region)
}

/// Roots of `sum_j c_j w^j` by simultaneous (Durand-Kerner) iteration.
/// `c` must have a nonzero leading coefficient.
pub fn polynomial_roots(c: &[Complex64]) -> Result<Vec<Complex64>> {
    let deg = c.len() - 1;
    let lead = c[deg];
    let monic: Vec<Complex64> = c.iter().map(|x| x / lead).collect();
    let eval = |w: Complex64| monic.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &x| acc * w + x);
    let mut roots: Vec<Complex64> = (0..deg)
        .map(|k| Complex64::from_polar(1.2, 2.0 * PI * k as f64 / deg as f64 + 0.4))
        .collect();
    for _ in 0..DK_MAX_SWEEPS {
        let mut worst: f64 = 0.0;
        for k in 0..deg {
            let wk = roots[k];
            let p = eval(wk);
            if p == Complex64::new(0.0, 0.0) {
                continue;
            }
            let denom = roots
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .fold(Complex64::new(1.0, 0.0), |acc, (_, &wj)| acc * (wk - wj));
            let delta = p / denom;
            if !delta.is_finite() {
                continue;
            }
            roots[k] = wk - delta;
            worst = worst.max(delta.norm() / wk.norm().max(1.0));
        }
        if worst < DK_TOL {
            return Ok(roots);
        }
    }
    Err(Error::RootFinder { sweeps: DK_MAX_SWEEPS })
}

/// Root condition for `rho(w) - z sigma(w)`: all roots in the closed unit
/// disc, and those on the unit circle simple.
pub fn is_absolutely_stable(scheme: &LmmCoefficients, z: Complex64) -> Result<bool> {
    let mut c: Vec<Complex64> = scheme
        .alpha
        .iter()
        .zip(&scheme.beta)
        .map(|(&a, &b)| Complex64::new(a, 0.0) - z * b)
        .collect();
    // a vanishing leading coefficient sends a root to infinity
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.norm()));
    if c[c.len() - 1].norm() <= 1e-14 * scale {
        return Ok(false);
    }
    // exact zero roots
    while c.len() > 1 && c[0] == Complex64::new(0.0, 0.0) {
        c.remove(0);
    }
    if c.len() == 1 {
        return Ok(true);
    }
    let roots = polynomial_roots(&c)?;
    if roots.iter().any(|w| w.norm() > 1.0 + UNIT_TOL) {
        return Ok(false);
    }
    let unit: Vec<&Complex64> = roots.iter().filter(|w| w.norm() >= 1.0 - UNIT_TOL).collect();
    for (i, a) in unit.iter().enumerate() {
        for b in &unit[i + 1..] {
            if (*a - *b).norm() <= SIMPLE_ROOT_SEP {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
