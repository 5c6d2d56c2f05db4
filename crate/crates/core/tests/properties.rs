use num_complex::Complex64;
use proptest::prelude::*;

use neuralsolve::autodiff::{Tape, Tensor};
use neuralsolve::data::synthesize_observations;
use neuralsolve::harness::{compute_mse, ExperimentConfig};
use neuralsolve::solvers::{
    all_methods, integrate, is_absolutely_stable, lmm_coefficients, LmmFamily, SolverScheme, TimeGrid, Trajectory,
};
use neuralsolve::train::{range_penalty, TimeMap};

fn trajectory(values: &[f64], dim: usize) -> Trajectory {
    let rows = values.len() / dim;
    Trajectory {
        grid: TimeGrid::new(0.0, 0.1, rows - 1).unwrap(),
        states: Tensor::new(rows, dim, values[..rows * dim].to_vec()).unwrap(),
    }
}

proptest! {
    #[test]
    fn lin_comb_gradient_is_its_coefficients(c in prop::collection::vec(-5.0f64..5.0, 1..6), x in -3.0f64..3.0) {
        let mut tape = Tape::new();
        let leaves: Vec<_> = c.iter().map(|_| tape.param(Tensor::scalar(x)).unwrap()).collect();
        let terms: Vec<_> = c.iter().zip(&leaves).map(|(&ci, &l)| (ci, l)).collect();
        let y = tape.lin_comb(&terms).unwrap();
        let g = tape.backward(y).unwrap();
        for (ci, l) in c.iter().zip(&leaves) {
            prop_assert_eq!(g.get(*l).unwrap().item(), *ci);
        }
    }

    #[test]
    fn tanh_gradient_in_unit_interval(x in -20.0f64..20.0) {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(x)).unwrap();
        let y = tape.tanh(a).unwrap();
        let g = tape.backward(y).unwrap().get(a).unwrap().item();
        prop_assert!((0.0..=1.0).contains(&g));
    }

    #[test]
    fn transpose_is_an_involution(rows in 1usize..5, cols in 1usize..5, seed in 0u64..1000) {
        let data: Vec<f64> = (0..rows * cols).map(|i| ((i as u64 * 31 + seed) % 17) as f64 - 8.0).collect();
        let t = Tensor::new(rows, cols, data).unwrap();
        prop_assert_eq!(t.transpose().transpose(), t);
    }

    #[test]
    fn time_map_hits_both_ends(t0 in -50.0f64..50.0, span in 0.1f64..200.0, s in 0.0f64..1.0) {
        let m = TimeMap::new(t0, t0 + span).unwrap();
        prop_assert!((m.apply(t0) + 1.0).abs() < 1e-12);
        prop_assert!((m.apply(t0 + span) - 1.0).abs() < 1e-9);
        let inner = m.apply(t0 + s * span);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&inner));
        prop_assert!((m.rate() * span - 2.0).abs() < 1e-12);
    }

    #[test]
    fn range_penalty_vanishes_inside(lo in -5.0f64..5.0, width in 0.1f64..5.0, s in 0.0f64..1.0, out in 0.01f64..3.0) {
        let hi = lo + width;
        prop_assert_eq!(range_penalty(lo + s * width, (lo, hi)), 0.0);
        prop_assert!(range_penalty(hi + out, (lo, hi)) > 0.0);
        prop_assert!(range_penalty(lo - out, (lo, hi)) > 0.0);
    }

    #[test]
    fn clean_observations_pass_through(values in prop::collection::vec(-10.0f64..10.0, 4..40), seed in any::<u64>()) {
        let reference = trajectory(&values, 2);
        let obs = synthesize_observations(&reference, 0.0, seed).unwrap();
        prop_assert_eq!(obs.states, reference.states);
    }

    #[test]
    fn noise_is_seed_deterministic(values in prop::collection::vec(-10.0f64..10.0, 4..40), seed in any::<u64>(), delta in 0.01f64..1.0) {
        let reference = trajectory(&values, 2);
        let a = synthesize_observations(&reference, delta, seed).unwrap();
        let b = synthesize_observations(&reference, delta, seed).unwrap();
        prop_assert_eq!(a.states, b.states);
    }

    #[test]
    fn mse_is_nonnegative_and_zero_on_equal(a in prop::collection::vec(-100.0f64..100.0, 1..30), shift in -1.0f64..1.0) {
        prop_assert_eq!(compute_mse(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + shift).collect();
        let m = compute_mse(&a, &b).unwrap();
        prop_assert!((m - shift * shift).abs() < 1e-9);
    }

    #[test]
    fn every_scheme_keeps_a_constant_field(x0 in prop::collection::vec(-5.0f64..5.0, 1..4), pick in 0usize..16) {
        let scheme = if pick == 15 {
            SolverScheme::Rkf45
        } else {
            SolverScheme::Lmm(all_methods()[pick].clone())
        };
        let f = |_t: f64, x: &[f64]| vec![0.0; x.len()];
        let grid = TimeGrid::new(0.0, 0.1, 8).unwrap();
        let traj = integrate(&f, &x0, &grid, &scheme).unwrap();
        for j in 0..grid.len() {
            prop_assert_eq!(traj.state(j), &x0[..]);
        }
    }

    #[test]
    fn lmm_coefficients_are_consistent(pick in 0usize..15) {
        let c = &all_methods()[pick];
        let sum: f64 = c.alpha.iter().sum();
        prop_assert!(sum.abs() < 1e-12);
        prop_assert!(c.order_residuals().iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn forward_euler_region_is_the_unit_disc(re in -2.5f64..0.5, im in -1.5f64..1.5) {
        let z = Complex64::new(re, im);
        let d = (z + 1.0).norm();
        prop_assume!((d - 1.0).abs() > 1e-6);
        let ab1 = lmm_coefficients(LmmFamily::AdamsBashforth, 1).unwrap();
        prop_assert_eq!(is_absolutely_stable(&ab1, z).unwrap(), d < 1.0);
    }

    #[test]
    fn backward_euler_stable_on_negative_axis(x in 1e-3f64..1e4) {
        let bdf1 = lmm_coefficients(LmmFamily::Bdf, 1).unwrap();
        prop_assert!(is_absolutely_stable(&bdf1, Complex64::new(-x, 0.0)).unwrap());
    }

    #[test]
    fn config_text_round_trips(seed in 0u64..10_000, noise in 0.0f64..1.0, width in 1usize..128, layers in 1usize..5) {
        let mut cfg = ExperimentConfig::parse("problem.name = fn\n").unwrap();
        cfg.override_seeds(seed);
        cfg.noise = noise;
        cfg.hidden_width = width;
        cfg.hidden_layers = layers;
        let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
