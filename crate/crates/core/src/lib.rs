//! Neural networks trained through classical ODE integrators.
//!
//! Two workflows are supported: discovering an unknown right-hand side from
//! noisy trajectories (the network is the vector field inside an unrolled
//! Runge-Kutta or linear multistep solve), and estimating the physical
//! parameters of known equations with a pre-train / fine-tune scheme.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod harness;
pub mod io;
pub mod network;
pub mod optim;
pub mod problems;
pub mod train;
pub mod solvers;

pub use error::{Error, Result};
