//! Inverse LQR: recover the state-cost matrix `Q` of a finite-horizon LQR
//! from per-timestep snapshots of many indistinguishable agents.
//!
//! The estimator consumes only the Gram matrices `G_t = Y_t Y_tᵀ`, which do
//! not depend on how agents are ordered within each snapshot, and solves a
//! semidefinite program over `Q` and relaxed Riccati matrices `P_t`.

pub mod analysis;
pub mod assignment;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod ioc;
pub mod linalg;
pub mod lqr;
pub mod rng;
pub mod sdp;

pub use error::{Error, Result};
