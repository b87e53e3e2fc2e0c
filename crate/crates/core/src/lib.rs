//! Spectral simulation of the singularly perturbed stochastic damped wave
//! equation `ν u_tt + u_t = Δu + f(u) + ν^α Ẇ` on `(0, π)` with Dirichlet
//! boundary conditions, its averaged first-order model, and stochastic
//! slow-manifold reductions.

// `!(x > 0.0)` deliberately rejects NaN along with nonpositive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod noise;
pub mod lti;
pub mod spectral;
pub mod ssm;

pub use error::{Error, Result};
