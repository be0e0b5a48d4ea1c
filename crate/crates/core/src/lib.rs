//! Distributionally robust model predictive control over scenario trees.
//!
//! This crate plans trajectories for an ego vehicle that negotiates a road
//! crossing with a human agent whose discrete decisions (brake / track) are
//! random with a state-dependent distribution. It provides:
//!
//! - a scenario-tree index structure enumerating decision sequences ([`tree`]),
//! - double-integrator agent models and decision-conditioned human control
//!   laws ([`dynamics`]),
//! - the ground-truth decision distribution and dataset generation
//!   ([`decision`]),
//! - norm-constrained logistic regression with an excess-risk bound that is
//!   converted into a KL ambiguity radius ([`learn`]),
//! - KL-ball coherent risk measures with primal and dual evaluators
//!   ([`risk`]),
//! - assembly of robust, stochastic and distributionally robust planning
//!   problems as smooth NLPs ([`ocp`]),
//! - an augmented-Lagrangian solver with forward-mode automatic
//!   differentiation ([`solve`]),
//! - ground-truth evaluation of open-loop plans and the comparative
//!   experiment ([`eval`]).
//!
//! All numeric kernels are generic over a [`Scalar`] type so the same code
//! evaluates on plain floats and on dual numbers when the solver needs
//! derivatives.

pub mod decision;
pub mod dual;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod learn;
pub mod ocp;
pub mod risk;
pub mod scalar;
pub mod solve;
pub mod tree;

pub use dual::Dual;
pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type for plain (non-differentiated) evaluation.
pub type Value = f64;

/// Number of derivative lanes carried per forward-mode sweep.
pub const GRAD_LANES: usize = 8;

/// Dual scalar used by the solver's gradient sweeps.
pub type Grad = Dual<GRAD_LANES>;
