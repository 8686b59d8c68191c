//! Generalized value iteration networks on spatial graphs.
//!
//! The crate is split along the planning pipeline:
//!
//! - [`graph`]: spatial graphs, maze worlds, generators and JSON I/O.
//! - [`autodiff`]: a small reverse-mode tape over the primitives the planner
//!   needs, centered RMSProp, and a finite-difference checker.
//! - [`kernels`]: directional, spatial and embedding kernels that turn a graph
//!   into per-channel sparse transition operators.
//! - [`planner`]: reward extraction, the value-iteration recurrence, pseudo
//!   action-values and greedy rollouts.
//! - [`training`]: episodic Q-learning, the n-step baseline and imitation
//!   learning.
//! - [`eval`]: shortest-path oracles, planning metrics and dataset I/O.
//!
//! With the default `parallel` feature, batch evaluation and imitation batches
//! fan out over rayon; without it every [`Execution`] runs sequentially.

pub mod autodiff;
pub mod eval;
pub mod graph;
pub mod kernels;
pub mod model;
pub mod par;
pub mod planner;
pub mod rng;
pub mod training;

pub use par::Execution;
