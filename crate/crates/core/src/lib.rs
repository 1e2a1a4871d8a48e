//! Difference-of-convex solvers with adaptive majorization.
//!
//! The crate provides three drivers for problems of the form
//!
//! ```text
//! min_x  F(x) = f(x) + sum_i h_i(g_i(x_i))
//! ```
//!
//! where `f` is smooth with Lipschitz gradient, every `g_i` is convex and every
//! `h_i` is concave and increasing:
//!
//! * [`solver::dca_baseline_run`]: classic DCA with a fixed curvature `mu` that
//!   is only increased when a step fails to descend.
//! * [`solver::dca_like_run`]: DCA-Like, which re-estimates `mu` every iteration
//!   by backtracking on a majorization condition.
//! * [`solver::adca_like_run`]: DCA-Like with a Nesterov extrapolated reference
//!   point, accepted only when it does not increase the objective.
//!
//! Problems plug in through the [`problem::DcProblem`] trait. The [`tsne`]
//! module implements it for exact t-SNE, where the convex subproblem is a
//! shifted graph-Laplacian system solved by conjugate gradient
//! ([`linalg`]). [`data`] covers ingestion, kNN graphs and CSV output, and
//! [`bench`] wires everything into single runs and multi-seed campaigns.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod check;
pub mod data;
pub mod error;
pub mod linalg;
pub mod problem;
pub mod solver;
pub mod tsne;

pub use error::{Error, Result};

/// Row-major `n x s` matrix of optimization variables.
pub type Embedding = ndarray::Array2<f64>;
