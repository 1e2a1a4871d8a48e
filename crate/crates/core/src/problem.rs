//! The contract a problem has to fulfil to be driven by the solvers.

use crate::error::{Error, Result};
use crate::Embedding;

/// A minimization problem `F(x) = f(x) + sum_i h_i(g_i(x))` over a convex set.
///
/// `f` is smooth with Lipschitz gradient, each `g_i` is convex and each `h_i`
/// is concave and increasing, so the supergradients of `h_i` are non-negative
/// and the subgradients `xi_i` of `-h_i` are non-positive. The composite terms
/// are indexed by a flat `0..m` range fixed by the problem.
///
/// All evaluation methods must be pure functions of their arguments (and of
/// the problem state set by [`DcProblem::enter_iteration`]).
pub trait DcProblem {
    /// Shape `(n, s)` of the optimization variable.
    fn shape(&self) -> (usize, usize);

    /// `f(x)`.
    fn smooth_value(&self, x: &Embedding) -> f64;

    /// `grad f(x)`, same shape as `x`.
    fn smooth_grad(&self, x: &Embedding) -> Embedding;

    /// The inner values `g_i(x)` for every composite term.
    fn composite_value(&self, x: &Embedding) -> Vec<f64>;

    /// `h_i(g_i)` for the given inner values.
    fn h_values(&self, inner: &[f64]) -> Vec<f64>;

    /// One subgradient `xi_i` of `-h_i` at `g_i(x)` per composite term.
    fn concave_subgrad(&self, x: &Embedding) -> Vec<f64>;

    /// Minimizer over the feasible set of
    /// `mu/2 ||x - v||^2 + <grad, x> - sum_i xi_i g_i(x)`.
    fn subproblem(&self, v: &Embedding, grad: &Embedding, xi: &[f64], mu: f64)
        -> Result<Embedding>;

    /// `F(x)`.
    fn objective(&self, x: &Embedding) -> f64 {
        let inner = self.composite_value(x);
        self.smooth_value(x) + self.h_values(&inner).iter().sum::<f64>()
    }

    /// Called by the drivers at the start of iteration `k`. Returns `true` when
    /// the problem data changed so that previously computed objective values
    /// are stale.
    fn enter_iteration(&mut self, _k: usize) -> bool {
        false
    }

    /// Identifier of the problem state active at iteration `k`. Objective
    /// values are comparable only within one segment.
    fn segment(&self, _k: usize) -> usize {
        0
    }

    fn check_shape(&self, x: &Embedding) -> Result<()> {
        let expected = self.shape();
        if x.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: x.dim(),
            });
        }
        Ok(())
    }
}
