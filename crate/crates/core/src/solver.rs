//! DCA, DCA-Like and accelerated DCA-Like drivers.
//!
//! All three drivers share the same building blocks: a [`ReferencePoint`]
//! holding `F`, `grad f`, `xi` and `g` at the point the convex subproblem is
//! linearized around, and the curvature `mu` of the proximal term. DCA-Like
//! searches `mu` by backtracking on the majorization condition
//! `U_mu(x+, v) >= F(x+)` with
//!
//! ```text
//! U_mu(x, v) = F(v) + <grad f(v), x - v> + mu/2 ||x - v||^2 - <xi(v), g(x) - g(v)>
//! ```
//!
//! and shrinks it by `delta` at the start of every iteration. The accelerated
//! variant linearizes around a Nesterov extrapolation `w^k` whenever
//! `F(w^k) <= F(x^k)`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::problem::DcProblem;
use crate::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Dca,
    DcaLike,
    AdcaLike,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Dca, Variant::DcaLike, Variant::AdcaLike];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dca => "dca",
            Variant::DcaLike => "dca-like",
            Variant::AdcaLike => "adca-like",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dca" => Ok(Variant::Dca),
            "dca-like" | "dcalike" => Ok(Variant::DcaLike),
            "adca-like" | "adcalike" => Ok(Variant::AdcaLike),
            other => Err(Error::InvalidParameter(format!(
                "unknown variant {other:?} (expected dca, dca-like or adca-like)"
            ))),
        }
    }
}

/// What to do when an accepted step misses the sufficient-descent bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescentCheck {
    Off,
    Warn,
    Strict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub variant: Variant,
    /// Initial and minimal curvature.
    pub mu0: f64,
    /// Backtracking growth factor, `> 1`.
    pub eta: f64,
    /// Per-iteration shrink factor, in `(0, 1)`.
    pub delta: f64,
    pub max_iter: usize,
    /// Stop once `||x^{k+1} - x^k|| <= rel_tol * ||x^k||`.
    pub rel_tol: f64,
    pub max_backtracks: usize,
    pub seed: u64,
    /// Seed of the extrapolation sequence `t_k`.
    pub t0: f64,
    pub descent_check: DescentCheck,
    /// When false the trace records zero elapsed time, making trace files
    /// reproducible byte for byte.
    pub record_time: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DcaLike,
            mu0: 1e-6,
            eta: 2.0,
            delta: 0.8,
            max_iter: 10_000,
            rel_tol: 1e-8,
            max_backtracks: 100,
            seed: 0,
            t0: 1.0,
            descent_check: if cfg!(debug_assertions) {
                DescentCheck::Strict
            } else {
                DescentCheck::Warn
            },
            record_time: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.mu0 > 0.0 && self.mu0.is_finite()) {
            return bad(format!("mu0 must be positive, got {}", self.mu0));
        }
        if !(self.eta > 1.0 && self.eta.is_finite()) {
            return bad(format!("eta must exceed 1, got {}", self.eta));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        if !(self.rel_tol > 0.0) {
            return bad(format!("rel_tol must be positive, got {}", self.rel_tol));
        }
        if self.max_backtracks == 0 {
            return bad("max_backtracks must be positive".into());
        }
        if !(self.t0 >= 1.0 && self.t0.is_finite()) {
            return bad(format!("t0 must be at least 1, got {}", self.t0));
        }
        Ok(())
    }
}

/// Curvature and extrapolation bookkeeping across iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuState {
    pub mu0: f64,
    pub mu_prev: f64,
    pub mu_k: f64,
    pub t_k: f64,
    pub backtrack_count: usize,
}

impl MuState {
    pub fn new(config: &SolverConfig) -> Self {
        Self {
            mu0: config.mu0,
            mu_prev: config.mu0,
            mu_k: config.mu0,
            t_k: config.t0,
            backtrack_count: 0,
        }
    }

    /// `mu_k = max(mu0, delta * mu_{k-1})` for `k > 0`, `mu0` at `k = 0`.
    pub fn reset(&mut self, k: usize, delta: f64) -> f64 {
        self.mu_k = if k == 0 {
            self.mu0
        } else {
            self.mu0.max(delta * self.mu_prev)
        };
        self.mu_k
    }

    /// Records the curvature accepted by the backtracking loop.
    pub fn accept(&mut self, mu: f64, backtracks: usize) {
        self.mu_k = mu;
        self.mu_prev = mu;
        self.backtrack_count += backtracks;
    }
}

/// One row of the iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub elapsed_sec: f64,
    /// `F(x^{k+1})` under the problem state of this iteration.
    pub objective: f64,
    pub mu: f64,
    /// `||x^{k+1} - x^k||`.
    pub step_norm: f64,
    pub backtracks: usize,
    pub extrapolation_accepted: bool,
    /// `F(x^k)` under the problem state of this iteration.
    pub start_objective: f64,
    /// `||x^{k+1} - v^k||` where `v^k` is the linearization point.
    pub reference_step_norm: f64,
    pub segment: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn objectives(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.objective)
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// Checks that objectives never increase inside a problem segment,
    /// including the step from each iteration's start value.
    pub fn is_monotone(&self) -> bool {
        self.records
            .iter()
            .all(|r| r.objective <= r.start_objective)
            && self
                .records
                .windows(2)
                .all(|w| w[0].segment != w[1].segment || w[1].objective <= w[0].objective)
    }

    pub fn max_mu(&self) -> f64 {
        self.records.iter().map(|r| r.mu).fold(f64::NAN, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIter,
    RelStep,
    Error,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::MaxIter => "max-iter",
            Termination::RelStep => "rel-step",
            Termination::Error => "error",
        })
    }
}

/// Outcome of a driver run. On [`Termination::Error`] the embedding is the
/// last accepted iterate and `error` holds the cause.
#[derive(Debug)]
pub struct SolverResult {
    pub x: Embedding,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: IterationTrace,
    pub error: Option<Error>,
    pub descent_violations: usize,
}

impl SolverResult {
    pub fn final_objective(&self) -> Option<f64> {
        self.trace.last().map(|r| r.objective)
    }

    pub fn into_result(self) -> Result<Self> {
        match self.error {
            Some(err) => Err(err),
            None => Ok(self),
        }
    }
}

/// Everything the subproblem and the majorization test need about the
/// linearization point. Evaluated once per iteration and shared by all
/// backtracking trials.
#[derive(Debug, Clone)]
pub struct ReferencePoint {
    pub point: Embedding,
    pub objective: f64,
    pub grad: Embedding,
    pub xi: Vec<f64>,
    pub composite: Vec<f64>,
}

impl ReferencePoint {
    pub fn evaluate<P: DcProblem + ?Sized>(
        problem: &P,
        point: Embedding,
        objective: Option<f64>,
    ) -> Result<Self> {
        problem.check_shape(&point)?;
        let objective = objective.unwrap_or_else(|| problem.objective(&point));
        let grad = problem.smooth_grad(&point);
        let xi = problem.concave_subgrad(&point);
        if let Some((index, &value)) = xi.iter().enumerate().find(|(_, v)| !(**v <= 0.0)) {
            return Err(Error::PositiveSubgradient { index, value });
        }
        let composite = problem.composite_value(&point);
        Ok(Self {
            point,
            objective,
            grad,
            xi,
            composite,
        })
    }

    /// `U_mu(x_next, v) - F(x_next)` given `F(x_next)`.
    pub fn gap<P: DcProblem + ?Sized>(
        &self,
        problem: &P,
        x_next: &Embedding,
        f_next: f64,
        mu: f64,
    ) -> f64 {
        let diff = x_next - &self.point;
        let linear = (&self.grad * &diff).sum();
        let prox = 0.5 * mu * diff.iter().map(|d| d * d).sum::<f64>();
        let inner = problem.composite_value(x_next);
        let concave: f64 = self
            .xi
            .iter()
            .zip(inner.iter().zip(&self.composite))
            .map(|(xi, (g_next, g_ref))| xi * (g_next - g_ref))
            .sum();
        self.objective + linear + prox - concave - f_next
    }
}

/// `U_mu(x_next, v) - F(x_next)`; non-negative exactly when the majorization
/// condition holds for `mu` at the reference point `v`.
pub fn surrogate_gap<P: DcProblem + ?Sized>(
    problem: &P,
    x_next: &Embedding,
    v: &Embedding,
    mu: f64,
) -> Result<f64> {
    problem.check_shape(x_next)?;
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mu must be positive, got {mu}"
        )));
    }
    let reference = ReferencePoint::evaluate(problem, v.clone(), None)?;
    Ok(reference.gap(problem, x_next, problem.objective(x_next), mu))
}

/// An accepted step of the backtracking loop.
#[derive(Debug, Clone)]
pub struct Step {
    pub x: Embedding,
    pub objective: f64,
    pub mu: f64,
    pub backtracks: usize,
    pub gap: f64,
}

fn solve_checked<P: DcProblem + ?Sized>(
    problem: &P,
    reference: &ReferencePoint,
    mu: f64,
    iteration: usize,
) -> Result<(Embedding, f64)> {
    let x = problem.subproblem(&reference.point, &reference.grad, &reference.xi, mu)?;
    problem.check_shape(&x)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            iteration,
            what: "subproblem solution",
        });
    }
    let f = problem.objective(&x);
    if !f.is_finite() {
        return Err(Error::NonFinite {
            iteration,
            what: "objective",
        });
    }
    Ok((x, f))
}

/// Solves the convex subproblem at `reference` with `mu = eta^j * mu_in` for
/// the smallest `j >= 0` that satisfies the majorization condition.
pub fn backtrack_step<P: DcProblem + ?Sized>(
    problem: &P,
    reference: &ReferencePoint,
    mu_in: f64,
    config: &SolverConfig,
    iteration: usize,
) -> Result<Step> {
    let mut mu = mu_in;
    let mut backtracks = 0;
    loop {
        let (x, objective) = solve_checked(problem, reference, mu, iteration)?;
        let gap = reference.gap(problem, &x, objective, mu);
        if gap >= 0.0 {
            return Ok(Step {
                x,
                objective,
                mu,
                backtracks,
                gap,
            });
        }
        if backtracks >= config.max_backtracks {
            return Err(Error::MajorizationUnreachable {
                iteration,
                backtracks,
                mu,
                gap,
            });
        }
        mu *= config.eta;
        backtracks += 1;
    }
}

/// `t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2`.
pub fn nesterov_t_next(t: f64) -> f64 {
    0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
}

/// `x_k + (t_k - 1) / t_next * (x_k - x_prev)`.
pub fn extrapolate(
    x_k: &Embedding,
    x_prev: &Embedding,
    t_k: f64,
    t_next: f64,
) -> Result<Embedding> {
    if x_k.dim() != x_prev.dim() {
        return Err(Error::DimensionMismatch {
            expected: x_k.dim(),
            found: x_prev.dim(),
        });
    }
    let beta = (t_k - 1.0) / t_next;
    Ok(x_k + &((x_k - x_prev) * beta))
}

fn norm(x: &Embedding) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn descent_tolerance(f: f64) -> f64 {
    1e-10 * (1.0 + f.abs())
}

/// Shared loop state and trace bookkeeping for the three drivers.
struct Run<'a> {
    config: &'a SolverConfig,
    start: Instant,
    trace: IterationTrace,
    descent_violations: usize,
}

impl<'a> Run<'a> {
    fn new(config: &'a SolverConfig) -> Self {
        Self {
            config,
            start: Instant::now(),
            trace: IterationTrace::default(),
            descent_violations: 0,
        }
    }

    fn elapsed(&self) -> f64 {
        if self.config.record_time {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }

    fn check_descent(
        &mut self,
        iteration: usize,
        f_start: f64,
        f_next: f64,
        mu: f64,
        ref_step: f64,
    ) -> Result<()> {
        if self.config.descent_check == DescentCheck::Off {
            return Ok(());
        }
        let decrease = f_start - f_next;
        let bound = 0.5 * mu * ref_step * ref_step;
        if decrease >= bound - descent_tolerance(f_start) {
            return Ok(());
        }
        self.descent_violations += 1;
        let err = Error::DescentViolation {
            iteration,
            decrease,
            required: bound,
        };
        match self.config.descent_check {
            DescentCheck::Strict => Err(err),
            _ => {
                warn!("{err}");
                Ok(())
            }
        }
    }

    fn finish(self, x: Embedding, termination: Termination, error: Option<Error>) -> SolverResult {
        if let Some(err) = &error {
            debug!("run aborted: {err}");
        }
        SolverResult {
            iterations: self.trace.len(),
            x,
            termination,
            trace: self.trace,
            error,
            descent_violations: self.descent_violations,
        }
    }
}

fn initial_objective<P: DcProblem + ?Sized>(
    problem: &P,
    x: &Embedding,
    iteration: usize,
) -> Result<f64> {
    let f = problem.objective(x);
    if f.is_finite() {
        Ok(f)
    } else {
        Err(Error::NonFinite {
            iteration,
            what: "objective",
        })
    }
}

fn check_start<P: DcProblem + ?Sized>(
    problem: &P,
    x0: &Embedding,
    config: &SolverConfig,
) -> Result<()> {
    config.validate()?;
    problem.check_shape(x0)?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "initial point has non-finite entries".into(),
        ));
    }
    Ok(())
}

/// Runs the driver selected by `config.variant`.
pub fn run<P: DcProblem + ?Sized>(
    problem: &mut P,
    x0: &Embedding,
    config: &SolverConfig,
) -> Result<SolverResult> {
    match config.variant {
        Variant::Dca => dca_baseline_run(problem, x0, config),
        Variant::DcaLike => dca_like_run(problem, x0, config),
        Variant::AdcaLike => adca_like_run(problem, x0, config),
    }
}

/// DCA-Like: backtracked curvature, linearized at the current iterate.
///
/// Returns `Err` only for invalid configuration or initial point; failures
/// during the iterations end the run with [`Termination::Error`].
pub fn dca_like_run<P: DcProblem + ?Sized>(
    problem: &mut P,
    x0: &Embedding,
    config: &SolverConfig,
) -> Result<SolverResult> {
    check_start(problem, x0, config)?;
    let mut run = Run::new(config);
    let mut x = x0.clone();
    problem.enter_iteration(0);
    let mut fx = initial_objective(problem, &x, 0)?;
    let mut mu_state = MuState::new(config);

    for k in 0..config.max_iter {
        if k > 0 && problem.enter_iteration(k) {
            fx = match initial_objective(problem, &x, k) {
                Ok(f) => f,
                Err(err) => return Ok(run.finish(x, Termination::Error, Some(err))),
            };
        }
        let step = ReferencePoint::evaluate(problem, x.clone(), Some(fx)).and_then(|reference| {
            let mu = mu_state.reset(k, config.delta);
            backtrack_step(problem, &reference, mu, config, k)
        });
        let step = match step {
            Ok(step) => step,
            Err(err) => return Ok(run.finish(x, Termination::Error, Some(err))),
        };
        mu_state.accept(step.mu, step.backtracks);

        let step_norm = norm(&(&step.x - &x));
        if let Err(err) = run.check_descent(k, fx, step.objective, step.mu, step_norm) {
            return Ok(run.finish(x, Termination::Error, Some(err)));
        }
        let x_norm = norm(&x);
        run.trace.records.push(IterationRecord {
            iter: k,
            elapsed_sec: run.elapsed(),
            objective: step.objective,
            mu: step.mu,
            step_norm,
            backtracks: step.backtracks,
            extrapolation_accepted: false,
            start_objective: fx,
            reference_step_norm: step_norm,
            segment: problem.segment(k),
        });
        x = step.x;
        fx = step.objective;
        if step_norm <= config.rel_tol * x_norm {
            return Ok(run.finish(x, Termination::RelStep, None));
        }
    }
    Ok(run.finish(x, Termination::MaxIter, None))
}

/// Classic DCA with a monotone curvature update: the step is redone with
/// `eta * mu` until it achieves `F(x) - F(x+) >= mu/2 ||x+ - x||^2` (up to
/// rounding slack), and `mu` is never decreased.
pub fn dca_baseline_run<P: DcProblem + ?Sized>(
    problem: &mut P,
    x0: &Embedding,
    config: &SolverConfig,
) -> Result<SolverResult> {
    check_start(problem, x0, config)?;
    let mut run = Run::new(config);
    let mut x = x0.clone();
    problem.enter_iteration(0);
    let mut fx = initial_objective(problem, &x, 0)?;
    let mut mu = config.mu0;

    for k in 0..config.max_iter {
        if k > 0 && problem.enter_iteration(k) {
            fx = match initial_objective(problem, &x, k) {
                Ok(f) => f,
                Err(err) => return Ok(run.finish(x, Termination::Error, Some(err))),
            };
        }
        let attempt =
            ReferencePoint::evaluate(problem, x.clone(), Some(fx)).and_then(|reference| {
                let mut redos = 0;
                loop {
                    let (x_next, f_next) = solve_checked(problem, &reference, mu, k)?;
                    let step_norm = norm(&(&x_next - &x));
                    // the descent every step at mu >= L achieves; fails on overshoot
                    // and on non-decreasing steps such as 2-cycles
                    if fx - f_next >= 0.5 * mu * step_norm * step_norm - descent_tolerance(fx) {
                        return Ok((x_next, f_next, step_norm, redos));
                    }
                    if redos >= config.max_backtracks {
                        return Err(Error::MajorizationUnreachable {
                            iteration: k,
                            backtracks: redos,
                            mu,
                            gap: fx - f_next,
                        });
                    }
                    mu *= config.eta;
                    redos += 1;
                }
            });
        let (x_next, f_next, step_norm, redos) = match attempt {
            Ok(accepted) => accepted,
            Err(err) => return Ok(run.finish(x, Termination::Error, Some(err))),
        };
        let x_norm = norm(&x);
        run.trace.records.push(IterationRecord {
            iter: k,
            elapsed_sec: run.elapsed(),
            objective: f_next,
            mu,
            step_norm,
            backtracks: redos,
            extrapolation_accepted: false,
            start_objective: fx,
            reference_step_norm: step_norm,
            segment: problem.segment(k),
        });
        x = x_next;
        fx = f_next;
        if step_norm <= config.rel_tol * x_norm {
            return Ok(run.finish(x, Termination::RelStep, None));
        }
    }
    Ok(run.finish(x, Termination::MaxIter, None))
}

/// Accelerated DCA-Like: linearizes at the extrapolated point `w^k` when
/// `F(w^k) <= F(x^k)`, otherwise at `x^k`.
pub fn adca_like_run<P: DcProblem + ?Sized>(
    problem: &mut P,
    x0: &Embedding,
    config: &SolverConfig,
) -> Result<SolverResult> {
    check_start(problem, x0, config)?;
    let mut run = Run::new(config);
    let mut x = x0.clone();
    let mut w = x0.clone();
    problem.enter_iteration(0);
    let mut fx = initial_objective(problem, &x, 0)?;
    let mut mu_state = MuState::new(config);

    for k in 0..config.max_iter {
        if k > 0 && problem.enter_iteration(k) {
            fx = match initial_objective(problem, &x, k) {
                Ok(f) => f,
                Err(err) => return Ok(run.finish(x, Termination::Error, Some(err))),
            };
        }
        // a non-finite F(w) counts as "not better"
        let fw = if k == 0 { fx } else { problem.objective(&w) };
        let accepted = fw.is_finite() && fw <= fx;
        let (v, fv) = if accepted {
            (w.clone(), fw)
        } else {
            (x.clone(), fx)
        };

        let step = ReferencePoint::evaluate(problem, v, Some(fv)).and_then(|reference| {
            let mu = mu_state.reset(k, config.delta);
            let step = backtrack_step(problem, &reference, mu, config, k)?;
            Ok((norm(&(&step.x - &reference.point)), step))
        });
        let (ref_step, step) = match step {
            Ok(step) => step,
            Err(err) => return Ok(run.finish(x, Termination::Error, Some(err))),
        };
        mu_state.accept(step.mu, step.backtracks);
        if let Err(err) = run.check_descent(k, fx, step.objective, step.mu, ref_step) {
            return Ok(run.finish(x, Termination::Error, Some(err)));
        }

        let t_next = nesterov_t_next(mu_state.t_k);
        w = extrapolate(&step.x, &x, mu_state.t_k, t_next)?;
        mu_state.t_k = t_next;

        let step_norm = norm(&(&step.x - &x));
        let x_norm = norm(&x);
        run.trace.records.push(IterationRecord {
            iter: k,
            elapsed_sec: run.elapsed(),
            objective: step.objective,
            mu: step.mu,
            step_norm,
            backtracks: step.backtracks,
            extrapolation_accepted: accepted,
            start_objective: fx,
            reference_step_norm: ref_step,
            segment: problem.segment(k),
        });
        x = step.x;
        fx = step.objective;
        if step_norm <= config.rel_tol * x_norm {
            return Ok(run.finish(x, Termination::RelStep, None));
        }
    }
    Ok(run.finish(x, Termination::MaxIter, None))
}
