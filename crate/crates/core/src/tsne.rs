//! Exact t-SNE as a difference-of-convex problem.
//!
//! The KL objective is split as `F = f + sum_ij h_ij(g_ij)` with
//!
//! ```text
//! f(x)    = sum p_ij log p_ij + log Z(x),   Z = sum_{k != l} (1 + ||x_k - x_l||^2)^-1
//! g_ij(x) = ||x_i - x_j||^2
//! h_ij(t) = p_ij log(1 + t)
//! ```
//!
//! so the convex subproblem is the linear system
//! `(2 L_{-xi - xi^T} + mu I) x = mu v - grad f(v)` over a graph Laplacian with
//! the sparsity pattern of `P`. All pairwise sums run in a fixed order, so
//! every evaluation is reproducible bit for bit.

use std::borrow::Cow;

use ndarray::{Array2, ArrayView2};

use crate::data::{DataMatrix, NeighborList};
use crate::error::{Error, Result};
use crate::linalg::{cg_solve, laplacian, SparseSym};
use crate::problem::DcProblem;
use crate::Embedding;

/// Tolerance on the total mass of a normalized affinity matrix.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Default relative residual for the subproblem solves.
pub const DEFAULT_CG_TOL: f64 = 1e-10;

/// Lipschitz constant `6 n sqrt(s)` of `grad f`.
pub fn lipschitz_bound(n: usize, s: usize) -> f64 {
    6.0 * n as f64 * (s as f64).sqrt()
}

/// Sparse symmetric joint probabilities `p_ij` with zero diagonal.
///
/// Entries are stored in compressed-row order; `mirror[e]` is the position of
/// the transposed entry of `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    matrix: SparseSym,
    mirror: Vec<usize>,
}

impl AffinityMatrix {
    /// Validates symmetry, non-negativity, zero diagonal and unit mass.
    pub fn new(matrix: SparseSym) -> Result<Self> {
        let p = Self::from_sparse_unchecked(matrix)?;
        let mass = p.total_mass();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "affinities sum to {mass}, expected 1"
            )));
        }
        Ok(p)
    }

    /// Like [`AffinityMatrix::new`] without the unit-mass requirement.
    fn from_sparse_unchecked(matrix: SparseSym) -> Result<Self> {
        let (row_ptr, _, _) = csr_parts(&matrix);
        let mut mirror = Vec::with_capacity(matrix.nnz());
        for (i, j, v) in matrix.iter() {
            if i == j {
                return Err(Error::InvalidInput(format!("diagonal affinity at {i}")));
            }
            if !(v >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "negative affinity at ({i}, {j})"
                )));
            }
            let (cols, vals) = matrix.row(j);
            let pos = cols.binary_search(&i).map_err(|_| {
                Error::InvalidInput(format!("affinity pattern is not symmetric at ({i}, {j})"))
            })?;
            if vals[pos] != v {
                return Err(Error::InvalidInput(format!(
                    "affinities are not symmetric at ({i}, {j})"
                )));
            }
            mirror.push(row_ptr[j] + pos);
        }
        Ok(Self { matrix, mirror })
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn as_sparse(&self) -> &SparseSym {
        &self.matrix
    }

    /// `(i, j, p_ij)` in pattern order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.matrix.iter()
    }

    pub fn values(&self) -> Vec<f64> {
        self.matrix.iter().map(|(_, _, v)| v).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.matrix.iter().map(|(_, _, v)| v).sum()
    }

    /// `sum p_ij log p_ij` with `0 log 0 = 0`.
    pub fn entropy_term(&self) -> f64 {
        self.matrix
            .iter()
            .map(|(_, _, p)| if p > 0.0 { p * p.ln() } else { 0.0 })
            .sum()
    }

    /// Same pattern with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let (row_ptr, cols, vals) = csr_parts(&self.matrix);
        let vals = vals.into_iter().map(|v| v * factor).collect();
        Self {
            matrix: SparseSym::from_csr(self.n(), row_ptr, cols, vals).expect("pattern unchanged"),
            mirror: self.mirror.clone(),
        }
    }

    /// Symmetrizes conditional probabilities (row `i` holds `p_{j|i}`) into
    /// `p_ij = (p_{j|i} + p_{i|j}) / 2n`, keeping only non-zero entries.
    pub fn from_conditional(conditional: ArrayView2<'_, f64>) -> Result<Self> {
        let n = conditional.nrows();
        if conditional.ncols() != n {
            return Err(Error::InvalidInput(
                "conditional matrix must be square".into(),
            ));
        }
        let scale = 1.0 / (2.0 * n as f64);
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = (conditional[[i, j]] + conditional[[j, i]]) * scale;
                if v > 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::new(SparseSym::from_triplets(n, triplets)?)
    }
}

fn csr_parts(m: &SparseSym) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let mut row_ptr = Vec::with_capacity(m.n() + 1);
    row_ptr.push(0);
    let mut cols = Vec::with_capacity(m.nnz());
    let mut vals = Vec::with_capacity(m.nnz());
    for i in 0..m.n() {
        let (c, v) = m.row(i);
        cols.extend_from_slice(c);
        vals.extend_from_slice(v);
        row_ptr.push(cols.len());
    }
    (row_ptr, cols, vals)
}

/// Binary symmetric kNN affinities: `pbar_ij = 1` when either point is among
/// the other's neighbors, normalized to unit mass.
pub fn build_knn_affinities(neighbors: &NeighborList, n: usize) -> Result<AffinityMatrix> {
    if neighbors.len() != n {
        return Err(Error::InvalidInput(format!(
            "neighbor list covers {} points, expected {n}",
            neighbors.len()
        )));
    }
    let mut edges = Vec::with_capacity(2 * n * neighbors.k());
    for i in 0..n {
        for &j in neighbors.neighbors(i) {
            edges.push((i, j));
            edges.push((j, i));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    if edges.is_empty() {
        return Err(Error::InvalidInput("empty neighbor list".into()));
    }
    let weight = 1.0 / edges.len() as f64;
    AffinityMatrix::new(SparseSym::from_triplets(
        n,
        edges.into_iter().map(|(i, j)| (i, j, weight)),
    )?)
}

/// `p_{j|i}` for all `j` under a Gaussian kernel of width `sigma` around
/// point `i`; entry `i` is zero.
pub fn gaussian_conditional(data: &DataMatrix, i: usize, sigma: f64) -> Result<Vec<f64>> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two points".into()));
    }
    if i >= n {
        return Err(Error::InvalidInput(format!("point {i} out of range")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let ai = data.row(i);
    let scale = 1.0 / (2.0 * sigma * sigma);
    let mut logits: Vec<f64> = (0..n)
        .map(|j| {
            if j == i {
                f64::NEG_INFINITY
            } else {
                let d2: f64 = ai
                    .iter()
                    .zip(data.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                -d2 * scale
            }
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for l in &mut logits {
        *l = (*l - max).exp();
    }
    let total: f64 = logits.iter().sum();
    Ok(logits.into_iter().map(|e| e / total).collect())
}

/// Joint Gaussian affinities from per-point bandwidths.
pub fn gaussian_affinities(data: &DataMatrix, sigmas: &[f64]) -> Result<AffinityMatrix> {
    let n = data.nrows();
    if sigmas.len() != 1 && sigmas.len() != n {
        return Err(Error::InvalidParameter(format!(
            "expected 1 or {n} bandwidths, got {}",
            sigmas.len()
        )));
    }
    let mut conditional = Array2::zeros((n, n));
    for i in 0..n {
        let sigma = if sigmas.len() == 1 {
            sigmas[0]
        } else {
            sigmas[i]
        };
        let row = gaussian_conditional(data, i, sigma)?;
        conditional
            .row_mut(i)
            .iter_mut()
            .zip(row)
            .for_each(|(c, v)| *c = v);
    }
    AffinityMatrix::from_conditional(conditional.view())
}

/// `xi_ij = -p_ij / (1 + ||x_i - x_j||^2)` on the pattern of `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct XiMatrix {
    matrix: SparseSym,
}

impl XiMatrix {
    /// Wraps values given in the pattern order of `p`.
    pub fn from_values(p: &AffinityMatrix, values: &[f64]) -> Result<Self> {
        if values.len() != p.nnz() {
            return Err(Error::InvalidInput(format!(
                "expected {} subgradient entries, got {}",
                p.nnz(),
                values.len()
            )));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(**v <= 0.0)) {
            return Err(Error::PositiveSubgradient { index, value });
        }
        let (row_ptr, cols, _) = csr_parts(p.as_sparse());
        Ok(Self {
            matrix: SparseSym::from_csr(p.n(), row_ptr, cols, values.to_vec())?,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn values(&self) -> Vec<f64> {
        self.matrix.iter().map(|(_, _, v)| v).collect()
    }

    pub fn as_sparse(&self) -> &SparseSym {
        &self.matrix
    }

    /// Weight matrix `A = -xi - xi^T` of the subproblem Laplacian.
    pub fn laplacian_weights(&self, p: &AffinityMatrix) -> SparseSym {
        let (row_ptr, cols, vals) = csr_parts(&self.matrix);
        let weights = (0..vals.len())
            .map(|e| -vals[e] - vals[p.mirror[e]])
            .collect();
        SparseSym::from_csr(self.matrix.n(), row_ptr, cols, weights).expect("pattern unchanged")
    }
}

/// Early exaggeration: `P` is multiplied by `factor` for the first
/// `duration` iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExaggerationSchedule {
    pub factor: f64,
    pub duration: usize,
}

impl Default for ExaggerationSchedule {
    fn default() -> Self {
        Self {
            factor: 4.0,
            duration: 20,
        }
    }
}

impl ExaggerationSchedule {
    pub fn none() -> Self {
        Self {
            factor: 1.0,
            duration: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.factor >= 1.0 && self.factor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "exaggeration factor must be at least 1, got {}",
                self.factor
            )));
        }
        Ok(())
    }

    pub fn is_active(&self, k: usize) -> bool {
        k < self.duration && self.factor != 1.0
    }
}

/// Effective affinities at iteration `k`; the original matrix is returned
/// untouched once the schedule has ended.
pub fn exaggerate<'a>(
    p: &'a AffinityMatrix,
    schedule: &ExaggerationSchedule,
    k: usize,
) -> Cow<'a, AffinityMatrix> {
    if schedule.is_active(k) {
        Cow::Owned(p.scaled(schedule.factor))
    } else {
        Cow::Borrowed(p)
    }
}

fn row_major(x: &Embedding) -> Cow<'_, [f64]> {
    match x.as_slice() {
        Some(s) => Cow::Borrowed(s),
        None => Cow::Owned(x.iter().copied().collect()),
    }
}

/// `Z(x) = sum_{k != l} (1 + ||x_k - x_l||^2)^-1`.
pub fn kernel_sum(x: &Embedding) -> f64 {
    let (n, s) = x.dim();
    let data = row_major(x);
    let mut z = 0.0;
    for i in 0..n {
        let xi = &data[i * s..(i + 1) * s];
        let mut row = 0.0;
        for j in (i + 1)..n {
            let xj = &data[j * s..(j + 1) * s];
            let d2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            row += 1.0 / (1.0 + d2);
        }
        z += row;
    }
    2.0 * z
}

fn squared_distances_on_pattern(x: &Embedding, p: &AffinityMatrix) -> Vec<f64> {
    let s = x.ncols();
    let data = row_major(x);
    p.iter()
        .map(|(i, j, _)| {
            let (xi, xj) = (&data[i * s..(i + 1) * s], &data[j * s..(j + 1) * s]);
            xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum()
        })
        .collect()
}

fn attraction(p: &AffinityMatrix, dist2: &[f64]) -> f64 {
    p.iter()
        .zip(dist2)
        .map(|((_, _, pij), d2)| pij * d2.ln_1p())
        .sum()
}

/// `KL(P || Q)` through `sum p log p + log Z + sum p log(1 + d^2)`.
pub fn objective(x: &Embedding, p: &AffinityMatrix) -> f64 {
    p.entropy_term() + kernel_sum(x).ln() + attraction(p, &squared_distances_on_pattern(x, p))
}

/// `grad f(x)`, exact `O(n^2 s)` evaluation. Also returns `Z(x)`.
pub fn grad_f_with_z(x: &Embedding) -> Result<(Embedding, f64)> {
    let (n, s) = x.dim();
    if n < 2 {
        return Err(Error::InvalidInput(
            "gradient needs at least two points".into(),
        ));
    }
    let data = row_major(x);
    let mut grad = vec![0.0; n * s];
    let mut diff = vec![0.0; s];
    let mut z = 0.0;
    for i in 0..n {
        let xi = &data[i * s..(i + 1) * s];
        let mut row_z = 0.0;
        for j in (i + 1)..n {
            let xj = &data[j * s..(j + 1) * s];
            let mut d2 = 0.0;
            for d in 0..s {
                diff[d] = xi[d] - xj[d];
                d2 += diff[d] * diff[d];
            }
            let w = 1.0 / (1.0 + d2);
            row_z += w;
            let c = w * w;
            for d in 0..s {
                grad[i * s + d] += c * diff[d];
                grad[j * s + d] -= c * diff[d];
            }
        }
        z += row_z;
    }
    let z = 2.0 * z;
    let scale = -4.0 / z;
    let grad = Array2::from_shape_vec((n, s), grad.into_iter().map(|g| g * scale).collect())
        .expect("shape matches buffer");
    Ok((grad, z))
}

pub fn grad_f(x: &Embedding) -> Result<Embedding> {
    grad_f_with_z(x).map(|(g, _)| g)
}

pub fn compute_xi(x: &Embedding, p: &AffinityMatrix) -> XiMatrix {
    let values: Vec<f64> = squared_distances_on_pattern(x, p)
        .into_iter()
        .zip(p.iter())
        .map(|(d2, (_, _, pij))| -pij / (1.0 + d2))
        .collect();
    XiMatrix::from_values(p, &values).expect("xi is non-positive by construction")
}

/// Gradient of the composite part, `2 L_{-xi - xi^T} x` with `xi` taken at
/// `x` itself.
pub fn composite_grad(x: &Embedding, p: &AffinityMatrix) -> Embedding {
    let xi = compute_xi(x, p);
    let (n, s) = x.dim();
    let data = row_major(x);
    let mut grad = Array2::zeros((n, s));
    for (i, j, v) in xi.as_sparse().iter() {
        for d in 0..s {
            let g = -2.0 * v * (data[i * s + d] - data[j * s + d]);
            grad[[i, d]] += g;
            grad[[j, d]] -= g;
        }
    }
    grad
}

/// Gradient of the full KL objective.
pub fn full_gradient(x: &Embedding, p: &AffinityMatrix) -> Result<Embedding> {
    Ok(grad_f(x)? + composite_grad(x, p))
}

/// Closed-form subproblem minimizer
/// `x+ = (2 L_{-xi - xi^T} + mu I)^-1 (mu v - grad)` by conjugate gradient,
/// warm-started at `v`.
pub fn subproblem_solve(
    v: &Embedding,
    grad: &Embedding,
    xi: &XiMatrix,
    p: &AffinityMatrix,
    mu: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Embedding> {
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mu must be positive, got {mu}"
        )));
    }
    if v.dim() != grad.dim() || v.nrows() != p.n() {
        return Err(Error::DimensionMismatch {
            expected: (p.n(), v.ncols()),
            found: grad.dim(),
        });
    }
    let lap = laplacian(xi.laplacian_weights(p));
    let rhs = v * mu - grad;
    cg_solve(
        &lap.shifted(2.0, mu),
        rhs.view(),
        Some(v.view()),
        tol,
        max_iter,
    )
}

/// Norm of the gradient of the subproblem objective
/// `mu/2 ||x - v||^2 + <grad f(v), x> + sum -xi_ij ||x_i - x_j||^2` at `x`,
/// evaluated pairwise without the Laplacian operator.
pub fn surrogate_gradient_norm(
    x: &Embedding,
    v: &Embedding,
    grad: &Embedding,
    xi: &XiMatrix,
    mu: f64,
) -> f64 {
    let mut g = grad + &((x - v) * mu);
    for (i, j, w) in xi.as_sparse().iter() {
        for d in 0..x.ncols() {
            let t = -2.0 * w * (x[[i, d]] - x[[j, d]]);
            g[[i, d]] += t;
            g[[j, d]] -= t;
        }
    }
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One DCA-Like step from `v` minimizes the MM surrogate: the surrogate
/// gradient at the returned point vanishes (norm `<= 1e-8`).
pub fn mm_equivalence_check(v: &Embedding, p: &AffinityMatrix, mu: f64) -> bool {
    mm_equivalence_check_with_tol(v, p, mu, DEFAULT_CG_TOL)
}

pub fn mm_equivalence_check_with_tol(
    v: &Embedding,
    p: &AffinityMatrix,
    mu: f64,
    cg_tol: f64,
) -> bool {
    let Ok(grad) = grad_f(v) else { return false };
    let xi = compute_xi(v, p);
    match subproblem_solve(v, &grad, &xi, p, mu, cg_tol, 10 * p.n().max(10)) {
        Ok(x) => surrogate_gradient_norm(&x, v, &grad, &xi, mu) <= 1e-8,
        Err(_) => false,
    }
}

/// t-SNE as a [`DcProblem`]: composite terms are the ordered pairs of the
/// affinity pattern.
#[derive(Debug, Clone)]
pub struct TsneProblem {
    p: AffinityMatrix,
    exaggerated: AffinityMatrix,
    schedule: ExaggerationSchedule,
    dims: usize,
    entropy: f64,
    exaggerated_entropy: f64,
    active_exaggeration: bool,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl TsneProblem {
    pub fn new(p: AffinityMatrix, dims: usize, schedule: ExaggerationSchedule) -> Result<Self> {
        schedule.validate()?;
        if dims == 0 {
            return Err(Error::InvalidParameter(
                "embedding dimension must be positive".into(),
            ));
        }
        if p.n() < 2 {
            return Err(Error::InvalidInput(
                "t-SNE needs at least two points".into(),
            ));
        }
        let exaggerated = p.scaled(schedule.factor);
        Ok(Self {
            entropy: p.entropy_term(),
            exaggerated_entropy: exaggerated.entropy_term(),
            cg_max_iter: 10 * p.n(),
            active_exaggeration: schedule.is_active(0),
            p,
            exaggerated,
            schedule,
            dims,
            cg_tol: DEFAULT_CG_TOL,
        })
    }

    /// The affinities currently in effect.
    pub fn affinities(&self) -> &AffinityMatrix {
        if self.active_exaggeration {
            &self.exaggerated
        } else {
            &self.p
        }
    }

    pub fn original_affinities(&self) -> &AffinityMatrix {
        &self.p
    }

    pub fn schedule(&self) -> ExaggerationSchedule {
        self.schedule
    }

    fn entropy(&self) -> f64 {
        if self.active_exaggeration {
            self.exaggerated_entropy
        } else {
            self.entropy
        }
    }
}

impl DcProblem for TsneProblem {
    fn shape(&self) -> (usize, usize) {
        (self.p.n(), self.dims)
    }

    fn smooth_value(&self, x: &Embedding) -> f64 {
        self.entropy() + kernel_sum(x).ln()
    }

    fn smooth_grad(&self, x: &Embedding) -> Embedding {
        grad_f(x).expect("problem has at least two points")
    }

    fn composite_value(&self, x: &Embedding) -> Vec<f64> {
        squared_distances_on_pattern(x, self.affinities())
    }

    fn h_values(&self, inner: &[f64]) -> Vec<f64> {
        self.affinities()
            .iter()
            .zip(inner)
            .map(|((_, _, p), t)| p * t.ln_1p())
            .collect()
    }

    fn concave_subgrad(&self, x: &Embedding) -> Vec<f64> {
        compute_xi(x, self.affinities()).values()
    }

    fn subproblem(
        &self,
        v: &Embedding,
        grad: &Embedding,
        xi: &[f64],
        mu: f64,
    ) -> Result<Embedding> {
        let p = self.affinities();
        let xi = XiMatrix::from_values(p, xi)?;
        subproblem_solve(v, grad, &xi, p, mu, self.cg_tol, self.cg_max_iter)
    }

    fn objective(&self, x: &Embedding) -> f64 {
        let p = self.affinities();
        self.entropy() + kernel_sum(x).ln() + attraction(p, &squared_distances_on_pattern(x, p))
    }

    fn enter_iteration(&mut self, k: usize) -> bool {
        let active = self.schedule.is_active(k);
        let changed = active != self.active_exaggeration;
        self.active_exaggeration = active;
        changed
    }

    fn segment(&self, k: usize) -> usize {
        usize::from(!self.schedule.is_active(k))
    }
}
