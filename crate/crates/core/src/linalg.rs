//! Sparse weight matrices, graph Laplacians and a conjugate-gradient solver
//! for shifted Laplacian systems with several right-hand sides.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Square sparse matrix in compressed-row form.
///
/// Built from coordinate triplets; repeated `(i, j)` pairs are merged by
/// summation so the stored pattern never contains duplicates. Columns within
/// a row are sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSym {
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(i, j, v) in &entries {
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!(
                    "entry ({i}, {j}) out of bounds for a {n}x{n} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "entry ({i}, {j}) is not finite"
                )));
            }
        }
        entries.sort_by_key(|e| (e.0, e.1));

        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *vals.last_mut().expect("merged entry has a predecessor") += v;
                continue;
            }
            last = Some((i, j));
            row_ptr[i + 1] += 1;
            cols.push(j);
            vals.push(v);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            n,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Builds a matrix directly from compressed-row arrays.
    ///
    /// Columns must be strictly increasing inside every row.
    pub fn from_csr(
        n: usize,
        row_ptr: Vec<usize>,
        cols: Vec<usize>,
        vals: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != n + 1
            || row_ptr[0] != 0
            || row_ptr[n] != cols.len()
            || cols.len() != vals.len()
        {
            return Err(Error::InvalidInput(
                "inconsistent compressed-row arrays".into(),
            ));
        }
        for i in 0..n {
            let (lo, hi) = (row_ptr[i], row_ptr[i + 1]);
            if lo > hi {
                return Err(Error::InvalidInput(format!(
                    "row pointer decreases at row {i}"
                )));
            }
            let row = &cols[lo..hi];
            if row.iter().any(|&j| j >= n) || row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidInput(format!(
                    "row {i} has unsorted, duplicate or out-of-range columns"
                )));
            }
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite matrix entry".into()));
        }
        Ok(Self {
            n,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |p| vals[p])
    }

    /// Stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut dense = Array2::zeros((self.n, self.n));
        for (i, j, v) in self.iter() {
            dense[[i, j]] = v;
        }
        dense
    }
}

/// A symmetric linear map on `R^n`.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// Writes `A x` into `y`.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// An upper bound on the operator 2-norm, if cheaply available. Lets the
    /// solver stop at the rounding floor when the requested tolerance is out
    /// of reach.
    fn norm_bound(&self) -> Option<f64> {
        None
    }
}

/// Graph Laplacian `L_A` of a weight matrix `A`:
/// `(L_A)_ij = -A_ij` off the diagonal and `(L_A)_ii = -A_ii + sum_l A_il`.
///
/// Equivalently `L_A = D - A` with `D = diag(row sums of A)`, diagonal entries
/// of `A` included.
#[derive(Debug, Clone)]
pub struct LaplacianOp {
    weights: SparseSym,
    row_sums: Vec<f64>,
}

pub fn laplacian(weights: SparseSym) -> LaplacianOp {
    let row_sums = (0..weights.n())
        .map(|i| weights.row(i).1.iter().sum())
        .collect();
    LaplacianOp { weights, row_sums }
}

impl LaplacianOp {
    pub fn weights(&self) -> &SparseSym {
        &self.weights
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut dense = self.weights.to_dense().mapv(|v| -v);
        for (i, s) in self.row_sums.iter().enumerate() {
            dense[[i, i]] += s;
        }
        dense
    }

    /// The operator `scale * L_A + shift * I`.
    pub fn shifted(&self, scale: f64, shift: f64) -> ShiftedLaplacian<'_> {
        ShiftedLaplacian {
            laplacian: self,
            scale,
            shift,
        }
    }
}

impl LinearOperator for LaplacianOp {
    fn dim(&self) -> usize {
        self.weights.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.weights.row(i);
            let mut acc = self.row_sums[i] * x[i];
            for (&j, &a) in cols.iter().zip(vals) {
                acc -= a * x[j];
            }
            *yi = acc;
        }
    }

    /// Gershgorin: `|L_A|` has row sums `2 * sum_{j != i} A_ij`.
    fn norm_bound(&self) -> Option<f64> {
        let worst = (0..self.weights.n())
            .map(|i| {
                let (cols, vals) = self.weights.row(i);
                let diag: f64 = cols
                    .iter()
                    .zip(vals)
                    .filter(|(&j, _)| j == i)
                    .map(|(_, v)| v)
                    .sum();
                2.0 * (self.row_sums[i] - diag).abs()
            })
            .fold(0.0, f64::max);
        Some(worst)
    }
}

/// `scale * L + shift * I`; SPD whenever `L` is PSD and `shift > 0`.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedLaplacian<'a> {
    laplacian: &'a LaplacianOp,
    scale: f64,
    shift: f64,
}

impl ShiftedLaplacian<'_> {
    pub fn to_dense(&self) -> Array2<f64> {
        let mut dense = self.laplacian.to_dense() * self.scale;
        for i in 0..dense.nrows() {
            dense[[i, i]] += self.shift;
        }
        dense
    }
}

impl LinearOperator for ShiftedLaplacian<'_> {
    fn dim(&self) -> usize {
        self.laplacian.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.laplacian.apply(x, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = self.scale * *yi + self.shift * xi;
        }
    }

    fn norm_bound(&self) -> Option<f64> {
        self.laplacian
            .norm_bound()
            .map(|l| self.scale.abs() * l + self.shift.abs())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A X = B` column by column with unpreconditioned conjugate gradient.
///
/// Every returned column satisfies `||A x - b|| <= tol * ||b||`, checked on the
/// true residual before returning. When the operator provides a norm bound the
/// test is relaxed to the rounding floor `64 eps ||A|| ||x||` if that is larger,
/// which only matters when `b` is small through cancellation. `x0` is an optional starting guess; a zero
/// right-hand side always yields a zero column. `max_iter` bounds the CG
/// iterations per column.
pub fn cg_solve<O: LinearOperator>(
    op: &O,
    rhs: ArrayView2<'_, f64>,
    x0: Option<ArrayView2<'_, f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<Array2<f64>> {
    let n = op.dim();
    if rhs.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: (n, rhs.ncols()),
            found: rhs.dim(),
        });
    }
    if let Some(guess) = &x0 {
        if guess.dim() != rhs.dim() {
            return Err(Error::DimensionMismatch {
                expected: rhs.dim(),
                found: guess.dim(),
            });
        }
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "CG tolerance must be positive, got {tol}"
        )));
    }

    let mut solution = Array2::zeros(rhs.dim());
    let mut x = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];
    for col in 0..rhs.ncols() {
        let b: Vec<f64> = rhs.column(col).to_vec();
        let b_norm = dot(&b, &b).sqrt();
        if b_norm == 0.0 {
            continue;
        }
        match &x0 {
            Some(guess) => x
                .iter_mut()
                .zip(guess.column(col))
                .for_each(|(xi, g)| *xi = *g),
            None => x.fill(0.0),
        }
        let target = tol * b_norm;
        let norm_a = op.norm_bound();
        let accept = |rs: f64, x: &[f64]| {
            let floor = norm_a.map_or(0.0, |a| 64.0 * f64::EPSILON * a * dot(x, x).sqrt());
            rs.sqrt() <= target.max(floor)
        };

        let residual = |x: &[f64], r: &mut [f64], ap: &mut [f64]| {
            op.apply(x, ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
            dot(r, r)
        };
        let mut rs = residual(&x, &mut r, &mut ap);
        p.copy_from_slice(&r);
        let mut iterations = 0;
        loop {
            if accept(rs, &x) {
                // the recursive residual drifts; confirm on the true one
                let true_rs = residual(&x, &mut r, &mut ap);
                if accept(true_rs, &x) {
                    break;
                }
                rs = true_rs;
                p.copy_from_slice(&r);
            }
            if iterations >= max_iter {
                return Err(Error::CgNotConverged {
                    iterations,
                    residual: rs.sqrt() / b_norm,
                });
            }
            op.apply(&p, &mut ap);
            let curvature = dot(&p, &ap);
            if !(curvature > 0.0) {
                return Err(Error::CgNotConverged {
                    iterations,
                    residual: rs.sqrt() / b_norm,
                });
            }
            let alpha = rs / curvature;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rs_next = dot(&r, &r);
            let beta = rs_next / rs;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
            rs = rs_next;
            iterations += 1;
        }
        solution
            .column_mut(col)
            .iter_mut()
            .zip(&x)
            .for_each(|(s, xi)| *s = *xi);
    }
    Ok(solution)
}
