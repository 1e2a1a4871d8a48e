//! Self-checks on synthetic instances: derivative, linear-algebra and
//! affinity oracles plus short solver runs. Backs the `check` CLI command.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{self, DataMatrix, NeighborList};
use crate::linalg::{cg_solve, laplacian, SparseSym};
use crate::problem::DcProblem;
use crate::solver::{self, DescentCheck, SolverConfig, Variant};
use crate::tsne::{self, build_knn_affinities, AffinityMatrix, ExaggerationSchedule, TsneProblem};
use crate::Embedding;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn gaussian(rng: &mut ChaCha8Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || scale * rng.sample::<f64, _>(StandardNormal))
}

fn random_knn_affinities(rng: &mut ChaCha8Rng, n: usize, k: usize) -> AffinityMatrix {
    let data = DataMatrix::new(gaussian(rng, (n, 3), 1.0)).expect("finite data");
    let nl = data::knn_graph(&data, k).expect("k < n");
    build_knn_affinities(&nl, n).expect("valid neighbors")
}

fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    diff / scale
}

fn central_difference(f: impl Fn(&Embedding) -> f64, x: &Embedding, h: f64) -> Embedding {
    let mut grad = Array2::zeros(x.dim());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (i, d) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[i, d]];
        probe[[i, d]] = orig + h;
        let up = f(&probe);
        probe[[i, d]] = orig - h;
        let down = f(&probe);
        probe[[i, d]] = orig;
        grad[[i, d]] = (up - down) / (2.0 * h);
    }
    grad
}

/// Maximum relative error of `grad f` and of the full gradient against
/// central differences over `instances` random `n = 8, s = 2` problems.
pub fn gradient_errors(instances: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_f, mut worst_full) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let p = random_knn_affinities(&mut rng, 8, 3);
        let x = gaussian(&mut rng, (8, 2), 1.0);
        let entropy = p.entropy_term();
        let f = |y: &Embedding| entropy + tsne::kernel_sum(y).ln();
        let fd = central_difference(f, &x, 1e-5);
        worst_f = worst_f.max(rel_err(&tsne::grad_f(&x).expect("n >= 2"), &fd));
        let fd_full = central_difference(|y| tsne::objective(y, &p), &x, 1e-5);
        worst_full = worst_full.max(rel_err(
            &tsne::full_gradient(&x, &p).expect("n >= 2"),
            &fd_full,
        ));
    }
    (worst_f, worst_full)
}

fn dense_solve(a: &Array2<f64>, b: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
    let lu = m.lu();
    let mut out = Array2::zeros(b.dim());
    for c in 0..b.ncols() {
        let rhs = DVector::from_iterator(n, b.column(c).iter().copied());
        let sol = lu.solve(&rhs)?;
        for i in 0..n {
            out[[i, c]] = sol[i];
        }
    }
    Some(out)
}

/// Worst relative error of CG against LU on random shifted Laplacians.
pub fn cg_dense_error(instances: usize, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let mut trip = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random_bool(0.2) {
                    let w: f64 = rng.random_range(0.0..1.0);
                    trip.push((i, j, w));
                    trip.push((j, i, w));
                }
            }
        }
        let lap = laplacian(SparseSym::from_triplets(n, trip).expect("valid triplets"));
        let mu = rng.random_range(0.05..2.0);
        let op = lap.shifted(2.0, mu);
        let b = gaussian(&mut rng, (n, 2), 1.0);
        let x = cg_solve(&op, b.view(), None, 1e-12, 10 * n).expect("SPD system");
        let reference = dense_solve(&op.to_dense(), &b).expect("non-singular");
        worst = worst.max(rel_err(&x, &reference));
    }
    worst
}

fn run_check(name: &'static str, body: impl FnOnce() -> (bool, String)) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = body();
    CheckOutcome {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs every self-check. Deterministic for a fixed `seed`.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();

    out.push(run_check("gradient-finite-differences", || {
        let (f, full) = gradient_errors(20, seed);
        (
            f <= 1e-5 && full <= 1e-5,
            format!("grad f rel err {f:.2e}, full gradient rel err {full:.2e}"),
        )
    }));

    out.push(run_check("affinity-invariants", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5);
        let mut worst = 0.0f64;
        let mut ok = true;
        for _ in 0..50 {
            let n = rng.random_range(5..60);
            let k = rng.random_range(1..n.min(12));
            let p = random_knn_affinities(&mut rng, n, k);
            worst = worst.max((p.total_mass() - 1.0).abs());
            ok &= p
                .iter()
                .all(|(i, j, v)| v >= 0.0 && i != j && p.get(j, i) == v);
        }
        (
            ok && worst <= 1e-12,
            format!("max |mass - 1| = {worst:.2e}"),
        )
    }));

    out.push(run_check("knn-sort-oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a);
        let data = DataMatrix::new(gaussian(&mut rng, (200, 5), 1.0)).expect("finite data");
        let nl = data::knn_graph(&data, 10).expect("k < n");
        let lists: Vec<Vec<usize>> = (0..200)
            .map(|i| {
                let mut all: Vec<(f64, usize)> = (0..200)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let d: f64 = data
                            .row(i)
                            .iter()
                            .zip(data.row(j))
                            .map(|(a, b)| (a - b).powi(2))
                            .sum();
                        (d, j)
                    })
                    .collect();
                all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                all[..10].iter().map(|p| p.1).collect()
            })
            .collect();
        let oracle = NeighborList::new(lists).expect("valid lists");
        (nl == oracle, "n = 200, d = 5, k = 10".to_string())
    }));

    out.push(run_check("cg-dense-oracle", || {
        let err = cg_dense_error(10, 30, seed);
        (err <= 1e-8, format!("max rel err {err:.2e}"))
    }));

    out.push(run_check("mm-equivalence", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
        let mut ok = true;
        for _ in 0..20 {
            let p = random_knn_affinities(&mut rng, 20, 4);
            let v = gaussian(&mut rng, (20, 2), 1.0);
            let mu = rng.random_range(0.01..5.0);
            ok &= tsne::mm_equivalence_check(&v, &p, mu);
        }
        (ok, "20 random n = 20 instances".to_string())
    }));

    out.push(run_check("kl-properties", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x33);
        let two = build_knn_affinities(
            &NeighborList::new(vec![vec![1], vec![0]]).expect("valid"),
            2,
        )
        .expect("valid");
        let mut ok = tsne::objective(&gaussian(&mut rng, (2, 2), 3.0), &two).abs() <= 1e-12;
        let mut worst_shift = 0.0f64;
        for _ in 0..20 {
            let p = random_knn_affinities(&mut rng, 15, 3);
            let x = gaussian(&mut rng, (15, 2), 2.0);
            let f = tsne::objective(&x, &p);
            ok &= f >= -1e-12;
            let shifted = &x + &gaussian(&mut rng, (1, 2), 10.0);
            worst_shift = worst_shift.max((tsne::objective(&shifted, &p) - f).abs());
        }
        (
            ok && worst_shift <= 1e-10,
            format!("max translation change {worst_shift:.2e}"),
        )
    }));

    out.push(run_check("solver-monotone-descent", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x99);
        let data = data::synthetic_clusters(150, 8, 4, 6.0, rng.random()).expect("valid sizes");
        let nl = data::knn_graph(&data, 10).expect("k < n");
        let p = build_knn_affinities(&nl, 150).expect("valid neighbors");
        let x0 = data::init_embedding(150, 2, seed);
        let bound = tsne::lipschitz_bound(150, 2);
        let mut details = Vec::new();
        let mut ok = true;
        for variant in Variant::ALL {
            let mut problem =
                TsneProblem::new(p.clone(), 2, ExaggerationSchedule::default()).expect("valid");
            let config = SolverConfig {
                variant,
                max_iter: 150,
                rel_tol: 1e-6,
                descent_check: DescentCheck::Warn,
                ..SolverConfig::default()
            };
            match solver::run(&mut problem, &x0, &config) {
                Ok(res) => {
                    let max_mu = res.trace.max_mu();
                    ok &= res.error.is_none()
                        && res.trace.is_monotone()
                        && res.descent_violations == 0
                        && max_mu <= config.eta * bound;
                    details.push(format!(
                        "{variant}: {} it, max mu {max_mu:.2e}",
                        res.iterations
                    ));
                }
                Err(e) => {
                    ok = false;
                    details.push(format!("{variant}: {e}"));
                }
            }
            debug_assert_eq!(problem.shape(), (150, 2));
        }
        (ok, details.join("; "))
    }));

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for outcome in run_all(1) {
            assert!(outcome.passed, "{}: {}", outcome.name, outcome.detail);
        }
    }
}
