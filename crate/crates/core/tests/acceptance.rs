//! Acceptance suite. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line even when an earlier one fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use dcalike::bench::{self, RunSpec};
use dcalike::data::{self, DataMatrix, NeighborList};
use dcalike::linalg::{cg_solve, laplacian, LinearOperator, SparseSym};
use dcalike::solver::{self, DescentCheck, IterationTrace, SolverConfig, Variant};
use dcalike::tsne::{
    self, build_knn_affinities, AffinityMatrix, ExaggerationSchedule, TsneProblem,
};
use dcalike::Embedding;
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// A finished t-SNE run kept for the cross-run criteria (monotonicity and
/// the mu ceiling).
struct TracedRun {
    label: String,
    n: usize,
    s: usize,
    eta: f64,
    trace: IterationTrace,
}

fn gaussian(rng: &mut ChaCha8Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || scale * rng.sample::<f64, _>(StandardNormal))
}

fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn rel_err(a: &Array2<f64>, reference: &Array2<f64>) -> f64 {
    frob(&(a - reference)) / frob(reference).max(1e-300)
}

fn knn_p(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> AffinityMatrix {
    let data = DataMatrix::new(gaussian(rng, (n, d), 1.0)).unwrap();
    build_knn_affinities(&data::knn_graph(&data, k).unwrap(), n).unwrap()
}

// Dense oracles, written directly from the definitions.

fn sq_dist(x: &Array2<f64>, i: usize, j: usize) -> f64 {
    x.row(i)
        .iter()
        .zip(x.row(j))
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// `log Z` with `Z = sum_{i != j} (1 + d_ij^2)^-1`.
fn oracle_log_z(x: &Array2<f64>) -> f64 {
    let n = x.nrows();
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += 1.0 / (1.0 + sq_dist(x, i, j));
            }
        }
    }
    z.ln()
}

fn oracle_entropy(p: &Array2<f64>) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum()
}

/// `KL(P || Q)` summed over `p_ij > 0`.
fn oracle_kl(x: &Array2<f64>, p: &Array2<f64>) -> f64 {
    let log_z = oracle_log_z(x);
    let mut kl = 0.0;
    for ((i, j), &pij) in p.indexed_iter() {
        if pij > 0.0 {
            let log_q = -(1.0 + sq_dist(x, i, j)).ln() - log_z;
            kl += pij * (pij.ln() - log_q);
        }
    }
    kl
}

fn central_difference(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
    let h = 1e-5;
    let mut probe = x.clone();
    let mut g = Array2::zeros(x.dim());
    for i in 0..x.nrows() {
        for d in 0..x.ncols() {
            let orig = probe[[i, d]];
            probe[[i, d]] = orig + h;
            let up = f(&probe);
            probe[[i, d]] = orig - h;
            let down = f(&probe);
            probe[[i, d]] = orig;
            g[[i, d]] = (up - down) / (2.0 * h);
        }
    }
    g
}

fn lu_solve(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let lu = DMatrix::from_fn(n, n, |i, j| a[[i, j]]).lu();
    let mut out = Array2::zeros(b.dim());
    for c in 0..b.ncols() {
        let sol = lu
            .solve(&DVector::from_iterator(n, b.column(c).iter().copied()))
            .expect("non-singular");
        for i in 0..n {
            out[[i, c]] = sol[i];
        }
    }
    out
}

/// `scale * (D - W) + shift * I` with `D` the row sums of `w`.
fn dense_shifted_laplacian(w: &Array2<f64>, scale: f64, shift: f64) -> Array2<f64> {
    let n = w.nrows();
    let mut a = -w * scale;
    for i in 0..n {
        a[[i, i]] += scale * w.row(i).sum() + shift;
    }
    a
}

fn tsne_run(
    label: &str,
    p: &AffinityMatrix,
    x0: &Embedding,
    variant: Variant,
    max_iter: usize,
) -> (solver::SolverResult, TracedRun) {
    let mut problem =
        TsneProblem::new(p.clone(), x0.ncols(), ExaggerationSchedule::default()).unwrap();
    let config = SolverConfig {
        variant,
        max_iter,
        descent_check: DescentCheck::Warn,
        record_time: false,
        ..SolverConfig::default()
    };
    let result = solver::run(&mut problem, x0, &config).unwrap();
    let traced = TracedRun {
        label: format!("{label} {variant}"),
        n: x0.nrows(),
        s: x0.ncols(),
        eta: config.eta,
        trace: result.trace.clone(),
    };
    (result, traced)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_f, mut worst_full) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let p = knn_p(&mut rng, 8, 3, 3);
        let pd = p.as_sparse().to_dense();
        let x = gaussian(&mut rng, (8, 2), 1.0);
        let entropy = oracle_entropy(&pd);
        let fd_f = central_difference(|y| entropy + oracle_log_z(y), &x);
        worst_f = worst_f.max(rel_err(&tsne::grad_f(&x).unwrap(), &fd_f));
        let fd_full = central_difference(|y| oracle_kl(y, &pd), &x);
        worst_full = worst_full.max(rel_err(&tsne::full_gradient(&x, &p).unwrap(), &fd_full));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_f <= 1e-5 && worst_full <= 1e-5 && secs < 10.0,
        format!("max rel err grad f {worst_f:.2e}, full {worst_full:.2e} (<= 1e-5), {secs:.2}s"),
    )
}

fn criterion_2(runs: &mut Vec<TracedRun>) -> Outcome {
    let n = 1000;
    let data = data::synthetic_clusters(n, 16, 10, 1.0, 3).unwrap();
    let p = build_knn_affinities(&data::knn_graph(&data, 10).unwrap(), n).unwrap();
    let pd = p.as_sparse().to_dense();
    let x0 = data::init_embedding(n, 2, 3);
    let mut ok = true;
    let mut parts = Vec::new();
    for variant in [Variant::DcaLike, Variant::AdcaLike] {
        let (result, traced) = tsne_run("descent n=1000", &p, &x0, variant, 500);
        let violations = result
            .trace
            .records
            .iter()
            .filter(|r| {
                let required = 0.5 * r.mu * r.reference_step_norm.powi(2)
                    - 1e-10 * (1.0 + r.start_objective.abs());
                let satisfied = r.start_objective - r.objective >= required;
                !satisfied
            })
            .count();
        // The recorded final objective must be the true KL of the returned embedding.
        let recorded = result.final_objective().unwrap();
        let recomputed = oracle_kl(&result.x, &pd);
        let consistent = (recorded - recomputed).abs() <= 1e-9 * (1.0 + recomputed.abs());
        ok &= result.error.is_none()
            && violations == 0
            && result.descent_violations == 0
            && consistent;
        parts.push(format!(
            "{variant}: {} it ({}), {violations} violations, F {recorded:.6} vs oracle {recomputed:.6}",
            result.iterations, result.termination
        ));
        runs.push(traced);
    }
    outcome(ok, parts.join("; "))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut worst_rel, mut worst_grad) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let n = 20;
        let p = knn_p(&mut rng, n, 3, 4);
        let pd = p.as_sparse().to_dense();
        let v = gaussian(&mut rng, (n, 2), 1.0);
        let mu = rng.random_range(0.01..5.0);

        let grad = tsne::grad_f(&v).unwrap();
        let xi = tsne::compute_xi(&v, &p);
        let x =
            tsne::subproblem_solve(&v, &grad, &xi, &p, mu, tsne::DEFAULT_CG_TOL, 10 * n).unwrap();

        // Independent system matrix: W_ij = (p_ij + p_ji) / (1 + d_ij^2).
        let mut w = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    w[[i, j]] = (pd[[i, j]] + pd[[j, i]]) / (1.0 + sq_dist(&v, i, j));
                }
            }
        }
        let rhs = &v * mu - &grad;
        let reference = lu_solve(&dense_shifted_laplacian(&w, 2.0, mu), &rhs);
        worst_rel = worst_rel.max(rel_err(&x, &reference));

        // Surrogate gradient: grad f(v) + mu (x - v) + 2 sum_j W_ij (x_i - x_j).
        let mut g = &grad + &((&x - &v) * mu);
        for i in 0..n {
            for j in 0..n {
                for d in 0..2 {
                    g[[i, d]] += 2.0 * w[[i, j]] * (x[[i, d]] - x[[j, d]]);
                }
            }
        }
        worst_grad = worst_grad.max(frob(&g));
    }
    outcome(
        worst_rel <= 1e-8 && worst_grad <= 1e-8,
        format!("max rel err vs LU {worst_rel:.2e}, max surrogate gradient norm {worst_grad:.2e} (both <= 1e-8)"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut ok = true;
    let mut worst_mass = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(5..80);
        let k = rng.random_range(1..n.min(15));
        let data = DataMatrix::new(gaussian(&mut rng, (n, 4), 1.0)).unwrap();
        let nl = data::knn_graph(&data, k).unwrap();
        let p = build_knn_affinities(&nl, n).unwrap();
        let pd = p.as_sparse().to_dense();
        worst_mass = worst_mass.max((pd.sum() - 1.0).abs());
        // Expected pattern: symmetric OR of the neighbor relation, equal weights.
        let mut pattern = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for &j in nl.neighbors(i) {
                pattern[[i, j]] = 1.0;
                pattern[[j, i]] = 1.0;
            }
        }
        let expected = &pattern / pattern.sum();
        ok &= pd == pd.t() && pd.iter().all(|&v| v >= 0.0) && (0..n).all(|i| pd[[i, i]] == 0.0);
        ok &= (&pd - &expected).iter().all(|v| v.abs() <= 1e-15);
    }

    // Sort oracle, including exact ties from integer coordinates.
    let mut knn_ok = true;
    for (n, d, k, integer) in [
        (500, 5, 10, false),
        (500, 3, 15, true),
        (37, 2, 36, true),
        (200, 8, 1, false),
    ] {
        let raw = if integer {
            Array2::from_shape_simple_fn((n, d), || rng.random_range(0..4) as f64)
        } else {
            gaussian(&mut rng, (n, d), 1.0)
        };
        let data = DataMatrix::new(raw.clone()).unwrap();
        let got = data::knn_graph(&data, k).unwrap();
        for i in 0..n {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(&raw, i, j), j))
                .collect();
            others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let expected: Vec<usize> = others[..k].iter().map(|t| t.1).collect();
            knn_ok &= got.neighbors(i) == expected.as_slice();
        }
    }
    outcome(
        ok && knn_ok && worst_mass <= 1e-12,
        format!(
            "50 graphs, max |sum P - 1| {worst_mass:.2e}; kNN vs sort oracle {}",
            if knn_ok { "exact" } else { "MISMATCH" }
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let pair =
        build_knn_affinities(&NeighborList::new(vec![vec![1], vec![0]]).unwrap(), 2).unwrap();
    let pair_ok = pair.get(0, 1) == 0.5 && pair.get(1, 0) == 0.5;
    let mut worst_pair = 0.0f64;
    for scale in [1e-6, 1e-2, 1.0, 10.0, 1e4] {
        worst_pair =
            worst_pair.max(tsne::objective(&gaussian(&mut rng, (2, 2), scale), &pair).abs());
    }
    let mut min_obj = f64::INFINITY;
    let mut worst_shift = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for trial in 0..60 {
        let n = rng.random_range(3..40);
        let k = rng.random_range(1..n.min(6));
        let p = knn_p(&mut rng, n, 3, k);
        let scale = [1e-4, 1.0, 30.0][trial % 3];
        let x = gaussian(&mut rng, (n, 2), scale);
        let f = tsne::objective(&x, &p);
        min_obj = min_obj.min(f);
        worst_oracle = worst_oracle.max((f - oracle_kl(&x, &p.as_sparse().to_dense())).abs());
        let shift = gaussian(&mut rng, (1, 2), 50.0);
        worst_shift = worst_shift.max((tsne::objective(&(&x + &shift), &p) - f).abs());
    }
    outcome(
        pair_ok && worst_pair <= 1e-12 && min_obj >= -1e-12 && worst_shift <= 1e-10 && worst_oracle <= 1e-10,
        format!(
            "min objective {min_obj:.3e}, n=2 |F| {worst_pair:.1e}, translation change {worst_shift:.1e}, vs dense KL {worst_oracle:.1e}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let n = 30;
    let mut worst_cg = 0.0f64;
    let mut worst_row = 0.0f64;
    for _ in 0..20 {
        let mut w = Array2::<f64>::zeros((n, n));
        let mut trip = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random_bool(0.25) {
                    let v = rng.random_range(0.0..3.0);
                    w[[i, j]] = v;
                    w[[j, i]] = v;
                    trip.push((i, j, v));
                    trip.push((j, i, v));
                }
            }
        }
        let lap = laplacian(SparseSym::from_triplets(n, trip).unwrap());
        for row in lap.to_dense().rows() {
            worst_row = worst_row.max(row.sum().abs());
        }
        let ones = vec![1.0; n];
        let mut y = vec![0.0; n];
        lap.apply(&ones, &mut y);
        worst_row = worst_row.max(y.iter().fold(0.0f64, |m, v| m.max(v.abs())));

        let mu = rng.random_range(1e-3..2.0);
        let b = gaussian(&mut rng, (n, 2), 1.0);
        let x = cg_solve(&lap.shifted(2.0, mu), b.view(), None, 1e-12, 10 * n).unwrap();
        worst_cg = worst_cg.max(rel_err(
            &x,
            &lu_solve(&dense_shifted_laplacian(&w, 2.0, mu), &b),
        ));
    }
    outcome(
        worst_cg <= 1e-8 && worst_row <= 1e-12,
        format!("max CG rel err vs LU {worst_cg:.2e} (<= 1e-8), max Laplacian row sum {worst_row:.1e} (<= 1e-12)"),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn criterion_9(dir: &Path, runs: &mut Vec<TracedRun>) -> Outcome {
    let start = Instant::now();
    let input = dir.join("clusters2000.csv");
    let data = data::synthetic_clusters(2000, 16, 10, 1.0, 0).unwrap();
    data::write_embedding(&data.into_inner(), &input).unwrap();
    let spec = RunSpec {
        input,
        variants: Variant::ALL.to_vec(),
        seeds: vec![1, 2, 3, 4, 5],
        out_dir: dir.join("bench"),
        descent_check: DescentCheck::Warn,
        serial: true,
        ..RunSpec::default()
    };
    let report = match bench::bench(&spec) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("campaign failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let mut iters = Vec::new();
    let mut objs = Vec::new();
    for variant in Variant::ALL {
        let mine: Vec<_> = report
            .runs
            .iter()
            .filter(|r| r.variant == variant)
            .collect();
        iters.push(median(
            mine.iter().map(|r| r.result.iterations as f64).collect(),
        ));
        objs.push(median(mine.iter().map(|r| r.final_objective()).collect()));
        for r in &mine {
            runs.push(TracedRun {
                label: format!("n=2000 {variant} seed {}", r.seed),
                n: 2000,
                s: 2,
                eta: spec.eta,
                trace: r.result.trace.clone(),
            });
        }
    }
    let (dca, like, adca) = (0, 1, 2);
    let ok = report.all_succeeded()
        && report.runs.len() == 15
        && iters[adca] <= iters[like]
        && iters[like] <= iters[dca]
        && objs[adca] <= objs[dca] + 0.02
        && secs < 1800.0;
    outcome(
        ok,
        format!(
            "median iterations DCA {} / DCA-Like {} / ADCA-Like {}; median KL DCA {:.6} / DCA-Like {:.6} / ADCA-Like {:.6}; {secs:.0}s",
            iters[dca], iters[like], iters[adca], objs[dca], objs[like], objs[adca]
        ),
    )
}

fn criterion_10(dir: &Path) -> Outcome {
    let input = dir.join("clusters300.csv");
    let data = data::synthetic_clusters(300, 8, 5, 1.0, 11).unwrap();
    data::write_embedding(&data.into_inner(), &input).unwrap();
    let mut identical = true;
    let mut compared = 0;
    for variant in Variant::ALL {
        let mut bytes = Vec::new();
        for rep in 0..2 {
            let spec = RunSpec {
                input: input.clone(),
                variants: vec![variant],
                max_iter: 300,
                seeds: vec![42],
                out_dir: dir.join(format!("det{rep}")),
                record_time: false,
                ..RunSpec::default()
            };
            let out = bench::run_once(&spec, variant, 42).unwrap();
            bytes.push((
                std::fs::read(&out.trace_path).unwrap(),
                std::fs::read(&out.embedding_path).unwrap(),
            ));
        }
        identical &= bytes[0] == bytes[1] && !bytes[0].0.is_empty();
        compared += 1;
    }
    outcome(
        identical,
        format!("{compared} variants, traces and embeddings byte-identical across two executions"),
    )
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut runs = Vec::new();
    let mut results: Vec<(usize, Outcome)> = Vec::new();

    results.push((1, criterion_1()));
    results.push((2, criterion_2(&mut runs)));

    // Small runs of every driver, including the fixed-mu baseline.
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for (n, s) in [(60, 2), (120, 3)] {
        let p = knn_p(&mut rng, n, 5, 7);
        let x0 = data::init_embedding(n, s, n as u64);
        for variant in Variant::ALL {
            runs.push(tsne_run(&format!("n={n} s={s}"), &p, &x0, variant, 400).1);
        }
    }

    results.push((4, criterion_4()));
    results.push((6, criterion_6()));
    results.push((7, criterion_7()));
    results.push((8, criterion_8()));
    results.push((9, criterion_9(dir.path(), &mut runs)));
    results.push((10, criterion_10(dir.path())));

    let non_monotone: Vec<&str> = runs
        .iter()
        .filter(|r| !r.trace.is_monotone())
        .map(|r| r.label.as_str())
        .collect();
    results.push((
        3,
        outcome(
            non_monotone.is_empty(),
            format!(
                "{} runs checked per exaggeration segment; non-monotone: {non_monotone:?}",
                runs.len()
            ),
        ),
    ));

    let mut ceiling_ok = true;
    let mut worst_ratio = 0.0f64;
    for r in &runs {
        let bound = tsne::lipschitz_bound(r.n, r.s);
        let max_mu = r.trace.max_mu();
        ceiling_ok &= max_mu <= r.eta * bound;
        worst_ratio = worst_ratio.max(max_mu / bound);
    }
    // "Orders of magnitude below" taken as at least a factor 100.
    results.push((
        5,
        outcome(
            ceiling_ok && worst_ratio <= 1e-2,
            format!("max mu / 6n sqrt(s) = {worst_ratio:.2e} over {} runs (ceiling eta, typical <= 1e-2)", runs.len()),
        ),
    ));

    results.sort_by_key(|r| r.0);
    let mut all = true;
    for (id, o) in &results {
        println!(
            "criterion {id:>2}: {} {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        all &= o.passed;
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
