//! End-to-end pipeline (load, kNN, affinities, init, solve, write) and
//! multi-seed campaigns with aggregate reports.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};

use crate::data::{self, DataMatrix, TableFormat};
use crate::error::{Error, Result};
use crate::solver::{self, DescentCheck, SolverConfig, SolverResult, Variant};
use crate::tsne::{build_knn_affinities, AffinityMatrix, ExaggerationSchedule, TsneProblem};

/// Environment variable capping the number of concurrent runs in a campaign.
pub const THREADS_ENV: &str = "DCALIKE_THREADS";

/// Everything needed to reproduce a run or a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub input: PathBuf,
    pub variants: Vec<Variant>,
    pub k: usize,
    pub dims: usize,
    pub mu0: f64,
    pub eta: f64,
    pub delta: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub exaggeration: ExaggerationSchedule,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Record wall-clock times; disable for byte-reproducible outputs.
    pub record_time: bool,
    pub descent_check: DescentCheck,
    /// Run the campaign on a single thread.
    pub serial: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        let solver = SolverConfig::default();
        Self {
            input: PathBuf::new(),
            variants: vec![Variant::DcaLike],
            k: 10,
            dims: 2,
            mu0: solver.mu0,
            eta: solver.eta,
            delta: solver.delta,
            max_iter: solver.max_iter,
            rel_tol: solver.rel_tol,
            exaggeration: ExaggerationSchedule::default(),
            seeds: vec![0],
            out_dir: PathBuf::from("out"),
            record_time: true,
            descent_check: solver.descent_check,
            serial: false,
        }
    }
}

impl RunSpec {
    pub fn solver_config(&self, variant: Variant, seed: u64) -> SolverConfig {
        SolverConfig {
            variant,
            mu0: self.mu0,
            eta: self.eta,
            delta: self.delta,
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            seed,
            descent_check: self.descent_check,
            record_time: self.record_time,
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver_config(Variant::DcaLike, 0).validate()?;
        self.exaggeration.validate()?;
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be positive".into()));
        }
        if self.dims == 0 {
            return Err(Error::InvalidParameter("dims must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one seed is required".into(),
            ));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one variant is required".into(),
            ));
        }
        Ok(())
    }

    pub fn embedding_path(&self, variant: Variant, seed: u64) -> PathBuf {
        self.out_dir.join(format!("{variant}-seed{seed}.emb.csv"))
    }

    pub fn trace_path(&self, variant: Variant, seed: u64) -> PathBuf {
        self.out_dir.join(format!("{variant}-seed{seed}.trace.csv"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Knn,
    Affinities,
    Init,
    Solve,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Knn => "knn",
            Stage::Affinities => "affinities",
            Stage::Init => "init",
            Stage::Solve => "solve",
            Stage::Write => "write",
        })
    }
}

/// A failed pipeline stage.
#[derive(Debug)]
pub struct RunError {
    pub stage: Stage,
    pub variant: Option<Variant>,
    pub seed: Option<u64>,
    pub error: Error,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.stage)?;
        if let Some(v) = self.variant {
            write!(f, " {v}")?;
        }
        if let Some(s) = self.seed {
            write!(f, " seed {s}")?;
        }
        write!(f, ": {}", self.error)
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn tag<T>(stage: Stage, result: Result<T>) -> std::result::Result<T, RunError> {
    result.map_err(|error| RunError {
        stage,
        variant: None,
        seed: None,
        error,
    })
}

/// Data and affinities shared by every run of a campaign.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub n: usize,
    pub affinities: AffinityMatrix,
    pub prep_seconds: f64,
}

/// Loads the input, builds the kNN graph and the affinity matrix.
pub fn prepare(spec: &RunSpec) -> std::result::Result<Prepared, RunError> {
    tag(Stage::Load, spec.validate())?;
    let start = Instant::now();
    let raw = tag(
        Stage::Load,
        data::load_matrix(&spec.input, TableFormat::from_path(&spec.input)),
    )?;
    let data = tag(Stage::Load, DataMatrix::new(raw))?;
    let neighbors = tag(Stage::Knn, data::knn_graph(&data, spec.k))?;
    let affinities = tag(
        Stage::Affinities,
        build_knn_affinities(&neighbors, data.nrows()),
    )?;
    let prep_seconds = if spec.record_time {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    info!(
        "prepared {} points, {} affinity entries in {prep_seconds:.3}s",
        data.nrows(),
        affinities.nnz()
    );
    Ok(Prepared {
        n: data.nrows(),
        affinities,
        prep_seconds,
    })
}

/// A completed run and where its files went.
#[derive(Debug)]
pub struct RunOutcome {
    pub variant: Variant,
    pub seed: u64,
    pub result: SolverResult,
    /// Wall time of the solver loop (last trace timestamp).
    pub solver_seconds: f64,
    /// Preparation plus solver plus output time.
    pub pipeline_seconds: f64,
    pub embedding_path: PathBuf,
    pub trace_path: PathBuf,
}

impl RunOutcome {
    pub fn final_objective(&self) -> f64 {
        self.result.final_objective().unwrap_or(f64::NAN)
    }
}

/// Solves one `(variant, seed)` pair on prepared data and writes its
/// embedding and trace files.
pub fn solve_prepared(
    spec: &RunSpec,
    prepared: &Prepared,
    variant: Variant,
    seed: u64,
) -> std::result::Result<RunOutcome, RunError> {
    let start = Instant::now();
    let fail = |stage, error| RunError {
        stage,
        variant: Some(variant),
        seed: Some(seed),
        error,
    };
    let mut problem = TsneProblem::new(prepared.affinities.clone(), spec.dims, spec.exaggeration)
        .map_err(|e| fail(Stage::Init, e))?;
    let x0 = data::init_embedding(prepared.n, spec.dims, seed);
    let config = spec.solver_config(variant, seed);
    let result = solver::run(&mut problem, &x0, &config).map_err(|e| fail(Stage::Solve, e))?;

    let embedding_path = spec.embedding_path(variant, seed);
    let trace_path = spec.trace_path(variant, seed);
    data::write_trace(&result.trace, &trace_path).map_err(|e| fail(Stage::Write, e))?;
    let result = result.into_result().map_err(|e| fail(Stage::Solve, e))?;
    data::write_embedding(&result.x, &embedding_path).map_err(|e| fail(Stage::Write, e))?;

    let solver_seconds = result.trace.last().map_or(0.0, |r| r.elapsed_sec);
    let pipeline_seconds = if spec.record_time {
        prepared.prep_seconds + start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    info!(
        "{variant} seed {seed}: {} iterations, objective {:.6}, {} ({solver_seconds:.2}s)",
        result.iterations,
        result.final_objective().unwrap_or(f64::NAN),
        result.termination
    );
    Ok(RunOutcome {
        variant,
        seed,
        result,
        solver_seconds,
        pipeline_seconds,
        embedding_path,
        trace_path,
    })
}

/// Full pipeline for one variant and seed.
pub fn run_once(
    spec: &RunSpec,
    variant: Variant,
    seed: u64,
) -> std::result::Result<RunOutcome, RunError> {
    let prepared = prepare(spec)?;
    solve_prepared(spec, &prepared, variant, seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation, zero for a single value.
    pub stddev: f64,
}

impl Stats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        let stddev = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            median,
            stddev,
        })
    }
}

/// Per-variant aggregates over the seeds that completed.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: Variant,
    pub n_seeds: usize,
    pub objective: Option<Stats>,
    pub iterations: Option<Stats>,
    pub solver_time: Option<Stats>,
    pub pipeline_time: Option<Stats>,
}

impl VariantSummary {
    pub fn failed(&self) -> bool {
        self.n_seeds == 0
    }

    fn metrics(&self) -> [(&'static str, Option<Stats>); 4] {
        [
            ("objective", self.objective),
            ("iterations", self.iterations),
            ("solver_time", self.solver_time),
            ("pipeline_time", self.pipeline_time),
        ]
    }
}

#[derive(Debug)]
pub struct BenchReport {
    pub summaries: Vec<VariantSummary>,
    pub runs: Vec<RunOutcome>,
    pub failures: Vec<RunError>,
}

impl BenchReport {
    pub fn from_runs(variants: &[Variant], runs: Vec<RunOutcome>, failures: Vec<RunError>) -> Self {
        let summaries = variants
            .iter()
            .map(|&variant| {
                let done: Vec<&RunOutcome> = runs.iter().filter(|r| r.variant == variant).collect();
                let column = |f: &dyn Fn(&RunOutcome) -> f64| {
                    Stats::from_values(&done.iter().map(|r| f(r)).collect::<Vec<_>>())
                };
                VariantSummary {
                    variant,
                    n_seeds: done.len(),
                    objective: column(&|r| r.final_objective()),
                    iterations: column(&|r| r.result.iterations as f64),
                    solver_time: column(&|r| r.solver_seconds),
                    pipeline_time: column(&|r| r.pipeline_seconds),
                }
            })
            .collect();
        Self {
            summaries,
            runs,
            failures,
        }
    }

    pub fn summary(&self, variant: Variant) -> Option<&VariantSummary> {
        self.summaries.iter().find(|s| s.variant == variant)
    }

    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }

    /// `variant,metric,mean,median,stddev,n_seeds`; failed variants have
    /// empty statistics and `n_seeds = 0`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,metric,mean,median,stddev,n_seeds\n");
        for s in &self.summaries {
            for (metric, stats) in s.metrics() {
                match stats {
                    Some(st) => out.push_str(&format!(
                        "{},{metric},{},{},{},{}\n",
                        s.variant, st.mean, st.median, st.stddev, s.n_seeds
                    )),
                    None => out.push_str(&format!("{},{metric},,,,0\n", s.variant)),
                }
            }
        }
        out
    }

    /// Aligned table with mean objective, iteration count and times.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<10} {:>12} {:>11} {:>12} {:>14} {:>6}\n",
            "Algorithm", "Obj.", "Iteration", "Time (s)", "Pipeline (s)", "Seeds"
        );
        for s in &self.summaries {
            if s.failed() {
                out.push_str(&format!("{:<10} {:>12}\n", s.variant.as_str(), "FAILED"));
                continue;
            }
            let mean = |st: Option<Stats>| st.map_or(f64::NAN, |st| st.mean);
            out.push_str(&format!(
                "{:<10} {:>12.6} {:>11.2} {:>12.3} {:>14.3} {:>6}\n",
                s.variant.as_str(),
                mean(s.objective),
                mean(s.iterations),
                mean(s.solver_time),
                mean(s.pipeline_time),
                s.n_seeds
            ));
        }
        if !self.failures.is_empty() {
            out.push_str("\nFailures:\n");
            for f in &self.failures {
                out.push_str(&format!("  {f}\n"));
            }
        }
        out
    }

    /// Per-run rows, in campaign order.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from(
            "variant,seed,objective,iterations,termination,solver_time,pipeline_time\n",
        );
        for r in &self.runs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.variant,
                r.seed,
                r.final_objective(),
                r.result.iterations,
                r.result.termination,
                r.solver_seconds,
                r.pipeline_seconds
            ));
        }
        out
    }

    /// Writes `report.csv`, `report.txt` and `runs.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("report.csv", self.to_csv()),
            ("report.txt", self.to_text()),
            ("runs.csv", self.runs_csv()),
        ] {
            let path = dir.join(name);
            let mut f = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            f.write_all(body.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn worker_count(spec: &RunSpec, jobs: usize) -> usize {
    if spec.serial {
        return 1;
    }
    let available = std::thread::available_parallelism().map_or(1, usize::from);
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(available);
    cap.min(jobs).max(1)
}

/// Runs every variant for every seed on shared prepared data. Runs are
/// independent; failures are collected and do not stop the campaign.
pub fn bench(spec: &RunSpec) -> std::result::Result<BenchReport, RunError> {
    let prepared = prepare(spec)?;
    let jobs: Vec<(Variant, u64)> = spec
        .variants
        .iter()
        .flat_map(|&v| spec.seeds.iter().map(move |&s| (v, s)))
        .collect();

    let slots: Vec<Mutex<Option<std::result::Result<RunOutcome, RunError>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..worker_count(spec, jobs.len()) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(variant, seed)) = jobs.get(idx) else {
                    break;
                };
                let outcome = solve_prepared(spec, &prepared, variant, seed);
                if let Err(err) = &outcome {
                    warn!("{err}");
                }
                *slots[idx].lock().expect("slot lock") = Some(outcome);
            });
        }
    });

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for slot in slots {
        match slot
            .into_inner()
            .expect("slot lock")
            .expect("every job ran")
        {
            Ok(run) => runs.push(run),
            Err(err) => failures.push(err),
        }
    }
    let report = BenchReport::from_runs(&spec.variants, runs, failures);
    tag(Stage::Write, report.write(&spec.out_dir))?;
    Ok(report)
}
