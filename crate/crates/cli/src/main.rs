use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dcalike::bench::{self, RunSpec};
use dcalike::solver::{DescentCheck, Variant};
use dcalike::tsne::ExaggerationSchedule;
use dcalike::{check, data};

/// DCA, DCA-Like and accelerated DCA-Like for exact t-SNE.
#[derive(Parser, Debug)]
#[command(name = "dcalike", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Embed a dataset with one variant, one run per seed.
    Run(RunArgs),
    /// Run every requested variant for every seed and write an aggregate report.
    Bench(BenchArgs),
    /// Run the derivative, linear-algebra and solver self-checks.
    Check {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write a synthetic Gaussian-cluster dataset as CSV.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 10)]
        clusters: usize,
        #[arg(long, default_value_t = 4.0)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Input matrix, CSV (or TSV for .tsv/.tab files), one point per row.
    #[arg(long)]
    input: PathBuf,
    /// Neighbors per point for the binary affinities.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(long, default_value_t = 1e-6)]
    mu0: f64,
    #[arg(long, default_value_t = 2.0)]
    eta: f64,
    #[arg(long, default_value_t = 0.8)]
    delta: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    rel_tol: f64,
    /// Early exaggeration factor.
    #[arg(long, default_value_t = 4.0)]
    exaggeration: f64,
    /// Number of initial iterations with exaggerated affinities.
    #[arg(long, default_value_t = 20)]
    exaggeration_iters: usize,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Write zero timings so outputs are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
    /// Abort a run on any sufficient-descent violation instead of warning.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "dca-like")]
    variant: Variant,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated variants.
    #[arg(
        long = "variant",
        value_delimiter = ',',
        default_value = "dca,dca-like,adca-like"
    )]
    variants: Vec<Variant>,
    /// Run one job at a time for clean timings.
    #[arg(long)]
    serial: bool,
}

impl Common {
    fn spec(self, variants: Vec<Variant>, serial: bool) -> RunSpec {
        RunSpec {
            input: self.input,
            variants,
            k: self.k,
            dims: self.dims,
            mu0: self.mu0,
            eta: self.eta,
            delta: self.delta,
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            exaggeration: ExaggerationSchedule {
                factor: self.exaggeration,
                duration: self.exaggeration_iters,
            },
            seeds: self.seeds,
            out_dir: self.out,
            record_time: !self.no_timing,
            descent_check: if self.strict {
                DescentCheck::Strict
            } else {
                DescentCheck::Warn
            },
            serial,
        }
    }
}

fn run(args: RunArgs) -> Result<bool> {
    let spec = args.common.spec(vec![args.variant], true);
    let prepared = bench::prepare(&spec)?;
    let mut all_ok = true;
    for &seed in &spec.seeds {
        match bench::solve_prepared(&spec, &prepared, args.variant, seed) {
            Ok(outcome) => println!(
                "{} seed {}: {} iterations ({}), objective {:.8}, {:.3}s -> {}",
                outcome.variant,
                seed,
                outcome.result.iterations,
                outcome.result.termination,
                outcome.final_objective(),
                outcome.solver_seconds,
                outcome.embedding_path.display()
            ),
            Err(err) => {
                eprintln!("{err}");
                all_ok = false;
            }
        }
    }
    Ok(all_ok)
}

fn bench_cmd(args: BenchArgs) -> Result<bool> {
    let spec = args.common.spec(args.variants, args.serial);
    let report = bench::bench(&spec)?;
    print!("{}", report.to_text());
    println!(
        "report written to {}",
        spec.out_dir.join("report.csv").display()
    );
    Ok(report.all_succeeded())
}

fn check_cmd(seed: u64) -> bool {
    let outcomes = check::run_all(seed);
    for o in &outcomes {
        println!(
            "{} {:<28} {:>7.2}s  {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.seconds,
            o.detail
        );
    }
    outcomes.iter().all(|o| o.passed)
}

fn synth(
    out: PathBuf,
    n: usize,
    dim: usize,
    clusters: usize,
    spread: f64,
    seed: u64,
) -> Result<()> {
    if n < 2 || dim == 0 {
        bail!("need n >= 2 and dim >= 1");
    }
    let data = data::synthetic_clusters(n, dim, clusters, spread, seed)?;
    data::write_embedding(&data.into_inner(), &out)
        .with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {n} x {dim} matrix to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Bench(args) => bench_cmd(args),
        Command::Check { seed } => Ok(check_cmd(seed)),
        Command::Synth {
            out,
            n,
            dim,
            clusters,
            spread,
            seed,
        } => synth(out, n, dim, clusters, spread, seed).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
