//! Benchmark and single-run driver for the splitting solvers.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags or invalid
//! configuration), 2 on runtime errors (I/O, solver failures).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use drsplit::bench::{
    emit_results, render_table, run_benchmark, write_csv, BenchConfig, OutputFormat,
};
use drsplit::feasibility::{solve_feasibility, FeasibilityProblem, MethodKind};
use drsplit::instances::{gen_sparse_instance, SparseInstance, ThreePointProblem};
use drsplit::sets::{AffineSet, FinitePointSet, SparseBoxSet};
use drsplit::solver::{gamma_threshold, GammaPolicy, SolveReport, SolverOptions};

#[derive(Parser)]
#[command(
    name = "drsplit",
    about = "Douglas-Rachford splitting benchmarks for sparse feasibility problems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep (m, n, method) cells over seeded random instances and report
    /// aggregated statistics.
    Bench(BenchArgs),
    /// Solve one instance and print its report.
    Single(SingleArgs),
}

#[derive(Args)]
struct BenchArgs {
    /// Row counts, comma separated.
    #[arg(long = "m", value_delimiter = ',', default_value = "20,40,60")]
    m_list: Vec<usize>,
    /// Column counts, comma separated.
    #[arg(long = "n", value_delimiter = ',', default_value = "400")]
    n_list: Vec<usize>,
    /// Trials per cell.
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Base seed; per-trial seeds are derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Methods to run: dr, altproj, classical.
    #[arg(long = "method", value_delimiter = ',', default_value = "dr,altproj,classical")]
    methods: Vec<String>,
    #[command(flatten)]
    gamma: GammaArgs,
    /// Relative step tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long = "max-iters", default_value_t = 20_000)]
    max_iters: usize,
    /// Final objective below this counts as success.
    #[arg(long = "succ-thresh", default_value_t = 1e-12)]
    succ_thresh: f64,
    /// Final objective above this counts as failure.
    #[arg(long = "fail-thresh", default_value_t = 1e-6)]
    fail_thresh: f64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format.
    #[arg(long, default_value = "table")]
    format: String,
    /// Worker threads (0 = default).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args)]
struct SingleArgs {
    /// Rows of the generated instance.
    #[arg(long = "m")]
    m: Option<usize>,
    /// Columns of the generated instance.
    #[arg(long = "n")]
    n: Option<usize>,
    /// Instance seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Load the instance from a container file instead of generating it.
    #[arg(long, conflicts_with_all = ["m", "n", "example1"])]
    instance: Option<PathBuf>,
    /// Run the analytic hyperplane/three-point example.
    #[arg(long, conflicts_with_all = ["m", "n"])]
    example1: bool,
    /// Offset parameter of the three-point example.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Method: dr, altproj or classical.
    #[arg(long, default_value = "dr")]
    method: String,
    #[command(flatten)]
    gamma: GammaArgs,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long = "max-iters", default_value_t = 20_000)]
    max_iters: usize,
    /// Write a per-iteration trace CSV to this path.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct GammaArgs {
    /// Step size; in adaptive mode this is the starting value.
    #[arg(long)]
    gamma: Option<f64>,
    /// Shrinking step-size schedule (default).
    #[arg(long, conflicts_with = "fixed")]
    adaptive: bool,
    /// Constant step size.
    #[arg(long)]
    fixed: bool,
}

enum AppError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for AppError {
    fn from(e: E) -> Self {
        AppError::Runtime(e.into())
    }
}

fn usage(msg: impl Into<String>) -> AppError {
    AppError::Usage(msg.into())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successful exits.
            if e.use_stderr() {
                let _ = e.print();
                std::process::exit(1);
            }
            let _ = e.print();
            std::process::exit(0);
        }
    };
    let result = match cli.command {
        Command::Bench(args) => run_bench(args),
        Command::Single(args) => run_single(args),
    };
    match result {
        Ok(()) => {}
        Err(AppError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
        Err(AppError::Runtime(e)) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}

impl GammaArgs {
    /// Resolves the step-size policy. `default_fixed_gamma` is used by the
    /// analytic example, which is documented for a fixed small step.
    fn policy(&self, default_fixed_gamma: Option<f64>) -> Result<GammaPolicy, AppError> {
        let gamma0 = gamma_threshold(1.0, 0.0).expect("valid constants");
        if let Some(g) = self.gamma {
            if g.is_nan() || g <= 0.0 {
                return Err(usage(format!("--gamma {g} must be positive")));
            }
        }
        let fixed = self.fixed || (default_fixed_gamma.is_some() && !self.adaptive);
        if fixed {
            let g = self
                .gamma
                .or(default_fixed_gamma)
                .unwrap_or(0.9 * gamma0);
            Ok(GammaPolicy::fixed(g))
        } else {
            let start = self.gamma.unwrap_or(GammaPolicy::ADAPTIVE_START_FACTOR * gamma0);
            Ok(GammaPolicy::adaptive_from(start, gamma0))
        }
    }
}

fn parse_methods(names: &[String]) -> Result<Vec<MethodKind>, AppError> {
    let mut methods = Vec::new();
    for name in names {
        let m = MethodKind::parse(name)
            .ok_or_else(|| usage(format!("unknown method '{name}' (dr|altproj|classical)")))?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    Ok(methods)
}

fn run_bench(args: BenchArgs) -> Result<(), AppError> {
    let format = OutputFormat::parse(&args.format)
        .ok_or_else(|| usage(format!("unknown format '{}' (csv|table)", args.format)))?;
    let config = BenchConfig {
        m_list: args.m_list,
        n_list: args.n_list,
        trials: args.trials,
        methods: parse_methods(&args.methods)?,
        base_seed: args.seed,
        tol: args.tol,
        max_iters: args.max_iters,
        success_threshold: args.succ_thresh,
        failure_threshold: args.fail_thresh,
        policy: args.gamma.policy(None)?,
        workers: args.workers,
    };
    config
        .validate()
        .map_err(|e| usage(e.to_string()))?;
    let rows = run_benchmark(&config).map_err(anyhow::Error::from)?;
    match &args.out {
        Some(path) => emit_results(&rows, format, path).map_err(anyhow::Error::from)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            match format {
                OutputFormat::Csv => write_csv(&rows, &mut lock).map_err(anyhow::Error::from)?,
                OutputFormat::Table => {
                    lock.write_all(render_table(&rows).as_bytes())
                        .map_err(anyhow::Error::from)?;
                }
            }
        }
    }
    Ok(())
}

fn print_report(report: &SolveReport) {
    println!("status: {}", report.status.as_str());
    println!("iterations: {}", report.iterations);
    println!("objective: {:e}", report.final_objective);
    println!("residual: {:e}", report.final_residual);
    let z = &report.final_iterate.z;
    if z.len() <= 8 {
        let coords: Vec<String> = z.iter().map(|v| format!("{v:.6}")).collect();
        println!("final point: ({})", coords.join(", "));
    } else {
        let nnz = z.iter().filter(|&&v| v.abs() > 1e-12).count();
        println!("final point: {} entries, {} above 1e-12", z.len(), nnz);
    }
}

fn run_single(args: SingleArgs) -> Result<(), AppError> {
    let method = MethodKind::parse(&args.method)
        .ok_or_else(|| usage(format!("unknown method '{}' (dr|altproj|classical)", args.method)))?;
    let options = SolverOptions {
        tol: args.tol,
        max_iters: args.max_iters,
        record_trace: args.trace.is_some(),
        ..Default::default()
    };

    let (problem, x0) = if args.example1 {
        let toy = ThreePointProblem::new(args.eta).map_err(|e| usage(e.to_string()))?;
        let problem = FeasibilityProblem::new(
            Box::new(toy.line()),
            Box::new(FinitePointSet::new(toy.points()).map_err(anyhow::Error::from)?),
        )
        .map_err(anyhow::Error::from)?;
        (problem, toy.start())
    } else {
        let instance = match &args.instance {
            Some(path) => SparseInstance::load(path).map_err(anyhow::Error::from)?,
            None => {
                let (Some(m), Some(n)) = (args.m, args.n) else {
                    return Err(usage("provide --m and --n, or --instance, or --example1"));
                };
                gen_sparse_instance(m, n, args.seed).map_err(|e| usage(e.to_string()))?
            }
        };
        let n = instance.n();
        let c = AffineSet::new(instance.a.clone(), instance.b.clone())
            .map_err(anyhow::Error::from)?;
        let d = SparseBoxSet::with_default_bound(n, instance.r).map_err(anyhow::Error::from)?;
        let problem =
            FeasibilityProblem::new(Box::new(c), Box::new(d)).map_err(anyhow::Error::from)?;
        (problem, DVector::zeros(n))
    };

    let policy = args.gamma.policy(args.example1.then_some(0.2))?;
    let report =
        solve_feasibility(&problem, method, &x0, &policy, &options).map_err(anyhow::Error::from)?;
    print_report(&report);
    if let Some(path) = &args.trace {
        let trace = report
            .trace
            .as_ref()
            .expect("trace recording was requested");
        let mut w = BufWriter::new(File::create(path).map_err(anyhow::Error::from)?);
        trace.write_csv(&mut w).map_err(anyhow::Error::from)?;
    }
    Ok(())
}
