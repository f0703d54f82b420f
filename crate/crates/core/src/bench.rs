//! Benchmark harness: sweeps `(m, n, method)` cells of the sparse
//! linear-system feasibility family, runs seeded trials in parallel, and
//! aggregates per-cell statistics.
//!
//! Determinism contract: a config (including its base seed) produces
//! identical statistics regardless of worker count or scheduling, because
//! every trial derives its own seed from `(base, m, n, trial)` and results
//! are collected in trial order. Wall-clock fields are informational and
//! excluded from that contract.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use thiserror::Error;

use crate::feasibility::{solve_feasibility, FeasibilityProblem, MethodKind};
use crate::instances::{derive_seed, gen_sparse_instance};
use crate::sets::{AffineSet, SparseBoxSet};
use crate::solver::{GammaPolicy, SolveStatus, SolverOptions};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Sweep configuration.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub m_list: Vec<usize>,
    pub n_list: Vec<usize>,
    pub trials: usize,
    pub methods: Vec<MethodKind>,
    pub base_seed: u64,
    pub tol: f64,
    pub max_iters: usize,
    /// Final objective strictly below this counts as a success.
    pub success_threshold: f64,
    /// Final objective above this (or non-finite) counts as a failure.
    /// The two thresholds differ, so a trial may be neither.
    pub failure_threshold: f64,
    pub policy: GammaPolicy,
    /// Rayon worker count; 0 uses the global default.
    pub workers: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            m_list: vec![20, 40, 60],
            n_list: vec![400],
            trials: 50,
            methods: vec![
                MethodKind::DrDamped,
                MethodKind::AltProjection,
                MethodKind::DrClassical,
            ],
            base_seed: 0,
            tol: 1e-8,
            max_iters: 20_000,
            success_threshold: 1e-12,
            failure_threshold: 1e-6,
            policy: GammaPolicy::adaptive(1.0, 0.0).expect("valid constants"),
            workers: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.m_list.is_empty() || self.n_list.is_empty() {
            return Err(BenchError::Config("empty m or n list".into()));
        }
        if self.methods.is_empty() {
            return Err(BenchError::Config("no methods selected".into()));
        }
        if self.trials < 1 {
            return Err(BenchError::Config("trials must be at least 1".into()));
        }
        if self.success_threshold.is_nan()
            || self.failure_threshold.is_nan()
            || self.success_threshold >= self.failure_threshold
        {
            return Err(BenchError::Config(format!(
                "success threshold {} must be below failure threshold {}",
                self.success_threshold, self.failure_threshold
            )));
        }
        for &m in &self.m_list {
            if m < 5 {
                return Err(BenchError::Config(format!("m = {m} must be at least 5")));
            }
            for &n in &self.n_list {
                if m > n {
                    return Err(BenchError::Config(format!(
                        "cell ({m}, {n}) has m > n"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Classified result of one trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    pub residual: f64,
    pub success: bool,
    pub failure: bool,
    /// Set when the trial errored instead of producing a solve report;
    /// such trials count as failures.
    pub error: Option<String>,
}

/// Aggregated statistics for one `(m, n, method)` cell.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub m: usize,
    pub n: usize,
    pub method: MethodKind,
    pub iter_mean: f64,
    pub fval_max: f64,
    pub fval_min: f64,
    pub succ: usize,
    pub fail: usize,
    /// Cell wall time in seconds; informational only.
    pub wall_time: f64,
}

impl BenchRow {
    /// Equality of the deterministic fields (everything but wall time).
    pub fn stats_eq(&self, other: &Self) -> bool {
        self.m == other.m
            && self.n == other.n
            && self.method == other.method
            && self.iter_mean == other.iter_mean
            && self.fval_max == other.fval_max
            && self.fval_min == other.fval_min
            && self.succ == other.succ
            && self.fail == other.fail
    }
}

/// One cell: the aggregate row plus every per-trial outcome.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub row: BenchRow,
    pub outcomes: Vec<TrialOutcome>,
}

fn run_trial(config: &BenchConfig, m: usize, n: usize, method: MethodKind, trial: usize) -> TrialOutcome {
    let seed = derive_seed(config.base_seed, m, n, trial);
    let mut outcome = TrialOutcome {
        trial,
        seed,
        status: SolveStatus::Diverged,
        iterations: 0,
        objective: f64::NAN,
        residual: f64::NAN,
        success: false,
        failure: true,
        error: None,
    };
    let result = (|| -> Result<(), String> {
        let instance = gen_sparse_instance(m, n, seed).map_err(|e| e.to_string())?;
        let c = AffineSet::new(instance.a.clone(), instance.b.clone()).map_err(|e| e.to_string())?;
        let d = SparseBoxSet::with_default_bound(n, instance.r).map_err(|e| e.to_string())?;
        let problem =
            FeasibilityProblem::new(Box::new(c), Box::new(d)).map_err(|e| e.to_string())?;
        let options = SolverOptions {
            tol: config.tol,
            max_iters: config.max_iters,
            ..Default::default()
        };
        let x0 = DVector::zeros(n);
        let report = solve_feasibility(&problem, method, &x0, &config.policy, &options)
            .map_err(|e| e.to_string())?;
        outcome.status = report.status;
        outcome.iterations = report.iterations;
        outcome.objective = report.final_objective;
        outcome.residual = report.final_residual;
        Ok(())
    })();
    if let Err(e) = result {
        outcome.error = Some(e);
    }
    let obj = outcome.objective;
    outcome.success = obj.is_finite() && obj < config.success_threshold;
    outcome.failure = !obj.is_finite() || obj > config.failure_threshold;
    outcome
}

/// Runs all trials of one cell in parallel, collecting in trial order.
pub fn run_cell(
    config: &BenchConfig,
    m: usize,
    n: usize,
    method: MethodKind,
) -> Result<CellResult, BenchError> {
    config.validate()?;
    let started = Instant::now();
    let outcomes: Vec<TrialOutcome> = (0..config.trials)
        .into_par_iter()
        .map(|trial| run_trial(config, m, n, method, trial))
        .collect();
    let wall_time = started.elapsed().as_secs_f64();
    let iter_mean =
        outcomes.iter().map(|o| o.iterations as f64).sum::<f64>() / outcomes.len() as f64;
    let fval_max = outcomes
        .iter()
        .map(|o| o.objective)
        .fold(f64::NEG_INFINITY, f64::max);
    let fval_min = outcomes
        .iter()
        .map(|o| o.objective)
        .fold(f64::INFINITY, f64::min);
    let succ = outcomes.iter().filter(|o| o.success).count();
    let fail = outcomes.iter().filter(|o| o.failure).count();
    Ok(CellResult {
        row: BenchRow {
            m,
            n,
            method,
            iter_mean,
            fval_max,
            fval_min,
            succ,
            fail,
            wall_time,
        },
        outcomes,
    })
}

/// Runs the whole sweep; rows come out in `(m, n, method)` order.
pub fn run_benchmark(config: &BenchConfig) -> Result<Vec<BenchRow>, BenchError> {
    config.validate()?;
    let body = || -> Result<Vec<BenchRow>, BenchError> {
        let mut rows = Vec::new();
        for &m in &config.m_list {
            for &n in &config.n_list {
                for &method in &config.methods {
                    rows.push(run_cell(config, m, n, method)?.row);
                }
            }
        }
        Ok(rows)
    };
    if config.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        pool.install(body)
    } else {
        body()
    }
}

/// Output layout for [`emit_results`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Table,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(OutputFormat::Csv),
            "table" => Some(OutputFormat::Table),
            _ => None,
        }
    }
}

pub const CSV_HEADER: &str = "m,n,method,iter_mean,fval_max,fval_min,succ,fail,wall_time";

/// Writes rows as CSV; floats use scientific notation with six
/// significant digits, so parsing back recovers values at that precision.
pub fn write_csv<W: Write>(rows: &[BenchRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.5e},{:.5e},{:.5e},{},{},{:.5e}",
            r.m,
            r.n,
            r.method.as_str(),
            r.iter_mean,
            r.fval_max,
            r.fval_min,
            r.succ,
            r.fail,
            r.wall_time
        )?;
    }
    Ok(())
}

/// Parses CSV produced by [`write_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<BenchRow>, BenchError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| BenchError::Parse("empty input".into()))?;
    if header.trim() != CSV_HEADER {
        return Err(BenchError::Parse(format!("unexpected header: {header}")));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(BenchError::Parse(format!(
                "line {}: expected 9 fields, got {}",
                idx + 2,
                fields.len()
            )));
        }
        let parse_usize = |s: &str, what: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| BenchError::Parse(format!("{what}: {e}")))
        };
        let parse_f64 = |s: &str, what: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| BenchError::Parse(format!("{what}: {e}")))
        };
        let method = MethodKind::parse(fields[2].trim())
            .ok_or_else(|| BenchError::Parse(format!("unknown method {}", fields[2])))?;
        rows.push(BenchRow {
            m: parse_usize(fields[0], "m")?,
            n: parse_usize(fields[1], "n")?,
            method,
            iter_mean: parse_f64(fields[3], "iter_mean")?,
            fval_max: parse_f64(fields[4], "fval_max")?,
            fval_min: parse_f64(fields[5], "fval_min")?,
            succ: parse_usize(fields[6], "succ")?,
            fail: parse_usize(fields[7], "fail")?,
            wall_time: parse_f64(fields[8], "wall_time")?,
        });
    }
    Ok(rows)
}

/// Renders an aligned text table with the same column order as the CSV.
pub fn render_table(rows: &[BenchRow]) -> String {
    let headers: Vec<&str> = CSV_HEADER.split(',').collect();
    let mut cells: Vec<Vec<String>> = vec![headers.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        cells.push(vec![
            r.m.to_string(),
            r.n.to_string(),
            r.method.as_str().to_string(),
            format!("{:.1}", r.iter_mean),
            format!("{:.1e}", r.fval_max),
            format!("{:.1e}", r.fval_min),
            r.succ.to_string(),
            r.fail.to_string(),
            format!("{:.2}", r.wall_time),
        ]);
    }
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|j| cells.iter().map(|row| row[j].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        out.push_str(&line.join("  "));
        out.push('\n');
    }
    out
}

/// Writes rows to `path` in the requested format.
pub fn emit_results<P: AsRef<Path>>(
    rows: &[BenchRow],
    format: OutputFormat,
    path: P,
) -> Result<(), BenchError> {
    if rows.is_empty() {
        return Err(BenchError::Config("no rows to emit".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        OutputFormat::Csv => write_csv(rows, &mut w)?,
        OutputFormat::Table => w.write_all(render_table(rows).as_bytes())?,
    }
    w.flush()?;
    Ok(())
}

/// Reads back a CSV results file.
pub fn read_results<P: AsRef<Path>>(path: P) -> Result<Vec<BenchRow>, BenchError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_csv(&text)
}
