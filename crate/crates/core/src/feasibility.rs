//! The feasibility layer: find a point in `C ∩ D` with `C` convex and `D`
//! possibly nonconvex, by minimizing `½ d_C²` over `D`.
//!
//! Three methods share one report format:
//!
//! - `dr_damped`: the splitting iteration with the closed-form prox of
//!   `½ d_C²`, i.e. `y = (x + γP_C(x))/(1+γ)`, `z = P_D(2y − x)`,
//!   `x ← x + z − y`;
//! - `alt_projection`: `x ← P_D(P_C(x))`;
//! - `dr_classical`: the indicator-sum iteration `y = P_C(x)`,
//!   `z = P_D(2y − x)`, `x ← x + z − y`, which is the `γ → ∞` limit of
//!   `dr_damped` and can cycle instead of converging.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::oracle::{HalfSquaredDistance, Indicator};
use crate::sets::{half_sqdist, ConsensusSet, ConvexProjector, Projector, SetError};
use crate::solver::{
    solve, DrIterate, GammaPolicy, MeritTrace, SolveError, SolveReport, SolveStatus,
    SolverOptions, TraceRecord,
};

#[derive(Debug, Error)]
pub enum FeasibilityError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error("rate fit: {0}")]
    Fit(String),
    #[error("matrix diagnostic: {0}")]
    Matrix(String),
}

/// A feasibility problem `find u ∈ C ∩ D`, stated as minimizing
/// `½ d_C²(u)` subject to `u ∈ D`.
pub struct FeasibilityProblem {
    pub c: Box<dyn ConvexProjector>,
    pub d: Box<dyn Projector>,
}

impl FeasibilityProblem {
    pub fn new(c: Box<dyn ConvexProjector>, d: Box<dyn Projector>) -> Result<Self, SetError> {
        if c.dim() != d.dim() {
            return Err(SetError::DimensionMismatch {
                expected: c.dim(),
                got: d.dim(),
            });
        }
        Ok(Self { c, d })
    }

    pub fn dim(&self) -> usize {
        self.c.dim()
    }

    /// The objective `½ d_C²(u)`; zero exactly when `u` solves the
    /// feasibility problem (up to projection tolerance).
    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        half_sqdist(self.c.as_ref(), u)
    }
}

/// Which update rule to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    DrDamped,
    AltProjection,
    DrClassical,
}

impl MethodKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::DrDamped => "dr",
            MethodKind::AltProjection => "altproj",
            MethodKind::DrClassical => "classical",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dr" => Some(MethodKind::DrDamped),
            "altproj" => Some(MethodKind::AltProjection),
            "classical" => Some(MethodKind::DrClassical),
            _ => None,
        }
    }
}

/// Runs one method on the problem from `x0`.
///
/// Reported objective is `½ d_C²(z)` for the splitting methods and
/// `½ d_C²(x)` for alternating projection. The splitting methods use the
/// three-sequence relative step criterion; alternating projection uses the
/// single-sequence criterion on `x`.
pub fn solve_feasibility(
    problem: &FeasibilityProblem,
    method: MethodKind,
    x0: &DVector<f64>,
    policy: &GammaPolicy,
    options: &SolverOptions,
) -> Result<SolveReport, FeasibilityError> {
    match method {
        MethodKind::DrDamped => {
            let f = HalfSquaredDistance::new(problem.c.as_ref());
            let g = Indicator::new(problem.d.as_ref());
            Ok(solve(&f, &g, x0, policy, options)?)
        }
        MethodKind::AltProjection => Ok(alt_projection(problem, x0, options)),
        MethodKind::DrClassical => Ok(dr_classical(problem, x0, policy, options)),
    }
}

/// Alternating projection `x ← P_D(P_C(x))`.
///
/// For an affine `C` the inner step equals `x + A†(b − Ax)`, so this is
/// the standard projected-gradient update with unit step. Trace rows reuse
/// the shared column layout: `merit` holds the objective, `residual` and
/// `dx` hold the post-projection step norm, `dy`/`yz_gap`/`gamma` are NaN.
fn alt_projection(
    problem: &FeasibilityProblem,
    x0: &DVector<f64>,
    options: &SolverOptions,
) -> SolveReport {
    let mut x = x0.clone();
    let mut trace = MeritTrace::default();
    let mut x_history = Vec::new();
    if options.keep_x_history {
        x_history.push(x.clone());
    }
    let mut status = SolveStatus::MaxIters;
    let mut t = 0;
    let mut last_step = f64::NAN;
    let mut prev_x = x.clone();
    for i in 1..=options.max_iters {
        let next = problem.d.project(&problem.c.project(&x));
        let finite = next.iter().all(|v| v.is_finite());
        let step = (&next - &x).norm();
        if options.record_trace {
            trace.records.push(TraceRecord {
                t: i,
                merit: if finite { problem.objective(&next) } else { f64::NAN },
                dy: f64::NAN,
                dx: step,
                yz_gap: f64::NAN,
                residual: step,
                gamma: f64::NAN,
            });
        }
        if options.keep_x_history {
            x_history.push(next.clone());
        }
        let denom = x.norm().max(1.0);
        prev_x = std::mem::replace(&mut x, next);
        t = i;
        last_step = step;
        if !finite {
            status = SolveStatus::Diverged;
            break;
        }
        if step / denom < options.tol {
            status = SolveStatus::Converged;
            break;
        }
    }
    let final_objective = problem.objective(&x);
    SolveReport {
        status,
        iterations: t,
        final_iterate: DrIterate {
            y: x.clone(),
            z: x.clone(),
            x: x.clone(),
            t,
            prev_x,
        },
        final_residual: last_step,
        final_objective,
        final_gamma: f64::NAN,
        trace: options.record_trace.then_some(trace),
        x_history: options.keep_x_history.then_some(x_history),
    }
}

/// Classical indicator-sum splitting `y = P_C(x)`, `z = P_D(2y − x)`,
/// `x ← x + z − y`.
///
/// The step size plays no role in the updates; trace merit is evaluated
/// for the indicator-sum objective at the policy's step size, and the
/// residual column reports `‖y − z‖` (the `γ → ∞` limit of the damped
/// residual with `L = 1`).
fn dr_classical(
    problem: &FeasibilityProblem,
    x0: &DVector<f64>,
    policy: &GammaPolicy,
    options: &SolverOptions,
) -> SolveReport {
    let gamma = policy.gamma;
    let mut state = DrIterate::start(x0.clone());
    let mut trace = MeritTrace::default();
    let mut x_history = Vec::new();
    if options.keep_x_history {
        x_history.push(state.x.clone());
    }
    let mut status = SolveStatus::MaxIters;
    for _ in 0..options.max_iters {
        let y = problem.c.project(&state.x);
        let z = problem.d.project(&(2.0 * &y - &state.x));
        let x_new = &state.x + (&z - &y);
        let next = DrIterate {
            y,
            z,
            x: x_new,
            t: state.t + 1,
            prev_x: state.x.clone(),
        };
        let finite = next.is_finite();
        let gap = (&next.y - &next.z).norm();
        if options.record_trace {
            if state.t >= 1 {
                if let Some(last) = trace.records.last_mut() {
                    last.dy = (&next.y - &state.y).norm();
                }
            }
            // Indicator-sum merit: both indicator terms vanish at the
            // projected iterates, leaving the coupling terms.
            let coupling = (&next.x - &next.y).dot(&(&next.z - &next.y));
            let merit_now = -gap * gap / (2.0 * gamma) + coupling / gamma;
            trace.records.push(TraceRecord {
                t: next.t,
                merit: merit_now,
                dy: f64::NAN,
                dx: (&next.x - &next.prev_x).norm(),
                yz_gap: gap,
                residual: gap,
                gamma,
            });
        }
        if options.keep_x_history {
            x_history.push(next.x.clone());
        }
        if !finite {
            status = SolveStatus::Diverged;
            state = next;
            break;
        }
        if state.t >= 1 {
            let dx = (&next.x - &state.x).norm();
            let dy = (&next.y - &state.y).norm();
            let dz = (&next.z - &state.z).norm();
            let denom = state.x.norm().max(state.y.norm()).max(state.z.norm()).max(1.0);
            if dx.max(dy).max(dz) / denom < options.tol {
                status = SolveStatus::Converged;
                state = next;
                break;
            }
        }
        state = next;
    }
    let final_residual = (&state.y - &state.z).norm();
    let final_objective = problem.objective(&state.z);
    SolveReport {
        status,
        iterations: state.t,
        final_residual,
        final_objective,
        final_gamma: gamma,
        trace: options.record_trace.then_some(trace),
        x_history: options.keep_x_history.then_some(x_history),
        final_iterate: state,
    }
}

/// Lifts `find u ∈ ∩ D_i` over the product space: `C` becomes the
/// consensus set (optionally radius-bounded) and `D` the Cartesian
/// product of the `D_i`, projected blockwise.
pub fn lift_product(
    sets: Vec<Box<dyn Projector>>,
    radius: Option<f64>,
) -> Result<FeasibilityProblem, SetError> {
    if sets.len() < 2 {
        return Err(SetError::Invalid(format!(
            "product lifting needs at least 2 sets, got {}",
            sets.len()
        )));
    }
    let n = sets[0].dim();
    for s in &sets {
        if s.dim() != n {
            return Err(SetError::DimensionMismatch {
                expected: n,
                got: s.dim(),
            });
        }
    }
    let blocks = sets.len();
    let c = ConsensusSet::new(blocks, n, radius)?;
    let d = crate::sets::BlockProductSet::new(sets)?;
    FeasibilityProblem::new(Box::new(c), Box::new(d))
}

/// Per-block consensus gaps `‖z_i − mean_j z_j‖` of a stacked iterate.
///
/// This is a computable surrogate for the per-block stationarity residual
/// of the lifted problem (the exact quantity involves normal cones of the
/// blocks); it decays to zero on convergent runs.
pub fn consensus_block_residuals(z: &DVector<f64>, blocks: usize, block_dim: usize) -> Vec<f64> {
    assert_eq!(z.len(), blocks * block_dim, "stacked dimension");
    let mut mean = DVector::zeros(block_dim);
    for k in 0..blocks {
        mean += z.rows(k * block_dim, block_dim);
    }
    mean /= blocks as f64;
    (0..blocks)
        .map(|k| (DVector::from(z.rows(k * block_dim, block_dim).clone_owned()) - &mean).norm())
        .collect()
}

/// Geometric decay fitted to the tail of a residual trace.
#[derive(Debug, Clone)]
pub struct RateFit {
    /// Fitted ratio `exp(slope)`; present only when the fit is trustworthy
    /// (`r_squared > 0.9` and `window ≥ 20`).
    pub eta: Option<f64>,
    pub r_squared: f64,
    pub window: usize,
}

/// Least-squares fit of `log(residual)` against the iteration index over
/// the last `window` trace rows. All residuals in the window must be
/// strictly positive and finite.
pub fn fit_rate(trace: &MeritTrace, window: usize) -> Result<RateFit, FeasibilityError> {
    if window < 2 {
        return Err(FeasibilityError::Fit("window must be at least 2".into()));
    }
    if trace.records.len() < window {
        return Err(FeasibilityError::Fit(format!(
            "need {window} recorded residuals, have {}",
            trace.records.len()
        )));
    }
    let tail = &trace.records[trace.records.len() - window..];
    if tail.iter().any(|r| r.residual <= 0.0 || !r.residual.is_finite()) {
        return Err(FeasibilityError::Fit(
            "window contains non-positive or non-finite residuals".into(),
        ));
    }
    let xs: Vec<f64> = tail.iter().map(|r| r.t as f64).collect();
    let ys: Vec<f64> = tail.iter().map(|r| r.residual.ln()).collect();
    let n = window as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x) * (x - mean_x)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let slope = sxy / sxx;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let pred = mean_y + slope * (x - mean_x);
            (y - pred) * (y - pred)
        })
        .sum();
    let r_squared = if ss_tot < 1e-30 {
        if ss_res < 1e-30 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    let eta_raw = slope.exp();
    let eta = (r_squared > 0.9 && window >= 20).then_some(eta_raw);
    Ok(RateFit {
        eta,
        r_squared,
        window,
    })
}

/// Default lookback for [`detect_cycle`].
pub const CYCLE_WINDOW: usize = 100;
/// Default relative tolerance for [`detect_cycle`].
pub const CYCLE_TOL: f64 = 1e-9;

/// Smallest period `p ≤ window` such that `‖x_t − x_{t−p}‖ ≤ tol(1+‖x_t‖)`
/// holds for `window` consecutive trailing iterates; `None` when no such
/// period exists. A converged run reports period 1 at its fixed point.
pub fn detect_cycle(history: &[DVector<f64>], window: usize, tol: f64) -> Option<usize> {
    if window < 2 {
        return None;
    }
    for p in 1..=window {
        if history.len() < window + p {
            return None;
        }
        let start = history.len() - window;
        let sustained = (start..history.len()).all(|t| {
            let diff = (&history[t] - &history[t - p]).norm();
            diff <= tol * (1.0 + history[t].norm())
        });
        if sustained {
            return Some(p);
        }
    }
    None
}

/// Lower bound constant for a symmetric indefinite matrix:
/// the smallest positive eigenvalue `α` satisfies `‖Bu‖² ≥ α·uᵀBu` for
/// every `u`.
///
/// Splitting `u` over the eigenbasis shows the inequality is tight on the
/// eigenvector of the smallest positive eigenvalue and only loosens on
/// directions with nonpositive curvature.
pub fn indefinite_lower_bound(b: &DMatrix<f64>) -> Result<f64, FeasibilityError> {
    let (rows, cols) = b.shape();
    if rows != cols {
        return Err(FeasibilityError::Matrix(format!(
            "matrix must be square, got {rows}x{cols}"
        )));
    }
    let asym = (b - b.transpose()).norm();
    if asym > 1e-12 * (1.0 + b.norm()) {
        return Err(FeasibilityError::Matrix(format!(
            "matrix is not symmetric (asymmetry {asym:.3e})"
        )));
    }
    let eigen = b.clone().symmetric_eigen();
    let max_abs = eigen.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let tol = 1e-10 * max_abs.max(1e-300);
    let has_negative = eigen.eigenvalues.iter().any(|&v| v < -tol);
    let smallest_positive = eigen
        .eigenvalues
        .iter()
        .filter(|&&v| v > tol)
        .fold(f64::INFINITY, |a, &v| a.min(v));
    if !has_negative || !smallest_positive.is_finite() {
        return Err(FeasibilityError::Matrix(
            "matrix is not indefinite (needs a positive and a negative eigenvalue)".into(),
        ));
    }
    Ok(smallest_positive)
}

/// Hessian of the smooth part of the merit function at a feasible limit
/// of the damped iteration when `C = {x : Ax = b}`:
///
/// ```text
/// [ A†A + I/γ   0      −I/γ ]
/// [ 0          −I/γ     I/γ ]
/// [ −I/γ        I/γ     0   ]
/// ```
///
/// Symmetric and indefinite; feeding it to [`indefinite_lower_bound`]
/// yields the constant behind empirical local linear rates.
pub fn affine_merit_hessian(gamma: f64, a: &DMatrix<f64>) -> Result<DMatrix<f64>, FeasibilityError> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(FeasibilityError::Matrix(format!(
            "gamma = {gamma} must be positive"
        )));
    }
    let n = a.ncols();
    let affine = crate::sets::AffineSet::new(a.clone(), DVector::zeros(a.nrows()))
        .map_err(FeasibilityError::Set)?;
    let proj = affine.row_space_projector();
    let inv_gamma = 1.0 / gamma;
    let mut h = DMatrix::zeros(3 * n, 3 * n);
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] = proj[(i, j)];
        }
        h[(i, i)] += inv_gamma;
        h[(n + i, n + i)] = -inv_gamma;
        h[(2 * n + i, 2 * n + i)] = 0.0;
        h[(i, 2 * n + i)] = -inv_gamma;
        h[(2 * n + i, i)] = -inv_gamma;
        h[(n + i, 2 * n + i)] = inv_gamma;
        h[(2 * n + i, n + i)] = inv_gamma;
    }
    Ok(h)
}
