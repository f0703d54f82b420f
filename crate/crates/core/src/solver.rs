//! Douglas-Rachford splitting for `min f(u) + g(u)` with `f` smooth and
//! `g` proper closed and prox-friendly.
//!
//! Each iteration performs a proximal step on `f`, a proximal step on `g`
//! at the reflected point, and an additive correction of the governing
//! sequence:
//!
//! ```text
//! y ← argmin f(·) + ‖· − x‖²/(2γ)
//! z ← prox of g at (2y − x) with parameter γ
//! x ← x + (z − y)
//! ```
//!
//! For step sizes below [`gamma_threshold`] the merit value returned by
//! [`merit`] is nonincreasing from the second iterate on, which is what the
//! solver monitors in fixed-step mode.

use std::io::Write;

use nalgebra::DVector;
use thiserror::Error;

use crate::oracle::{Prox, Smooth};

/// Solver failures that abort a run (as opposed to diagnostic statuses,
/// which are reported in [`SolveReport::status`]).
#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid smoothness constants: L = {l_lipschitz}, l = {curvature}")]
    InvalidConstants { l_lipschitz: f64, curvature: f64 },
    #[error("step size {gamma} violates the decrease condition (threshold {threshold})")]
    StepSizeTooLarge { gamma: f64, threshold: f64 },
    #[error("inner solve did not reach tolerance {tol:.3e} in {iterations} iterations (gradient norm {residual:.3e})")]
    InnerSolveFailed {
        iterations: usize,
        residual: f64,
        tol: f64,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Largest admissible step size for given smoothness constants.
///
/// Returns the positive root `γ_max` of `(1 + γL)² + 5γl/2 − 3/2 = 0`;
/// every `γ < γ_max` makes the merit sequence nonincreasing. The value
/// never exceeds `1/L`.
pub fn gamma_threshold(l_lipschitz: f64, curvature: f64) -> Result<f64, SolveError> {
    if l_lipschitz.is_nan()
        || l_lipschitz <= 0.0
        || curvature < -l_lipschitz
        || !curvature.is_finite()
    {
        return Err(SolveError::InvalidConstants {
            l_lipschitz,
            curvature,
        });
    }
    let p = 2.5 * curvature + 2.0 * l_lipschitz;
    let disc = p * p + 2.0 * l_lipschitz * l_lipschitz;
    Ok((-p + disc.sqrt()) / (2.0 * l_lipschitz * l_lipschitz))
}

/// Guaranteed merit decrease per unit squared y-step:
/// `K = (3/2 − (1 + γL)² − 5γl/2) / γ > 0` whenever `γ` is admissible.
pub fn decrease_constant(gamma: f64, l_lipschitz: f64, curvature: f64) -> Result<f64, SolveError> {
    let threshold = gamma_threshold(l_lipschitz, curvature)?;
    if gamma.is_nan() || gamma <= 0.0 || gamma >= threshold {
        return Err(SolveError::StepSizeTooLarge { gamma, threshold });
    }
    let one_plus = 1.0 + gamma * l_lipschitz;
    Ok((1.5 - one_plus * one_plus - 2.5 * gamma * curvature) / gamma)
}

/// Coefficient `τ = √3 (1 + γL) / γ` bounding the merit subgradient:
/// `dist(0, ∂D_γ(y^t, z^t, x^t)) ≤ τ ‖y^{t+1} − y^t‖` for `t ≥ 1`. Each of
/// the three partial blocks has norm `‖x^{t+1} − x^t‖ / γ`, which is itself
/// bounded by `(1 + γL)/γ` times the y-step.
pub fn merit_gradient_bound(gamma: f64, l_lipschitz: f64) -> f64 {
    3.0_f64.sqrt() * (1.0 + gamma * l_lipschitz) / gamma
}

/// The merit value
/// `D_γ(y, z, x) = f(y) + g(z) − ‖y−z‖²/(2γ) + ⟨x−y, z−y⟩/γ`,
/// evaluated in exactly this canonical form. `+∞` propagates through
/// `g(z)`.
pub fn merit<F, G>(
    y: &DVector<f64>,
    z: &DVector<f64>,
    x: &DVector<f64>,
    gamma: f64,
    f: &F,
    g: &G,
) -> f64
where
    F: Smooth + ?Sized,
    G: Prox + ?Sized,
{
    let coupling = (x - y).dot(&(z - y));
    f.value(y) + g.value(z) - (y - z).norm_squared() / (2.0 * gamma) + coupling / gamma
}

/// Algebraically equal form of [`merit`] obtained by expanding the inner
/// product: `f(y) + g(z) + ‖2y−z−x‖²/(2γ) − ‖x−y‖²/(2γ) − ‖y−z‖²/γ`.
/// Kept as a cross-check; the solver never evaluates it.
pub fn merit_via_expansion<F, G>(
    y: &DVector<f64>,
    z: &DVector<f64>,
    x: &DVector<f64>,
    gamma: f64,
    f: &F,
    g: &G,
) -> f64
where
    F: Smooth + ?Sized,
    G: Prox + ?Sized,
{
    let reflected = 2.0 * y - z - x;
    f.value(y) + g.value(z) + reflected.norm_squared() / (2.0 * gamma)
        - (x - y).norm_squared() / (2.0 * gamma)
        - (y - z).norm_squared() / gamma
}

/// Algebraically equal form of [`merit`] obtained by completing squares:
/// `f(y) + g(z) + (‖x−y‖² − ‖x−z‖²)/(2γ)`. Kept as a cross-check.
pub fn merit_via_squares<F, G>(
    y: &DVector<f64>,
    z: &DVector<f64>,
    x: &DVector<f64>,
    gamma: f64,
    f: &F,
    g: &G,
) -> f64
where
    F: Smooth + ?Sized,
    G: Prox + ?Sized,
{
    f.value(y) + g.value(z) + ((x - y).norm_squared() - (x - z).norm_squared()) / (2.0 * gamma)
}

/// The iterate triple after one step, along with the previous governing
/// point for step norms.
#[derive(Debug, Clone)]
pub struct DrIterate {
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub x: DVector<f64>,
    /// Completed iteration count (the first step produces `t = 1`).
    pub t: usize,
    /// Governing point before this step, `x^{t−1}`.
    pub prev_x: DVector<f64>,
}

impl DrIterate {
    /// Initial state holding only the starting point; no step has run yet.
    pub fn start(x0: DVector<f64>) -> Self {
        let n = x0.len();
        Self {
            y: DVector::zeros(n),
            z: DVector::zeros(n),
            x: x0.clone(),
            t: 0,
            prev_x: x0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.y.iter().all(|v| v.is_finite())
            && self.z.iter().all(|v| v.is_finite())
            && self.x.iter().all(|v| v.is_finite())
    }
}

/// Upper bound on the distance from 0 to `∇f(z) + ∂g(z)` at the current
/// iterate: `(L + 1/γ) ‖y − z‖`. Meaningful from the first completed step
/// on.
pub fn stationarity_residual(state: &DrIterate, gamma: f64, l_lipschitz: f64) -> f64 {
    (l_lipschitz + 1.0 / gamma) * (&state.y - &state.z).norm()
}

/// How the step size evolves over a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaMode {
    Fixed,
    Adaptive,
}

/// Step-size schedule. In adaptive mode the solver starts from a large
/// `gamma` and halves it (never below `floor_factor · gamma0`) whenever
/// `gamma > gamma0` and the iterates look unstable: the y-step exceeds
/// `trigger_c0 / t` or the y-iterate norm exceeds `trigger_c1`.
#[derive(Debug, Clone)]
pub struct GammaPolicy {
    pub mode: GammaMode,
    pub gamma: f64,
    pub gamma0: f64,
    pub shrink_factor: f64,
    pub floor_factor: f64,
    pub trigger_c0: f64,
    pub trigger_c1: f64,
}

impl GammaPolicy {
    /// Ratio between the adaptive starting step and the threshold `gamma0`.
    pub const ADAPTIVE_START_FACTOR: f64 = 150.0;

    /// A constant step size.
    pub fn fixed(gamma: f64) -> Self {
        Self {
            mode: GammaMode::Fixed,
            gamma,
            gamma0: gamma,
            shrink_factor: 0.5,
            floor_factor: 0.9999,
            trigger_c0: 1000.0,
            trigger_c1: 1e10,
        }
    }

    /// Adaptive schedule starting at `150 · gamma0` with threshold
    /// `gamma0 = gamma_threshold(L, l)`.
    pub fn adaptive(l_lipschitz: f64, curvature: f64) -> Result<Self, SolveError> {
        let gamma0 = gamma_threshold(l_lipschitz, curvature)?;
        Ok(Self::adaptive_from(Self::ADAPTIVE_START_FACTOR * gamma0, gamma0))
    }

    /// Adaptive schedule with explicit starting step and threshold.
    pub fn adaptive_from(gamma: f64, gamma0: f64) -> Self {
        Self {
            mode: GammaMode::Adaptive,
            gamma,
            gamma0,
            shrink_factor: 0.5,
            floor_factor: 0.9999,
            trigger_c0: 1000.0,
            trigger_c1: 1e10,
        }
    }
}

/// One row of a [`MeritTrace`].
///
/// `dy` is the forward y-step `‖y^{t+1} − y^t‖`, filled in once the next
/// step completes (`NaN` on the final row). `dx` is the backward step
/// `‖x^t − x^{t−1}‖`.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub t: usize,
    pub merit: f64,
    pub dy: f64,
    pub dx: f64,
    pub yz_gap: f64,
    pub residual: f64,
    pub gamma: f64,
}

/// Per-iteration history of merit values, step norms and residuals.
#[derive(Debug, Clone, Default)]
pub struct MeritTrace {
    pub records: Vec<TraceRecord>,
}

impl MeritTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes the trace as CSV with columns
    /// `t,merit,dy,dx,yz_gap,residual,gamma`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,merit,dy,dx,yz_gap,residual,gamma")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.t, r.merit, r.dy, r.dx, r.yz_gap, r.residual, r.gamma
            )?;
        }
        Ok(())
    }
}

/// Terminal classification of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Relative step criterion and residual certificate both met.
    Converged,
    /// Iteration cap reached first.
    MaxIters,
    /// The merit sequence increased beyond slack while the fixed step size
    /// guaranteed decrease. Diagnostic: the run completes, but its result
    /// should not be trusted as a stationary point certificate.
    MeritViolation,
    /// A non-finite value appeared in an iterate.
    Diverged,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::MeritViolation => "merit_violation",
            SolveStatus::Diverged => "diverged",
        }
    }
}

/// Termination and bookkeeping knobs.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Relative three-sequence step tolerance.
    pub tol: f64,
    /// Certificate bound required of `(L + 1/γ)‖y − z‖` at termination.
    pub residual_tol: f64,
    pub max_iters: usize,
    /// Record a full [`MeritTrace`] (costs one `f`/`g` evaluation per
    /// iteration).
    pub record_trace: bool,
    /// Keep every governing iterate `x^t` for cycle diagnostics.
    pub keep_x_history: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            residual_tol: 1e-6,
            max_iters: 20_000,
            record_trace: false,
            keep_x_history: false,
        }
    }
}

/// Outcome of a run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub final_iterate: DrIterate,
    /// `(L + 1/γ)‖y − z‖` at the final iterate.
    pub final_residual: f64,
    /// `f(z) + g(z)` at the final iterate.
    pub final_objective: f64,
    /// Step size in force at termination.
    pub final_gamma: f64,
    pub trace: Option<MeritTrace>,
    pub x_history: Option<Vec<DVector<f64>>>,
}

/// Relative slack allowed when checking merit monotonicity.
pub const MERIT_SLACK: f64 = 1e-10;

const INNER_TOL_FACTOR: f64 = 1e-12;
const INNER_MAX_ITERS: usize = 10_000;

/// Minimizes `f(y) + ‖y − x‖²/(2γ)` by gradient descent with the fixed
/// step `2/(2/γ + L − l)`, stopping when the subproblem gradient norm
/// drops below `1e-12 (1 + ‖x‖)`. The subproblem is strongly convex with
/// modulus `1/γ − l`, which the caller must ensure is positive.
fn prox_smooth_inner<F: Smooth + ?Sized>(
    f: &F,
    x: &DVector<f64>,
    gamma: f64,
) -> Result<DVector<f64>, SolveError> {
    let l_lipschitz = f.lipschitz();
    let curvature = f.curvature();
    let modulus = 1.0 / gamma - curvature;
    if modulus.is_nan() || modulus <= 0.0 {
        return Err(SolveError::Invalid(format!(
            "inner subproblem not strongly convex: 1/gamma - l = {modulus}"
        )));
    }
    let step = 2.0 / (2.0 / gamma + l_lipschitz - curvature);
    let tol = INNER_TOL_FACTOR * (1.0 + x.norm());
    let mut y = x.clone();
    let mut grad_norm = f64::INFINITY;
    for _ in 0..INNER_MAX_ITERS {
        let grad = f.gradient(&y) + (&y - x) / gamma;
        grad_norm = grad.norm();
        if grad_norm <= tol {
            return Ok(y);
        }
        y -= step * grad;
    }
    Err(SolveError::InnerSolveFailed {
        iterations: INNER_MAX_ITERS,
        residual: grad_norm,
        tol,
    })
}

/// One splitting step from `state.x`.
///
/// Uses the oracle's closed-form prox for the y-update when available and
/// the inner gradient solve otherwise; either way the output satisfies
/// `‖γ∇f(y) + y − x‖ ≤ 1e-9 (1 + ‖x‖)`. The new governing point is
/// `x + (z − y)` computed in exactly that order.
pub fn dr_step<F, G>(
    state: &DrIterate,
    gamma: f64,
    f: &F,
    g: &G,
) -> Result<DrIterate, SolveError>
where
    F: Smooth + ?Sized,
    G: Prox + ?Sized,
{
    let x = &state.x;
    let y = match f.exact_prox(x, gamma) {
        Some(y) => y,
        None => prox_smooth_inner(f, x, gamma)?,
    };
    let z = g.prox(&(2.0 * &y - x), gamma);
    let x_new = x + (&z - &y);
    Ok(DrIterate {
        y,
        z,
        x: x_new,
        t: state.t + 1,
        prev_x: x.clone(),
    })
}

/// Residual of the y-update optimality condition,
/// `‖γ∇f(y) + y − x‖`; diagnostic used by the test harness.
pub fn y_update_residual<F: Smooth + ?Sized>(
    f: &F,
    y: &DVector<f64>,
    x: &DVector<f64>,
    gamma: f64,
) -> f64 {
    (gamma * f.gradient(y) + y - x).norm()
}

/// Runs the splitting iteration from `x0` until the relative change of all
/// three sequences drops below `options.tol` (with the residual
/// certificate below `options.residual_tol`), or `options.max_iters`.
///
/// In fixed mode with an admissible step size, merit monotonicity is
/// monitored with slack `1e-10 (1 + |D_γ|)`; any violation downgrades the
/// final status to [`SolveStatus::MeritViolation`] without aborting the
/// run. In adaptive mode the step size shrinks per the policy and no
/// monotonicity claim is made. Non-finite iterates terminate immediately
/// with [`SolveStatus::Diverged`].
pub fn solve<F, G>(
    f: &F,
    g: &G,
    x0: &DVector<f64>,
    policy: &GammaPolicy,
    options: &SolverOptions,
) -> Result<SolveReport, SolveError>
where
    F: Smooth + ?Sized,
    G: Prox + ?Sized,
{
    if options.max_iters < 1 {
        return Err(SolveError::Invalid("max_iters must be at least 1".into()));
    }
    if policy.gamma.is_nan() || policy.gamma <= 0.0 {
        return Err(SolveError::Invalid(format!(
            "step size {} must be positive",
            policy.gamma
        )));
    }
    let l_lipschitz = f.lipschitz();
    let threshold = gamma_threshold(l_lipschitz, f.curvature())?;
    let monitor_merit = policy.mode == GammaMode::Fixed && policy.gamma < threshold;

    let mut gamma = policy.gamma;
    let mut state = DrIterate::start(x0.clone());
    let mut trace = MeritTrace::default();
    let mut x_history: Vec<DVector<f64>> = Vec::new();
    if options.keep_x_history {
        x_history.push(state.x.clone());
    }

    let mut prev_merit: Option<f64> = None;
    let mut violation = false;
    let mut status = SolveStatus::MaxIters;

    for _ in 0..options.max_iters {
        let next = dr_step(&state, gamma, f, g)?;
        let finite = next.is_finite();
        let residual = stationarity_residual(&next, gamma, l_lipschitz);
        let need_merit = monitor_merit || options.record_trace;
        let merit_now = if need_merit && finite {
            merit(&next.y, &next.z, &next.x, gamma, f, g)
        } else {
            f64::NAN
        };

        // `state` holds the previous iterate; its y/z are meaningful once
        // at least one step has completed.
        let has_prev = state.t >= 1;

        if options.record_trace {
            if has_prev {
                if let Some(last) = trace.records.last_mut() {
                    last.dy = (&next.y - &state.y).norm();
                }
            }
            trace.records.push(TraceRecord {
                t: next.t,
                merit: merit_now,
                dy: f64::NAN,
                dx: (&next.x - &next.prev_x).norm(),
                yz_gap: (&next.y - &next.z).norm(),
                residual,
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

        if monitor_merit {
            if let Some(prev) = prev_merit {
                if merit_now > prev + MERIT_SLACK * (1.0 + prev.abs()) {
                    violation = true;
                }
            }
            prev_merit = Some(merit_now);
        }

        if has_prev {
            let dx = (&next.x - &state.x).norm();
            let dy = (&next.y - &state.y).norm();
            let dz = (&next.z - &state.z).norm();
            let denom = state.x.norm().max(state.y.norm()).max(state.z.norm()).max(1.0);
            if dx.max(dy).max(dz) / denom < options.tol && residual <= options.residual_tol {
                status = SolveStatus::Converged;
                state = next;
                break;
            }
            if policy.mode == GammaMode::Adaptive
                && gamma > policy.gamma0
                && (dy > policy.trigger_c0 / next.t as f64 || next.y.norm() > policy.trigger_c1)
            {
                gamma = (gamma * policy.shrink_factor).max(policy.floor_factor * policy.gamma0);
            }
        } else if policy.mode == GammaMode::Adaptive
            && gamma > policy.gamma0
            && next.y.norm() > policy.trigger_c1
        {
            gamma = (gamma * policy.shrink_factor).max(policy.floor_factor * policy.gamma0);
        }

        state = next;
    }

    if violation && status != SolveStatus::Diverged {
        status = SolveStatus::MeritViolation;
    }

    let final_residual = if state.t >= 1 {
        stationarity_residual(&state, gamma, l_lipschitz)
    } else {
        f64::NAN
    };
    let final_objective = if state.t >= 1 {
        f.value(&state.z) + g.value(&state.z)
    } else {
        f64::NAN
    };
    Ok(SolveReport {
        status,
        iterations: state.t,
        final_residual,
        final_objective,
        final_gamma: gamma,
        trace: options.record_trace.then_some(trace),
        x_history: options.keep_x_history.then_some(x_history),
        final_iterate: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{Indicator, Quadratic, Zero};
    use crate::sets::SparseBoxSet;
    use approx::assert_relative_eq;
    
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn gamma_threshold_reference_values() {
        let t = gamma_threshold(1.0, 0.0).unwrap();
        assert_relative_eq!(t, (1.5_f64).sqrt() - 1.0, epsilon = 1e-12);
        let t = gamma_threshold(1.0, -1.0).unwrap();
        assert_relative_eq!(t, 1.0, epsilon = 1e-12);
        let t = gamma_threshold(2.0, 0.0).unwrap();
        assert_relative_eq!(t, ((1.5_f64).sqrt() - 1.0) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn gamma_threshold_cross_checked_by_bisection() {
        // The decrease condition h(gamma) = (1+gamma L)^2 + 2.5 gamma l - 1.5
        // changes sign exactly at the returned root.
        let cases = [(1.0, 0.0), (2.0, 0.0), (1.0, -1.0), (3.0, 1.5), (0.5, 0.25)];
        for (l_lip, curv) in cases {
            let h = |gamma: f64| {
                let one_plus = 1.0 + gamma * l_lip;
                one_plus * one_plus + 2.5 * gamma * curv - 1.5
            };
            let (mut lo, mut hi) = (0.0, 10.0 / l_lip);
            assert!(h(lo) < 0.0 && h(hi) > 0.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if h(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let root = gamma_threshold(l_lip, curv).unwrap();
            assert_relative_eq!(root, lo, epsilon = 1e-10, max_relative = 1e-10);
            assert!(root <= 1.0 / l_lip + 1e-12);
        }
    }

    #[test]
    fn gamma_threshold_rejects_bad_constants() {
        assert!(gamma_threshold(0.0, 0.0).is_err());
        assert!(gamma_threshold(-1.0, 0.0).is_err());
        assert!(gamma_threshold(1.0, -1.5).is_err());
    }

    #[test]
    fn decrease_constant_reference_values() {
        assert_relative_eq!(decrease_constant(0.1, 1.0, 0.0).unwrap(), 2.9, epsilon = 1e-12);
        assert_relative_eq!(decrease_constant(0.2, 1.0, 0.0).unwrap(), 0.3, epsilon = 1e-12);
        // K -> 0 as gamma approaches the threshold.
        let t = gamma_threshold(1.0, 0.0).unwrap();
        let k = decrease_constant(t * (1.0 - 1e-9), 1.0, 0.0).unwrap();
        assert!(k > 0.0 && k < 1e-7);
        assert!(decrease_constant(t, 1.0, 0.0).is_err());
        assert!(decrease_constant(t * 1.01, 1.0, 0.0).is_err());
    }

    #[test]
    fn merit_forms_agree_and_reduce_when_coupled_terms_vanish() {
        let f2 = Quadratic::new(DVector::from_vec(vec![1.0, -2.0]));
        let g = Zero;
        let y = DVector::from_vec(vec![0.5, 0.7]);
        // y = z = x leaves only f(y) + g(y).
        let d = merit(&y, &y, &y, 0.3, &f2, &g);
        assert_relative_eq!(d, f2.value(&y), epsilon = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Quadratic::new(randn_vec(&mut rng, 4));
        for _ in 0..200 {
            let y = randn_vec(&mut rng, 4) * 3.0;
            let z = randn_vec(&mut rng, 4) * 3.0;
            let x = randn_vec(&mut rng, 4) * 3.0;
            let gamma = rng.gen_range(0.01..5.0);
            let a = merit(&y, &z, &x, gamma, &f, &g);
            let b = merit_via_expansion(&y, &z, &x, gamma, &f, &g);
            let c = merit_via_squares(&y, &z, &x, gamma, &f, &g);
            let scale = a.abs().max(1.0);
            assert!((a - b).abs() <= 1e-12 * scale);
            assert!((a - c).abs() <= 1e-12 * scale);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn merit_forms_agree(
                ys in proptest::collection::vec(-5.0_f64..5.0, 4),
                zs in proptest::collection::vec(-5.0_f64..5.0, 4),
                xs in proptest::collection::vec(-5.0_f64..5.0, 4),
                gamma in 0.01_f64..5.0,
            ) {
                let f = Quadratic::new(DVector::zeros(4));
                let g = Zero;
                let y = DVector::from_vec(ys);
                let z = DVector::from_vec(zs);
                let x = DVector::from_vec(xs);
                let a = merit(&y, &z, &x, gamma, &f, &g);
                let b = merit_via_expansion(&y, &z, &x, gamma, &f, &g);
                let c = merit_via_squares(&y, &z, &x, gamma, &f, &g);
                let scale = a.abs().max(1.0);
                prop_assert!((a - b).abs() <= 1e-12 * scale);
                prop_assert!((a - c).abs() <= 1e-12 * scale);
            }

            #[test]
            fn step_preserves_update_identity(
                x0 in proptest::collection::vec(-5.0_f64..5.0, 4),
                center in proptest::collection::vec(-2.0_f64..2.0, 4),
                gamma in 0.01_f64..0.22,
            ) {
                let f = Quadratic::new(DVector::from_vec(center));
                let g = Zero;
                let state = DrIterate::start(DVector::from_vec(x0));
                let next = dr_step(&state, gamma, &f, &g).unwrap();
                let recomputed = &state.x + (&next.z - &next.y);
                prop_assert_eq!(next.x, recomputed);
                prop_assert!(
                    y_update_residual(&f, &next.y, &state.x, gamma)
                        <= 1e-9 * (1.0 + state.x.norm())
                );
            }
        }
    }

    #[test]
    fn merit_propagates_infinity() {
        let f = Zero;
        let pts = vec![DVector::from_vec(vec![0.0, 0.0])];
        let set = crate::sets::FinitePointSet::new(pts).unwrap();
        let g = Indicator::new(&set);
        let off = DVector::from_vec(vec![1.0, 1.0]);
        let d = merit(&off, &off, &off, 0.2, &f, &g);
        assert_eq!(d, f64::INFINITY);
    }

    #[test]
    fn dr_step_identity_for_zero_functions() {
        let f = Zero;
        let g = Zero;
        let x0 = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let state = DrIterate::start(x0.clone());
        let next = dr_step(&state, 0.7, &f, &g).unwrap();
        assert_eq!(next.y, x0);
        assert_eq!(next.z, x0);
        assert_eq!(next.x, x0);
    }

    #[test]
    fn dr_step_update_identity_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = Quadratic::new(randn_vec(&mut rng, 5));
        let set = SparseBoxSet::new(5, 2, 1e6).unwrap();
        let g = Indicator::new(&set);
        let mut state = DrIterate::start(randn_vec(&mut rng, 5) * 3.0);
        for _ in 0..10 {
            let next = dr_step(&state, 0.15, &f, &g).unwrap();
            // x_new was computed as x + (z - y); recomputing in the same
            // order reproduces it bit for bit.
            let recomputed = &state.x + (&next.z - &next.y);
            assert_eq!(next.x, recomputed);
            state = next;
        }
    }

    #[test]
    fn dr_step_inner_solve_matches_exact_prox() {
        // Hide the closed-form prox behind a wrapper to force the inner
        // gradient solve, then compare against the closed form.
        struct NoProx(Quadratic);
        impl Smooth for NoProx {
            fn value(&self, u: &DVector<f64>) -> f64 {
                self.0.value(u)
            }
            fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
                self.0.gradient(u)
            }
            fn lipschitz(&self) -> f64 {
                self.0.lipschitz()
            }
            fn curvature(&self) -> f64 {
                self.0.curvature()
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let center = randn_vec(&mut rng, 4);
        let with_prox = Quadratic::new(center.clone());
        let without = NoProx(Quadratic::new(center));
        let g = Zero;
        let x0 = randn_vec(&mut rng, 4) * 2.0;
        let a = dr_step(&DrIterate::start(x0.clone()), 0.2, &with_prox, &g).unwrap();
        let b = dr_step(&DrIterate::start(x0.clone()), 0.2, &without, &g).unwrap();
        assert!((a.y - &b.y).norm() <= 1e-10);
        assert!(y_update_residual(&without, &b.y, &x0, 0.2) <= 1e-9 * (1.0 + x0.norm()));
    }

    #[test]
    fn stationarity_residual_values() {
        let mut state = DrIterate::start(DVector::zeros(2));
        state.t = 1;
        state.y = DVector::from_vec(vec![1.0, 0.0]);
        state.z = state.y.clone();
        assert_eq!(stationarity_residual(&state, 0.2, 1.0), 0.0);
        state.z = DVector::from_vec(vec![1.0, 1e-4]);
        assert_relative_eq!(
            stationarity_residual(&state, 0.2, 1.0),
            6e-4,
            epsilon = 1e-16
        );
    }

    #[test]
    fn solve_quadratic_reaches_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let center = randn_vec(&mut rng, 6);
        let f = Quadratic::new(center.clone());
        let g = Zero;
        let report = solve(
            &f,
            &g,
            &randn_vec(&mut rng, 6),
            &GammaPolicy::fixed(0.2),
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(report.status, SolveStatus::Converged);
        assert!((report.final_iterate.z - &center).norm() <= 1e-6);
        assert!(report.final_residual <= 1e-6);
    }

    #[test]
    fn solve_reports_divergence_on_nonfinite() {
        struct Explodes;
        impl Smooth for Explodes {
            fn value(&self, _u: &DVector<f64>) -> f64 {
                f64::NAN
            }
            fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
                DVector::from_element(u.len(), f64::NAN)
            }
            fn lipschitz(&self) -> f64 {
                1.0
            }
            fn curvature(&self) -> f64 {
                0.0
            }
            fn exact_prox(&self, z: &DVector<f64>, _gamma: f64) -> Option<DVector<f64>> {
                Some(DVector::from_element(z.len(), f64::NAN))
            }
        }
        let report = solve(
            &Explodes,
            &Zero,
            &DVector::zeros(3),
            &GammaPolicy::fixed(0.1),
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(report.status, SolveStatus::Diverged);
    }

    #[test]
    fn fixed_mode_merit_monotone_on_random_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let f = Quadratic::new(randn_vec(&mut rng, 5));
            let set = SparseBoxSet::new(5, 2, 1e6).unwrap();
            let g = Indicator::new(&set);
            let opts = SolverOptions {
                record_trace: true,
                ..Default::default()
            };
            let report = solve(
                &f,
                &g,
                &(randn_vec(&mut rng, 5) * 2.0),
                &GammaPolicy::fixed(0.1),
                &opts,
            )
            .unwrap();
            assert_ne!(report.status, SolveStatus::MeritViolation);
            let trace = report.trace.unwrap();
            let k = decrease_constant(0.1, 1.0, 0.0).unwrap();
            for w in trace.records.windows(2) {
                let (a, b) = (&w[0], &w[1]);
                assert!(b.merit <= a.merit + MERIT_SLACK * (1.0 + a.merit.abs()));
                if a.dy.is_finite() {
                    // Quantified decrease per squared y-step.
                    assert!(a.merit - b.merit >= k * a.dy * a.dy - 1e-10);
                }
            }
        }
    }

    #[test]
    fn step_norm_coupling_on_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f = Quadratic::new(randn_vec(&mut rng, 4));
        let g = Zero;
        let gamma = 0.15;
        let opts = SolverOptions {
            record_trace: true,
            ..Default::default()
        };
        let report = solve(
            &f,
            &g,
            &(randn_vec(&mut rng, 4) * 3.0),
            &GammaPolicy::fixed(gamma),
            &opts,
        )
        .unwrap();
        let trace = report.trace.unwrap();
        for r in &trace.records {
            if r.dy.is_finite() && r.t >= 1 {
                assert!(r.dx <= (1.0 + gamma * f.lipschitz()) * r.dy + 1e-10);
            }
        }
    }

    #[test]
    fn merit_gradient_bound_observed_on_smooth_run() {
        // With g = 0 the merit is differentiable; its gradient norm stays
        // below tau times the next y-step.
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let f = Quadratic::new(randn_vec(&mut rng, 5));
        let g = Zero;
        let gamma = 0.2;
        let tau = merit_gradient_bound(gamma, f.lipschitz());
        assert_relative_eq!(
            merit_gradient_bound(1.0, 1.0),
            2.0 * 3.0_f64.sqrt(),
            epsilon = 1e-12
        );
        // Large-step limit tends to sqrt(3) * L.
        assert_relative_eq!(
            merit_gradient_bound(1e12, 2.0),
            3.0_f64.sqrt() * 2.0,
            max_relative = 1e-9
        );
        let mut state = DrIterate::start(randn_vec(&mut rng, 5) * 3.0);
        for _ in 0..60 {
            let next = dr_step(&state, gamma, &f, &g).unwrap();
            if state.t >= 1 {
                // Gradient of the merit at `state`, bounded by tau times
                // the step to the next y-iterate.
                let (y, z, x) = (&state.y, &state.z, &state.x);
                let gy = f.gradient(y) - (y - z) / gamma + (2.0 * y - x - z) / gamma;
                let gz = (x - z) / gamma;
                let gx = (z - y) / gamma;
                let grad_norm =
                    (gy.norm_squared() + gz.norm_squared() + gx.norm_squared()).sqrt();
                let dy = (&next.y - &state.y).norm();
                assert!(grad_norm <= tau * dy + 1e-12);
            }
            state = next;
        }
    }

    #[test]
    fn adaptive_gamma_shrinks_toward_floor() {
        // A far-away starting point triggers the norm guard and gamma
        // decays to the floor in finitely many halvings.
        let f = Quadratic::new(DVector::zeros(3));
        let g = Zero;
        let gamma0 = gamma_threshold(1.0, 0.0).unwrap();
        let mut policy = GammaPolicy::adaptive(1.0, 0.0).unwrap();
        policy.trigger_c1 = 1.0; // force the norm trigger
        let report = solve(
            &f,
            &g,
            &DVector::from_element(3, 50.0),
            &policy,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(report.status, SolveStatus::Converged);
        assert!(report.final_gamma <= 150.0 * gamma0);
        assert!(report.final_gamma >= 0.9999 * gamma0 - 1e-15);
    }

    #[test]
    fn trace_csv_round_trip_columns() {
        let trace = MeritTrace {
            records: vec![TraceRecord {
                t: 1,
                merit: 0.5,
                dy: f64::NAN,
                dx: 0.25,
                yz_gap: 0.1,
                residual: 0.6,
                gamma: 0.2,
            }],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,merit,dy,dx,yz_gap,residual,gamma");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 7);
        assert_eq!(row[0], "1");
        assert!(row[2].parse::<f64>().unwrap().is_nan());
    }
}
