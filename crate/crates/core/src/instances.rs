//! Reproducible problem instances: random sparse linear systems, random
//! transverse subspaces, the analytic hyperplane/three-point problem, and
//! brute-force oracles used by property tests.
//!
//! All randomness flows through a ChaCha8 generator seeded from explicit
//! 64-bit seeds, so instances are bit-reproducible across runs and across
//! batch sizes. Batch code derives per-trial seeds with [`derive_seed`]
//! rather than sharing one stream.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::sets::{AffineSet, SetError};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("invalid dimensions: {0}")]
    Domain(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Set(#[from] SetError),
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives an independent per-trial seed from a base seed and the cell
/// coordinates, so that trial `k` of cell `(m, n)` is reproducible no
/// matter how many other trials run.
pub fn derive_seed(base: u64, m: usize, n: usize, trial: usize) -> u64 {
    let mut s = mix64(base);
    s = mix64(s ^ (m as u64));
    s = mix64(s ^ (n as u64));
    s = mix64(s ^ (trial as u64));
    s
}

fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// A random linear system with a planted sparse solution.
#[derive(Debug, Clone)]
pub struct SparseInstance {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Sparsity level `r = ⌈m/5⌉`.
    pub r: usize,
    /// The planted solution with exactly `r` nonzeros; `b = A · planted`.
    pub planted: DVector<f64>,
    pub seed: u64,
}

impl SparseInstance {
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    /// Writes the instance as a plain text container: a header line
    /// `m n r seed`, then `A` row-major, then `b`, then the planted
    /// vector, one value per line in shortest round-trip decimal form.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), InstanceError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{} {} {} {}", self.m(), self.n(), self.r, self.seed)?;
        for i in 0..self.m() {
            for j in 0..self.n() {
                writeln!(w, "{}", self.a[(i, j)])?;
            }
        }
        for v in self.b.iter() {
            writeln!(w, "{v}")?;
        }
        for v in self.planted.iter() {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    /// Reads an instance written by [`SparseInstance::save`].
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, InstanceError> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| InstanceError::Parse("empty file".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(InstanceError::Parse(format!(
                "header needs 4 fields, got {}",
                fields.len()
            )));
        }
        let m: usize = fields[0]
            .parse()
            .map_err(|e| InstanceError::Parse(format!("m: {e}")))?;
        let n: usize = fields[1]
            .parse()
            .map_err(|e| InstanceError::Parse(format!("n: {e}")))?;
        let r: usize = fields[2]
            .parse()
            .map_err(|e| InstanceError::Parse(format!("r: {e}")))?;
        let seed: u64 = fields[3]
            .parse()
            .map_err(|e| InstanceError::Parse(format!("seed: {e}")))?;
        let mut values = Vec::with_capacity(m * n + m + n);
        for line in lines {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            values.push(
                trimmed
                    .parse::<f64>()
                    .map_err(|e| InstanceError::Parse(format!("value: {e}")))?,
            );
        }
        if values.len() != m * n + m + n {
            return Err(InstanceError::Parse(format!(
                "expected {} values, got {}",
                m * n + m + n,
                values.len()
            )));
        }
        let a = DMatrix::from_row_slice(m, n, &values[..m * n]);
        let b = DVector::from_column_slice(&values[m * n..m * n + m]);
        let planted = DVector::from_column_slice(&values[m * n + m..]);
        Ok(Self {
            a,
            b,
            r,
            planted,
            seed,
        })
    }
}

/// Generates an `m × n` standard Gaussian system with a planted solution
/// of sparsity `r = ⌈m/5⌉`. Draw order: `A` row-major, then the `r`
/// nonzero values, then the support by a seeded partial shuffle of the
/// index range (uniform without replacement). Deterministic in
/// `(m, n, seed)`.
pub fn gen_sparse_instance(m: usize, n: usize, seed: u64) -> Result<SparseInstance, InstanceError> {
    if m < 5 {
        return Err(InstanceError::Domain(format!("m = {m} must be at least 5")));
    }
    if m > n {
        return Err(InstanceError::Domain(format!("m = {m} must not exceed n = {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fill row-major so the draw order matches the container file layout.
    let mut a = DMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let r = m.div_ceil(5);
    let values = randn_vec(&mut rng, r);
    let mut indices: Vec<usize> = (0..n).collect();
    let (support, _) = indices.partial_shuffle(&mut rng, r);
    let mut planted = DVector::zeros(n);
    for (k, &j) in support.iter().enumerate() {
        planted[j] = values[k];
    }
    let b = &a * &planted;
    Ok(SparseInstance {
        a,
        b,
        r,
        planted,
        seed,
    })
}

/// Two random subspaces of `ℝⁿ` through the origin with dimensions `d1`
/// and `d2`, returned as affine sets. With `d1 + d2 > n` they intersect in
/// a subspace of dimension `d1 + d2 − n` almost surely, in generic
/// position; useful for empirical linear-rate studies.
pub fn gen_transverse_subspaces(
    n: usize,
    d1: usize,
    d2: usize,
    seed: u64,
) -> Result<(AffineSet, AffineSet), InstanceError> {
    if d1 > n || d2 > n {
        return Err(InstanceError::Domain(format!(
            "subspace dims ({d1}, {d2}) must not exceed n = {n}"
        )));
    }
    if d1 + d2 <= n {
        return Err(InstanceError::Domain(format!(
            "need d1 + d2 > n for a nontrivial intersection, got {d1} + {d2} <= {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m1 = n - d1;
    let m2 = n - d2;
    let a1 = DMatrix::from_fn(m1, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a2 = DMatrix::from_fn(m2, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s1 = AffineSet::new(a1, DVector::zeros(m1))?;
    let s2 = AffineSet::new(a2, DVector::zeros(m2))?;
    Ok((s1, s2))
}

/// The analytic toy problem: `C` is the horizontal axis of the plane and
/// `D` holds the three points `(0,0)`, `(7+η, η)`, `(7, −η)`.
///
/// Started from `(7, η)` with a small step size, the damped splitting
/// iteration converges to `y* = z* = (7+η, η)`; the classical
/// indicator-sum iteration cycles instead.
#[derive(Debug, Clone)]
pub struct ThreePointProblem {
    pub eta: f64,
}

impl ThreePointProblem {
    pub fn new(eta: f64) -> Result<Self, InstanceError> {
        if eta.is_nan() || eta <= 0.0 || eta > 1.0 {
            return Err(InstanceError::Domain(format!(
                "eta = {eta} must lie in (0, 1]"
            )));
        }
        Ok(Self { eta })
    }

    /// The convex set: the hyperplane `x₂ = 0`.
    pub fn line(&self) -> AffineSet {
        let a = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        AffineSet::new(a, DVector::zeros(1)).expect("hyperplane is full rank")
    }

    /// The three candidate points.
    pub fn points(&self) -> Vec<DVector<f64>> {
        vec![
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![7.0 + self.eta, self.eta]),
            DVector::from_vec(vec![7.0, -self.eta]),
        ]
    }

    /// The documented starting point `(7, η)`.
    pub fn start(&self) -> DVector<f64> {
        DVector::from_vec(vec![7.0, self.eta])
    }

    /// The limit of the damped iteration: `y* = z*` and the governing
    /// point `x*`.
    pub fn limit(&self, gamma: f64) -> (DVector<f64>, DVector<f64>) {
        let yz = DVector::from_vec(vec![7.0 + self.eta, self.eta]);
        let x = DVector::from_vec(vec![7.0 + self.eta, (1.0 + gamma) * self.eta]);
        (yz, x)
    }
}

/// An iterate triple `(y, z, x)`.
pub type IterateTriple = (DVector<f64>, DVector<f64>, DVector<f64>);

/// Closed-form iterates of the damped splitting iteration on
/// [`ThreePointProblem`], indexed from `t = 1`.
///
/// The second coordinate of the governing sequence follows
/// `a_{t+1} = γ a_t / (1+γ) + 1` with `a_1 = 2 − 1/(1+γ)`, which converges
/// to `1 + γ`:
///
/// - `t = 1`: `y = (7, η/(1+γ))`, `z = (7+η, η)`, `x = (7+η, a₁ η)`;
/// - `t ≥ 2`: `y = (7+η, a_{t−1} η/(1+γ))`, `z = (7+η, η)`,
///   `x = (7+η, a_t η)`.
pub fn three_point_reference(
    eta: f64,
    gamma: f64,
    t: usize,
) -> Result<IterateTriple, InstanceError> {
    if eta.is_nan() || eta <= 0.0 || eta > 1.0 {
        return Err(InstanceError::Domain(format!("eta = {eta} must lie in (0, 1]")));
    }
    let gamma_max = (1.5_f64).sqrt() - 1.0;
    if gamma.is_nan() || gamma <= 0.0 || gamma >= gamma_max {
        return Err(InstanceError::Domain(format!(
            "gamma = {gamma} must lie in (0, {gamma_max})"
        )));
    }
    if t < 1 {
        return Err(InstanceError::Domain("iteration index starts at 1".into()));
    }
    let a1 = 2.0 - 1.0 / (1.0 + gamma);
    if t == 1 {
        let y = DVector::from_vec(vec![7.0, eta / (1.0 + gamma)]);
        let z = DVector::from_vec(vec![7.0 + eta, eta]);
        let x = DVector::from_vec(vec![7.0 + eta, a1 * eta]);
        return Ok((y, z, x));
    }
    let mut a_prev = a1; // a_{t-1}
    for _ in 2..t {
        a_prev = gamma * a_prev / (1.0 + gamma) + 1.0;
    }
    let a_t = gamma * a_prev / (1.0 + gamma) + 1.0;
    let y = DVector::from_vec(vec![7.0 + eta, a_prev * eta / (1.0 + gamma)]);
    let z = DVector::from_vec(vec![7.0 + eta, eta]);
    let x = DVector::from_vec(vec![7.0 + eta, a_t * eta]);
    Ok((y, z, x))
}

/// Exhaustive projection onto `{‖z‖₀ ≤ r, ‖z‖∞ ≤ bound}` by enumerating
/// every support of size at most `r` in lexicographic order, clipping on
/// each, and keeping the first distance minimizer. Guarded to `n ≤ 12`.
/// This is the independent oracle that certifies the fast projection.
pub fn brute_force_sparse_proj(
    x: &DVector<f64>,
    r: usize,
    bound: f64,
) -> Result<DVector<f64>, InstanceError> {
    let n = x.len();
    if n > 12 {
        return Err(InstanceError::Domain(format!(
            "brute force guard: n = {n} exceeds 12"
        )));
    }
    if r == 0 {
        return Err(InstanceError::Domain("r must be at least 1".into()));
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut support: Vec<usize> = Vec::with_capacity(r.min(n));

    fn consider(
        x: &DVector<f64>,
        support: &[usize],
        bound: f64,
        best: &mut Option<(f64, DVector<f64>)>,
    ) {
        let mut z = DVector::zeros(x.len());
        for &i in support {
            z[i] = x[i].clamp(-bound, bound);
        }
        let d = (x - &z).norm_squared();
        match best {
            Some((bd, _)) if d >= *bd => {}
            _ => *best = Some((d, z)),
        }
    }

    fn recurse(
        x: &DVector<f64>,
        r: usize,
        bound: f64,
        start: usize,
        support: &mut Vec<usize>,
        best: &mut Option<(f64, DVector<f64>)>,
    ) {
        consider(x, support, bound, best);
        if support.len() == r {
            return;
        }
        for i in start..x.len() {
            support.push(i);
            recurse(x, r, bound, i + 1, support, best);
            support.pop();
        }
    }

    recurse(x, r.min(n), bound, 0, &mut support, &mut best);
    Ok(best.expect("at least the empty support was considered").1)
}
