//! Projection oracles: affine sets, sparse-box sets, finite point sets,
//! consensus sets, boxes and balls.
//!
//! Every set is immutable after construction and safe to share across
//! threads; projections allocate their output.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Errors raised when constructing or applying a set oracle.
#[derive(Debug, Error)]
pub enum SetError {
    #[error("matrix is rank deficient (numerical rank {rank}, expected {expected})")]
    RankDeficient { rank: usize, expected: usize },
    #[error("system Ax = b is inconsistent (residual {residual:.3e})")]
    Inconsistent { residual: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0}")]
    Invalid(String),
}

/// A closed set with a computable Euclidean projection.
///
/// `project` must return a global nearest point with deterministic
/// tie-breaking so that repeated runs are reproducible.
pub trait Projector: Send + Sync {
    /// Ambient dimension.
    fn dim(&self) -> usize;

    /// Euclidean projection of `x` onto the set.
    fn project(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Membership test, up to the set's own numerical tolerance.
    fn contains(&self, x: &DVector<f64>) -> bool;
}

/// Marker for sets that are convex, so that the squared distance function
/// is smooth and the projection is nonexpansive.
pub trait ConvexProjector: Projector {}

/// The affine set `{x : Ax = b}` with a cached factorization of `A`.
///
/// Construction computes a singular value decomposition once; every
/// projection applies the pseudo-inverse through the stored factors
/// without ever forming the pseudo-inverse matrix.
pub struct AffineSet {
    a: DMatrix<f64>,
    b: DVector<f64>,
    // Thin SVD factors of A: u (m x r), vt (r x n), singular values.
    u: DMatrix<f64>,
    vt: DMatrix<f64>,
    sigma: DVector<f64>,
}

impl AffineSet {
    /// Residual tolerance for the consistency check `‖A A†b − b‖ ≤ tol·(1+‖b‖)`.
    pub const CONSISTENCY_TOL: f64 = 1e-8;

    /// Builds the set, failing on rank-deficient `A` or inconsistent `b`.
    ///
    /// The numerical rank is taken with tolerance `1e-10 · ‖A‖`.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, SetError> {
        let (m, n) = a.shape();
        if b.len() != m {
            return Err(SetError::DimensionMismatch {
                expected: m,
                got: b.len(),
            });
        }
        if m == 0 {
            // No constraints: the whole space. Factors stay empty.
            return Ok(Self {
                a,
                b,
                u: DMatrix::zeros(0, 0),
                vt: DMatrix::zeros(0, n),
                sigma: DVector::zeros(0),
            });
        }
        let svd = a.clone().svd(true, true);
        let u = svd.u.expect("svd requested u");
        let vt = svd.v_t.expect("svd requested v_t");
        let sigma = svd.singular_values;
        let spectral_norm = sigma.max();
        let tol = 1e-10 * spectral_norm;
        let rank = sigma.iter().filter(|&&s| s > tol).count();
        let expected = m.min(n);
        if rank < expected {
            return Err(SetError::RankDeficient { rank, expected });
        }
        let set = Self { a, b, u, vt, sigma };
        let residual = (&set.a * set.pinv_apply(&set.b) - &set.b).norm();
        if residual > Self::CONSISTENCY_TOL * (1.0 + set.b.norm()) {
            return Err(SetError::Inconsistent { residual });
        }
        Ok(set)
    }

    /// The constraint matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// The right-hand side.
    pub fn rhs(&self) -> &DVector<f64> {
        &self.b
    }

    /// Applies the pseudo-inverse `A†w` through the cached factors.
    pub fn pinv_apply(&self, w: &DVector<f64>) -> DVector<f64> {
        if self.a.nrows() == 0 {
            return DVector::zeros(self.a.ncols());
        }
        let mut coeffs = self.u.tr_mul(w);
        for (c, s) in coeffs.iter_mut().zip(self.sigma.iter()) {
            *c /= s;
        }
        self.vt.tr_mul(&coeffs)
    }

    /// The orthogonal projection matrix `A†A` onto the row space of `A`.
    pub fn row_space_projector(&self) -> DMatrix<f64> {
        let n = self.a.ncols();
        if self.a.nrows() == 0 {
            return DMatrix::zeros(n, n);
        }
        let mut p = self.vt.tr_mul(&self.vt);
        // Force bit-exact symmetry of the product.
        for i in 0..n {
            for j in 0..i {
                let v = p[(j, i)];
                p[(i, j)] = v;
            }
        }
        p
    }
}

impl Projector for AffineSet {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.a.nrows() == 0 {
            return x.clone();
        }
        let residual = &self.a * x - &self.b;
        x - self.pinv_apply(&residual)
    }

    fn contains(&self, x: &DVector<f64>) -> bool {
        if self.a.nrows() == 0 {
            return true;
        }
        (&self.a * x - &self.b).norm() <= Self::CONSISTENCY_TOL * (1.0 + self.b.norm())
    }
}

impl ConvexProjector for AffineSet {}

/// Exact proximal point of `f = ½ d_C²` at parameter `gamma`:
/// `(x + γ P_C(x)) / (1 + γ)`.
pub fn prox_half_sqdist<S: ConvexProjector + ?Sized>(
    set: &S,
    x: &DVector<f64>,
    gamma: f64,
) -> DVector<f64> {
    (x + gamma * set.project(x)) / (1.0 + gamma)
}

/// Gradient of `½ d_C²` at `x`, namely `x − P_C(x)`.
///
/// The gradient Lipschitz modulus is 1 and the function is convex, so the
/// matching smoothness constants are `L = 1`, `l = 0`.
pub fn grad_half_sqdist<S: ConvexProjector + ?Sized>(set: &S, x: &DVector<f64>) -> DVector<f64> {
    x - set.project(x)
}

/// Value of `½ d_C²(x)`.
pub fn half_sqdist<S: Projector + ?Sized>(set: &S, x: &DVector<f64>) -> f64 {
    0.5 * (x - set.project(x)).norm_squared()
}

/// The sparse box `{z : ‖z‖₀ ≤ r, ‖z‖∞ ≤ bound}`.
pub struct SparseBoxSet {
    n: usize,
    r: usize,
    bound: f64,
}

impl SparseBoxSet {
    /// Cap used by the benchmark instances; large enough never to bind on
    /// Gaussian data while keeping the set compact.
    pub const DEFAULT_BOUND: f64 = 1e6;

    pub fn new(n: usize, r: usize, bound: f64) -> Result<Self, SetError> {
        if r == 0 || r > n {
            return Err(SetError::Invalid(format!(
                "sparsity level r = {r} must satisfy 1 <= r <= n = {n}"
            )));
        }
        if bound.is_nan() || bound <= 0.0 {
            return Err(SetError::Invalid(format!("bound {bound} must be positive")));
        }
        Ok(Self { n, r, bound })
    }

    pub fn with_default_bound(n: usize, r: usize) -> Result<Self, SetError> {
        Self::new(n, r, Self::DEFAULT_BOUND)
    }

    pub fn sparsity(&self) -> usize {
        self.r
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }
}

impl Projector for SparseBoxSet {
    fn dim(&self) -> usize {
        self.n
    }

    /// Keeps the `r` coordinates of largest magnitude (ties to the lowest
    /// index), clips each kept coordinate to `[-bound, bound]`, zeros the
    /// rest. Selecting the support first and clipping second is globally
    /// optimal for a symmetric box.
    fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut idx: Vec<usize> = (0..self.n).collect();
        idx.sort_by(|&i, &j| x[j].abs().total_cmp(&x[i].abs()).then(i.cmp(&j)));
        let mut z = DVector::zeros(self.n);
        for &i in idx.iter().take(self.r) {
            z[i] = x[i].clamp(-self.bound, self.bound);
        }
        z
    }

    fn contains(&self, x: &DVector<f64>) -> bool {
        let nnz = x.iter().filter(|&&v| v != 0.0).count();
        nnz <= self.r && x.iter().all(|&v| v.abs() <= self.bound)
    }
}

/// The consensus set of stacked vectors `(x_1, …, x_M)` with all blocks
/// equal, optionally with the common block confined to a ball of radius
/// `R` around the origin.
pub struct ConsensusSet {
    blocks: usize,
    block_dim: usize,
    radius: Option<f64>,
}

impl ConsensusSet {
    pub fn new(blocks: usize, block_dim: usize, radius: Option<f64>) -> Result<Self, SetError> {
        if blocks < 2 {
            return Err(SetError::Invalid(format!(
                "consensus set needs at least 2 blocks, got {blocks}"
            )));
        }
        if let Some(r) = radius {
            if r.is_nan() || r <= 0.0 {
                return Err(SetError::Invalid(format!("radius {r} must be positive")));
            }
        }
        Ok(Self {
            blocks,
            block_dim,
            radius,
        })
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }
}

impl Projector for ConsensusSet {
    fn dim(&self) -> usize {
        self.blocks * self.block_dim
    }

    /// Averages the blocks, clips the mean to the radius when present,
    /// and tiles it; the output blocks are bit-identical.
    fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.dim(), "consensus projection dimension");
        let mut mean = DVector::zeros(self.block_dim);
        for k in 0..self.blocks {
            mean += x.rows(k * self.block_dim, self.block_dim);
        }
        mean /= self.blocks as f64;
        if let Some(r) = self.radius {
            let norm = mean.norm();
            if norm > r {
                mean *= r / norm;
            }
        }
        let mut z = DVector::zeros(self.dim());
        for k in 0..self.blocks {
            z.rows_mut(k * self.block_dim, self.block_dim)
                .copy_from(&mean);
        }
        z
    }

    fn contains(&self, x: &DVector<f64>) -> bool {
        let first = x.rows(0, self.block_dim);
        for k in 1..self.blocks {
            if x.rows(k * self.block_dim, self.block_dim) != first {
                return false;
            }
        }
        match self.radius {
            Some(r) => first.norm() <= r * (1.0 + 1e-12),
            None => true,
        }
    }
}

impl ConvexProjector for ConsensusSet {}

/// A finite set of points; projection returns the nearest member, ties
/// broken by the lowest index.
pub struct FinitePointSet {
    points: Vec<DVector<f64>>,
}

impl FinitePointSet {
    pub fn new(points: Vec<DVector<f64>>) -> Result<Self, SetError> {
        let Some(first) = points.first() else {
            return Err(SetError::Invalid(
                "finite set needs at least one point".into(),
            ));
        };
        let n = first.len();
        if points.iter().any(|p| p.len() != n) {
            return Err(SetError::Invalid(
                "finite set points differ in dimension".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }
}

impl Projector for FinitePointSet {
    fn dim(&self) -> usize {
        self.points[0].len()
    }

    fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut best = 0;
        let mut best_d = (x - &self.points[0]).norm_squared();
        for (i, p) in self.points.iter().enumerate().skip(1) {
            let d = (x - p).norm_squared();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        self.points[best].clone()
    }

    fn contains(&self, x: &DVector<f64>) -> bool {
        self.points.iter().any(|p| p == x)
    }
}

/// The box `{x : lower ≤ x ≤ upper}` (componentwise).
pub struct BoxSet {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, SetError> {
        if lower.len() != upper.len() {
            return Err(SetError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(SetError::Invalid("box has lower > upper".into()));
        }
        Ok(Self { lower, upper })
    }
}

impl Projector for BoxSet {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| x[i].clamp(self.lower[i], self.upper[i]))
    }

    fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }
}

impl ConvexProjector for BoxSet {}

/// The closed ball `{x : ‖x − center‖ ≤ radius}`.
pub struct BallSet {
    center: DVector<f64>,
    radius: f64,
}

impl BallSet {
    pub fn new(center: DVector<f64>, radius: f64) -> Result<Self, SetError> {
        if radius.is_nan() || radius <= 0.0 {
            return Err(SetError::Invalid(format!(
                "radius {radius} must be positive"
            )));
        }
        Ok(Self { center, radius })
    }
}

impl Projector for BallSet {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = x - &self.center;
        let norm = d.norm();
        if norm <= self.radius {
            x.clone()
        } else {
            &self.center + d * (self.radius / norm)
        }
    }

    fn contains(&self, x: &DVector<f64>) -> bool {
        (x - &self.center).norm() <= self.radius * (1.0 + 1e-12)
    }
}

impl ConvexProjector for BallSet {}

/// Cartesian product of sets, projected blockwise.
pub struct BlockProductSet {
    sets: Vec<Box<dyn Projector>>,
    offsets: Vec<usize>,
    total: usize,
}

impl BlockProductSet {
    pub fn new(sets: Vec<Box<dyn Projector>>) -> Result<Self, SetError> {
        if sets.is_empty() {
            return Err(SetError::Invalid("product of zero sets".into()));
        }
        let mut offsets = Vec::with_capacity(sets.len());
        let mut total = 0;
        for s in &sets {
            offsets.push(total);
            total += s.dim();
        }
        Ok(Self {
            sets,
            offsets,
            total,
        })
    }
}

impl Projector for BlockProductSet {
    fn dim(&self) -> usize {
        self.total
    }

    fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.total, "product projection dimension");
        let mut z = DVector::zeros(self.total);
        for (s, &off) in self.sets.iter().zip(&self.offsets) {
            let block = DVector::from(x.rows(off, s.dim()).clone_owned());
            z.rows_mut(off, s.dim()).copy_from(&s.project(&block));
        }
        z
    }

    fn contains(&self, x: &DVector<f64>) -> bool {
        self.sets.iter().zip(&self.offsets).all(|(s, &off)| {
            let block = DVector::from(x.rows(off, s.dim()).clone_owned());
            s.contains(&block)
        })
    }
}
