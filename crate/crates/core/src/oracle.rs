//! Function oracles consumed by the splitting solver: a smooth term with a
//! Lipschitz gradient and a proper closed term with a computable proximal
//! map.

use nalgebra::DVector;

use crate::sets::{half_sqdist, prox_half_sqdist, ConvexProjector, Projector};

/// A smooth function `f` with Lipschitz-continuous gradient.
///
/// `lipschitz` returns an upper bound `L` on the gradient modulus, and
/// `curvature` returns any `l` such that `f + (l/2)‖·‖²` is convex. Taking
/// `l = L` is always valid; smaller values allow larger step sizes.
pub trait Smooth: Send + Sync {
    fn value(&self, u: &DVector<f64>) -> f64;

    fn gradient(&self, u: &DVector<f64>) -> DVector<f64>;

    /// Upper bound on the gradient Lipschitz modulus; must be positive.
    fn lipschitz(&self) -> f64;

    /// Any `l` with `f + (l/2)‖·‖²` convex; lies in `[-L, L]`.
    fn curvature(&self) -> f64;

    /// Exact minimizer of `f(u) + ‖u − z‖²/(2γ)` when available in closed
    /// form; the solver falls back to an inner iterative solve otherwise.
    fn exact_prox(&self, _z: &DVector<f64>, _gamma: f64) -> Option<DVector<f64>> {
        None
    }
}

/// A proper closed function `g` (possibly extended-real-valued) whose
/// proximal map returns a global minimizer with deterministic tie-breaking.
pub trait Prox: Send + Sync {
    /// Extended-real value; `f64::INFINITY` encodes points outside the
    /// domain.
    fn value(&self, u: &DVector<f64>) -> f64;

    /// A global minimizer of `γ g(u) + ½‖u − z‖²`.
    fn prox(&self, z: &DVector<f64>, gamma: f64) -> DVector<f64>;
}

/// The quadratic `½‖u − center‖²` with `L = 1`, `l = 0` and a closed-form
/// prox.
pub struct Quadratic {
    center: DVector<f64>,
}

impl Quadratic {
    pub fn new(center: DVector<f64>) -> Self {
        Self { center }
    }
}

impl Smooth for Quadratic {
    fn value(&self, u: &DVector<f64>) -> f64 {
        0.5 * (u - &self.center).norm_squared()
    }

    fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        u - &self.center
    }

    fn lipschitz(&self) -> f64 {
        1.0
    }

    fn curvature(&self) -> f64 {
        0.0
    }

    fn exact_prox(&self, z: &DVector<f64>, gamma: f64) -> Option<DVector<f64>> {
        Some((z + gamma * &self.center) / (1.0 + gamma))
    }
}

/// Half squared distance to a convex set, `f = ½ d_C²`.
///
/// Smooth with `L = 1`, `l = 0`; the prox is available in closed form as
/// `(z + γ P_C(z)) / (1 + γ)`.
pub struct HalfSquaredDistance<'a> {
    set: &'a dyn ConvexProjector,
}

impl<'a> HalfSquaredDistance<'a> {
    pub fn new(set: &'a dyn ConvexProjector) -> Self {
        Self { set }
    }

    pub fn set(&self) -> &dyn ConvexProjector {
        self.set
    }
}

impl Smooth for HalfSquaredDistance<'_> {
    fn value(&self, u: &DVector<f64>) -> f64 {
        half_sqdist(self.set, u)
    }

    fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        u - self.set.project(u)
    }

    fn lipschitz(&self) -> f64 {
        1.0
    }

    fn curvature(&self) -> f64 {
        0.0
    }

    fn exact_prox(&self, z: &DVector<f64>, gamma: f64) -> Option<DVector<f64>> {
        Some(prox_half_sqdist(self.set, z, gamma))
    }
}

/// Indicator of a projectable set: zero on the set, `+∞` off it. The prox
/// is the projection, independent of `γ`.
pub struct Indicator<'a> {
    set: &'a dyn Projector,
}

impl<'a> Indicator<'a> {
    pub fn new(set: &'a dyn Projector) -> Self {
        Self { set }
    }
}

impl Prox for Indicator<'_> {
    fn value(&self, u: &DVector<f64>) -> f64 {
        if self.set.contains(u) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    fn prox(&self, z: &DVector<f64>, _gamma: f64) -> DVector<f64> {
        self.set.project(z)
    }
}

/// The zero function, usable for either term.
pub struct Zero;

impl Smooth for Zero {
    fn value(&self, _u: &DVector<f64>) -> f64 {
        0.0
    }

    fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(u.len())
    }

    fn lipschitz(&self) -> f64 {
        1.0
    }

    fn curvature(&self) -> f64 {
        0.0
    }

    fn exact_prox(&self, z: &DVector<f64>, _gamma: f64) -> Option<DVector<f64>> {
        Some(z.clone())
    }
}

impl Prox for Zero {
    fn value(&self, _u: &DVector<f64>) -> f64 {
        0.0
    }

    fn prox(&self, z: &DVector<f64>, _gamma: f64) -> DVector<f64> {
        z.clone()
    }
}

/// Central-difference gradient of `f.value`, for validating `gradient`
/// implementations against the stated 1e-5 relative tolerance.
pub fn finite_difference_gradient<F: Smooth + ?Sized>(
    f: &F,
    x: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f.value(&xp) - f.value(&xm)) / (2.0 * h);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::{AffineSet, FinitePointSet, SparseBoxSet};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Quadratic::new(randn_vec(&mut rng, 6));
        for _ in 0..10 {
            let x = randn_vec(&mut rng, 6) * 3.0;
            let g = f.gradient(&x);
            let fd = finite_difference_gradient(&f, &x, 1e-6);
            assert!((g - fd).norm() <= 1e-5 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn exact_prox_satisfies_first_order_condition() {
        // ‖γ∇f(u) + u − z‖ ≤ 1e-9 (1 + ‖z‖) at the prox output u.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let quad = Quadratic::new(randn_vec(&mut rng, 5));
        let a = DMatrix::from_fn(2, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = randn_vec(&mut rng, 2);
        let aff = AffineSet::new(a, b).unwrap();
        let dist = HalfSquaredDistance::new(&aff);
        let oracles: [&dyn Smooth; 2] = [&quad, &dist];
        for f in oracles {
            for _ in 0..20 {
                let z = randn_vec(&mut rng, 5) * 4.0;
                let gamma = rng.gen_range(0.01..5.0);
                let u = f.exact_prox(&z, gamma).unwrap();
                let res = gamma * f.gradient(&u) + &u - &z;
                assert!(res.norm() <= 1e-9 * (1.0 + z.norm()));
            }
        }
    }

    #[test]
    fn indicator_prox_is_global_minimizer_against_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let set = SparseBoxSet::new(6, 2, 3.0).unwrap();
        let g = Indicator::new(&set);
        for _ in 0..50 {
            let z = randn_vec(&mut rng, 6) * 4.0;
            let gamma = rng.gen_range(0.01..5.0);
            let u = g.prox(&z, gamma);
            let obj_u = gamma * g.value(&u) + 0.5 * (&u - &z).norm_squared();
            assert!(obj_u.is_finite());
            for _ in 0..20 {
                let w = set.project(&(randn_vec(&mut rng, 6) * 4.0));
                let obj_w = gamma * g.value(&w) + 0.5 * (&w - &z).norm_squared();
                assert!(obj_u <= obj_w + 1e-12);
            }
        }
    }

    #[test]
    fn indicator_value_is_extended_real() {
        let pts = vec![DVector::from_vec(vec![1.0, 2.0])];
        let set = FinitePointSet::new(pts).unwrap();
        let g = Indicator::new(&set);
        assert_eq!(g.value(&DVector::from_vec(vec![1.0, 2.0])), 0.0);
        assert_eq!(g.value(&DVector::from_vec(vec![0.0, 0.0])), f64::INFINITY);
    }

    #[test]
    fn prox_determinism() {
        let set = SparseBoxSet::new(5, 2, 1e6).unwrap();
        let g = Indicator::new(&set);
        let z = DVector::from_vec(vec![0.3, -0.3, 2.0, 1.0, -1.0]);
        let a = g.prox(&z, 0.7);
        let b = g.prox(&z, 0.7);
        assert_eq!(a, b);
    }

    #[test]
    fn curvature_bounded_by_lipschitz() {
        let f = Quadratic::new(DVector::zeros(3));
        assert!(f.curvature() <= f.lipschitz());
        let z = Zero;
        assert!(z.curvature() <= Smooth::lipschitz(&z));
    }

    #[test]
    fn half_sqdist_value_gradient_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = DMatrix::from_fn(3, 7, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = randn_vec(&mut rng, 3);
        let aff = AffineSet::new(a, b).unwrap();
        let f = HalfSquaredDistance::new(&aff);
        for _ in 0..10 {
            let x = randn_vec(&mut rng, 7) * 2.0;
            let g = f.gradient(&x);
            let fd = finite_difference_gradient(&f, &x, 1e-6);
            assert!((g - fd).norm() <= 1e-5 * (1.0 + x.norm()));
            assert_relative_eq!(
                f.value(&x),
                0.5 * f.gradient(&x).norm_squared(),
                max_relative = 1e-12
            );
        }
    }
}
