//! Douglas-Rachford splitting for nonconvex feasibility problems.
//!
//! The crate has five parts:
//!
//! - [`solver`]: the splitting iteration for `min f(u) + g(u)` with a
//!   smooth `f` and a prox-friendly `g`, its merit-function machinery,
//!   step-size rules and convergence certificates;
//! - [`oracle`]: the [`oracle::Smooth`] / [`oracle::Prox`] traits and
//!   standard instances (quadratics, half squared distance, indicators);
//! - [`sets`]: projection oracles (affine sets with cached factorization,
//!   sparse boxes, finite point sets, consensus sets, boxes, balls);
//! - [`feasibility`]: the `C ∩ D` layer with three methods (damped
//!   splitting, alternating projection, classical indicator splitting),
//!   product-space lifting, rate fitting and cycle detection;
//! - [`instances`] and [`bench`](mod@bench): reproducible instance
//!   generation and the benchmark harness behind the command-line tool.

pub mod bench;
pub mod feasibility;
pub mod instances;
pub mod oracle;
pub mod sets;
pub mod solver;
