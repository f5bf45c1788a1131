//! Baryconvex optimization over `R^m x int(Delta_S)`.
//!
//! A family of convex losses `l = (l_1, ..., l_S)` is combined with simplex
//! weights that are updated in a minimax fashion. The crate provides:
//!
//! - [`simplex`]: log-space simplex points, softargmax, KL, the Euclidean+KL
//!   Bregman divergence, Fisher information and Christoffel symbols.
//! - [`objectives`]: objective families, barygradients and pairwise
//!   tensorization.
//! - [`prox`]: the generalized proximal operator and its certificates
//!   (stationarity, BFNE gap, f-resolvent residual, fixed-point residuals).
//! - [`ppa`]: the generalized proximal point algorithm.
//! - [`landscape`]: the reduced function `F(x, xi_bar) = sigma(xi)^T l(x)`,
//!   its gradient, Euclidean and Riemannian Hessians and saddle classification.
//! - [`flows`]: the barygradient min-max and min-min flows.
//! - [`checks`]: seeded property suites over all of the above.

pub mod checks;
pub mod error;
pub mod flows;
pub mod landscape;
pub mod objectives;
pub mod ppa;
pub mod prox;
pub mod sampling;
pub mod simplex;

mod linalg;
mod solver;

pub use error::{Error, Result};
pub use linalg::Inertia;
pub use nalgebra::{DMatrix, DVector};
