//! Randomized trace estimation for trace-class integral operators.
//!
//! Probe functions are drawn from a squared-exponential Gaussian process and
//! the operator is only touched through operator-function products, so the
//! estimators do not depend on how an operator is discretized internally.
//!
//! The crate is organised bottom-up:
//!
//! - [`function_space`]: quadrature grids, grid functions, quasimatrices and
//!   weighted QR.
//! - [`gp`]: squared-exponential covariance and probe sampling.
//! - [`operators`]: the operator-function product contract and concrete
//!   operators (explicit kernels, Schrödinger resolvents, filtered resolvents).
//! - [`estimators`]: continuous Hutchinson, range finder, ContHutch++, and the
//!   parameter/bound formulas.
//! - [`dos`]: density-of-states with rational smoothing kernels.
//! - [`photonics`]: mean-square field intensity from incoherent sources.
//! - [`validation`]: empirical checks of the error bounds.

// `!(x > 0.0)` is the NaN-rejecting form; banded kernels index several arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dos;
pub mod error;
pub mod estimators;
pub mod function_space;
pub mod gp;
pub mod linalg;
pub mod operators;
pub mod photonics;
pub mod validation;

pub use error::{Error, Result};
pub use num_complex::Complex64;
