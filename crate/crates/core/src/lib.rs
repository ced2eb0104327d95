//! Continuous-depth networks whose weights and biases are B-spline functions
//! of the layer time.
//!
//! The crate covers forward-Euler propagation ([`dynamics`]), exact adjoint
//! gradients onto spline coefficients ([`adjoint`]), mini-batch training
//! ([`train`]), the test problems ([`problems`]) and the numerical studies
//! built on top of them ([`analysis`]). [`config`] and [`cli`] drive all of
//! it from JSON experiment files.

pub mod adjoint;
pub mod analysis;
pub mod bspline;
pub mod cli;
pub mod config;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod problems;
pub mod train;

pub use error::{Error, Result};
