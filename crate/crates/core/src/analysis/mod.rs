//! Convergence, stability and sweep studies.

pub mod convergence;
pub mod spectrum;
pub mod stats;
pub mod sweep;
