//! Gaussian-smoothed total variation and χ² divergences between an empirical
//! measure and a reference distribution, together with simulation of their
//! limiting Gaussian-process functionals and the associated bounds.

pub mod bounds;
pub mod cli;
pub mod divergence;
pub mod error;
pub mod experiments;
pub mod integrate;
pub mod limit;
pub mod measure;
pub mod seed;

pub use error::{Error, Result};
