//! Effective model complexity (EMC) probes: the largest training-set size a
//! small network fits perfectly under a realistic training loop, with the
//! reached point certified as a minimum.

pub mod autodiff;
pub mod converge;
pub mod data;
pub mod emc;
pub mod error;
pub mod models;
pub mod objective;
pub mod optim;
pub mod reparam;
pub mod runner;
pub mod seed;

pub use error::{Error, Result};
