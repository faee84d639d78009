//! Gaussian-process surrogates for partitioned fixed-point coupling, with
//! Monte Carlo propagation of surrogate uncertainty, deviation bounds and
//! Sobol sensitivity analysis.

pub mod bench;
pub mod bounds;
pub mod config;
pub mod coupling;
pub mod design;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod model_io;
pub mod reference;
pub mod report;
pub mod rng;
pub mod sensitivity;
pub mod stats;
pub mod uq;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
