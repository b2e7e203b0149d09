//! Constrained Bayesian optimization with predictive entropy search.
//!
//! Inputs are handled internally on the unit box. Function index 0 is the
//! objective and indices 1..=K are the constraints `c_k(x) ≥ 0`.

pub mod acquisition;
pub mod benchmarks;
pub mod controller;
pub mod domain;
pub mod ep;
pub mod error;
pub mod gp;
pub mod hyper;
pub mod kernel;
pub mod linalg;
pub mod normal;
pub mod optim;
pub mod oracle;
pub mod sampler;
pub mod scheduler;

pub use error::{Error, Result};
