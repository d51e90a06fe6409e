//! Planted two-layer networks `f(x) = P(u_t(w_1.x), ..., u_t(w_d.x))` over
//! standard Gaussian inputs, and procedures that recover the hidden weight
//! directions from samples.

pub mod activation;
pub mod assignment;
pub mod delta_correlation;
pub mod error;
pub mod experiment;
pub mod hermite;
pub mod io;
pub mod landscape;
pub mod linalg;
pub mod network_model;
pub mod polynomial;
pub mod refine;
pub mod stats_core;
pub mod structural;

pub use error::{Error, Result};
