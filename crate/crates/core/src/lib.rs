//! Sparse-group Bayesian feature selection for linear regression.
//!
//! A spike-and-slab prior with two levels of sparsity (groups, and features
//! within groups) is fitted by expectation propagation. The crate also ships
//! an exact enumeration posterior for small problems, simulators for
//! signal-recovery and network-reconstruction benchmarks, and ranking
//! metrics.

pub mod ep;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod model;
pub mod network;
pub mod oracle;
pub mod sim;

pub use error::{Error, Result};
pub use model::{FitResult, Grouping, Hyperparams, Prior, RegressionData};
