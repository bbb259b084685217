//! Simulation and regularized maximum-likelihood estimation for multivariate
//! Hawkes processes.
//!
//! The estimation side exposes three block-coordinate solvers over the
//! `(mu, alpha | beta)` split of the parameter vector: PALM, inertial PALM
//! (iPALM), and iPALM with safeguarded type-I Anderson acceleration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod optim;
pub mod simulate;

pub use error::{Error, Result};
pub use likelihood::{Gradient, LikelihoodProblem};
pub use model::{
    branching_matrix, spectral_radius, stationary_mean_intensity, BoxDomain, FlatIndexMap,
    KernelFamily, ModelSpec, ParamVector,
};
pub use optim::{Algorithm, FitResult, HyperParams, StepKind, TraceRecord};
pub use simulate::{EventSequence, SimConfig};
