//! Subordinate Brownian motion toolkit: Bernstein-function calculus,
//! subordinator sampling, free and Dirichlet heat kernels, Green function
//! envelopes and the experiment harness tying them together.

pub mod bernstein;
pub mod dirichlet;
pub mod domain;
pub mod envelopes;
pub mod error;
pub mod free_kernel;
pub mod harness;
pub mod levy;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use bernstein::SubordinatorModel;
pub use error::{Error, Result};
pub use levy::{Scheme, SubordinatorSampler};
