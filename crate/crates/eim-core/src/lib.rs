//! Library for energy-inspired generative models on low-dimensional data.
//!
//! Three model families share the same recipe: push proposal draws through a
//! stochastic sampler whose marginal density is intractable, then train by
//! maximizing a tractable single-sample lower bound on the data
//! log-likelihood. The families are truncated rejection sampling
//! ([`models::TrsModel`]), self-normalized importance sampling
//! ([`models::SnisModel`]) and Hamiltonian importance sampling
//! ([`models::HisModel`]).
//!
//! Supporting pieces: a define-by-run reverse-mode autodiff engine
//! ([`graph`]), seeded RNG streams ([`rng`]), small dense networks ([`nn`]),
//! the synthetic 2-D targets ([`targets`]), an Adam-based trainer
//! ([`trainer`]), and a zoo of multi-sample variational bounds on a tractable
//! reference model ([`bounds`]) used to cross-check the estimators.

// Numeric kernels walk several parallel slices by index; zip pyramids would
// obscure the math.
#![allow(clippy::needless_range_loop)]

pub mod batch;
pub mod bounds;
pub mod checkpoint;
pub mod dist;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod models;
pub mod nn;
pub mod params;
pub mod proposal;
pub mod rng;
pub mod targets;
pub mod tensor;
#[cfg(test)]
pub mod testutil;
pub mod trainer;

pub use error::{BoundsError, CheckpointError, GradError, ModelError, StatsError};
pub use graph::{Graph, NodeId};
pub use params::{Gradients, ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::Tensor;
