//! Batched objective evaluation with a data-parallel core and a sequential
//! fallback. Every batch element builds its own graph and draws from its own
//! derived rng stream keyed by (step, element), so the work is embarrassingly
//! parallel; per-element results are always reduced in index order, which
//! makes the two execution modes bit-identical.

use crate::error::ModelError;
use crate::graph::Graph;
use crate::models::Model;
use crate::params::{Gradients, ParamStore};
use crate::rng::{streams, Rng};
use crate::tensor::Tensor;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How to evaluate a batch. `Parallel` falls back to the sequential path
/// when the crate is built without the `parallel` feature, so callers can
/// request it unconditionally.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Execution {
    /// `Parallel` when this build carries the rayon thread pool.
    pub fn default_for_build() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Result of one batched objective evaluation.
pub struct BatchObjective {
    /// Mean lower bound over the batch.
    pub objective: f64,
    /// Per-element bounds in batch order.
    pub per_element: Vec<f64>,
    /// Gradient of the mean bound.
    pub grads: Gradients,
}

fn element_objective(
    model: &Model,
    store: &ParamStore,
    x: &[f64],
    rng: &mut Rng,
) -> Result<(f64, Gradients), ModelError> {
    let mut g = Graph::new(store);
    let node = model.elbo_node(&mut g, store, x, rng);
    let value = g.scalar(node)?;
    let back = g.backward(node)?;
    Ok((value, back.grads))
}

/// Evaluate the model's lower bound and its gradient on a `[n, d]` batch.
/// Element `i` draws from stream `objective(step, i)` of `root`'s seed, so
/// the result depends only on (parameters, batch, seed, step) — never on
/// thread scheduling.
pub fn batch_objective(
    model: &Model,
    store: &ParamStore,
    xs: &Tensor,
    root: &Rng,
    step: u64,
    exec: Execution,
) -> Result<BatchObjective, ModelError> {
    let (n, d) = (xs.rows(), xs.cols());
    assert_eq!(d, model.dim(), "batch width does not match model dimension");
    assert!(n > 0, "empty batch");

    let run_one = |i: usize| {
        let mut rng = root.stream(streams::objective(step, i as u64));
        let x = &xs.data()[i * d..(i + 1) * d];
        element_objective(model, store, x, &mut rng)
    };

    let results: Vec<Result<(f64, Gradients), ModelError>> = match exec {
        Execution::Sequential => (0..n).map(run_one).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(run_one).collect(),
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel => (0..n).map(run_one).collect(),
    };

    let mut per_element = Vec::with_capacity(n);
    let mut grads = Gradients::zeros_for(store);
    let mut total = 0.0;
    for r in results {
        let (v, g) = r?;
        total += v;
        per_element.push(v);
        grads.add(&g);
    }
    grads.scale(1.0 / n as f64);
    Ok(BatchObjective { objective: total / n as f64, per_element, grads })
}
