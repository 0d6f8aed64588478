//! The three model families: truncated rejection sampling (TRS),
//! self-normalized importance sampling (SNIS), and Hamiltonian importance
//! sampling (HIS). Each exposes exact sampling, a differentiable
//! log-likelihood lower bound, and a multi-sample evaluation bound.

pub mod his;
pub mod snis;
pub mod toy;
pub mod trs;

pub use his::HisModel;
pub use snis::SnisModel;
pub use trs::TrsModel;

use crate::error::ModelError;
use crate::graph::{logsumexp_slice, Graph, NodeId};
use crate::nn::EnergyNet;
use crate::params::ParamStore;
use crate::rng::Rng;

/// A trainable model of one of the three families, with its evaluation-time
/// hyperparameters fixed at construction.
pub enum Model {
    Trs { model: TrsModel<EnergyNet>, inner_samples: usize },
    Snis(SnisModel<EnergyNet>),
    His(HisModel<EnergyNet>),
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Model::Trs { model, .. } => model.dim(),
            Model::Snis(m) => m.dim(),
            Model::His(m) => m.dim(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Model::Trs { .. } => "trs",
            Model::Snis(_) => "snis",
            Model::His(_) => "his",
        }
    }

    /// One exact generative sample.
    pub fn sample(&self, store: &ParamStore, rng: &mut Rng) -> Result<Vec<f64>, ModelError> {
        match self {
            Model::Trs { model, .. } => Ok(trs::trs_sample(model, store, rng)),
            Model::Snis(m) => snis::snis_sample(m, store, rng),
            Model::His(m) => his::his_sample(m, store, rng),
        }
    }

    /// Differentiable single-datum lower bound. Non-finite intermediates
    /// surface as errors when the returned node is evaluated.
    pub fn elbo_node<'s>(
        &self,
        g: &mut Graph<'s>,
        store: &ParamStore,
        x: &[f64],
        rng: &mut Rng,
    ) -> NodeId {
        match self {
            Model::Trs { model, inner_samples } => {
                trs::trs_elbo(model, g, store, x, rng, *inner_samples)
            }
            Model::Snis(m) => snis::snis_elbo(m, g, store, x, rng),
            Model::His(m) => his::his_elbo(m, g, x, rng),
        }
    }

    /// One realization of the log importance ratio whose expectation (of the
    /// exponential) is the model's exact density at `x`.
    pub fn log_ratio(
        &self,
        store: &ParamStore,
        x: &[f64],
        rng: &mut Rng,
    ) -> Result<f64, ModelError> {
        match self {
            Model::Trs { model, .. } => trs::trs_log_ratio(model, store, x, rng),
            Model::Snis(m) => snis::snis_log_ratio(m, store, x, rng),
            Model::His(m) => his::his_log_ratio(m, store, x, rng),
        }
    }
}

/// Multi-sample evaluation bound: draws `n` independent log importance
/// ratios and returns (logsumexp(ratios) − log n, standard error). The
/// standard error comes from the delta method applied to the log of the
/// sample mean of the ratios.
pub fn iwae_eval(
    model: &Model,
    store: &ParamStore,
    x: &[f64],
    n: usize,
    rng: &mut Rng,
) -> Result<(f64, f64), ModelError> {
    assert!(n >= 1);
    let mut logs = Vec::with_capacity(n);
    for _ in 0..n {
        logs.push(model.log_ratio(store, x, rng)?);
    }
    Ok(log_mean_exp_with_se(&logs))
}

/// (log mean exp, delta-method standard error) of a set of log-ratios.
pub fn log_mean_exp_with_se(logs: &[f64]) -> (f64, f64) {
    let n = logs.len() as f64;
    let lme = logsumexp_slice(logs) - n.ln();
    let doubled: Vec<f64> = logs.iter().map(|&l| 2.0 * l).collect();
    let lme2 = logsumexp_slice(&doubled) - n.ln();
    // Var(r)/E[r]² = E[r²]/E[r]² − 1, all in log space
    let rel_var = ((lme2 - 2.0 * lme).exp() - 1.0).max(0.0);
    (lme, (rel_var / n).sqrt())
}
