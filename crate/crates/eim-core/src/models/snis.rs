//! Self-normalized importance sampling model: draw K proposal candidates,
//! weight each by exp(−U), and emit one chosen by a self-normalized
//! categorical. The log-likelihood lower bound places the observed point in
//! one slot and averages the weights of K−1 fresh candidates around it.

use crate::dist::categorical_sample;
use crate::error::ModelError;
use crate::graph::{logsumexp_slice, Graph, NodeId};
use crate::nn::{Energy, EnergyNet};
use crate::params::ParamStore;
use crate::proposal::Proposal;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SnisModel<E: Energy = EnergyNet> {
    pub proposal: Proposal,
    pub energy: E,
    pub k: usize,
}

impl SnisModel<EnergyNet> {
    /// Registers a fresh energy network for the proposal's dimension.
    pub fn register(
        store: &mut ParamStore,
        proposal: Proposal,
        k: usize,
        rng: &mut Rng,
    ) -> Self {
        assert!(k >= 1);
        let energy = EnergyNet::register(store, "energy", proposal.dim(), rng);
        SnisModel { proposal, energy, k }
    }
}

impl<E: Energy> SnisModel<E> {
    pub fn with_energy(proposal: Proposal, energy: E, k: usize) -> Self {
        assert!(k >= 1);
        assert_eq!(proposal.dim(), energy.dim());
        SnisModel { proposal, energy, k }
    }

    pub fn dim(&self) -> usize {
        self.proposal.dim()
    }
}

/// Exact generative sample: K candidates from π, one kept with probability
/// proportional to exp(−U).
pub fn snis_sample<E: Energy>(
    m: &SnisModel<E>,
    store: &ParamStore,
    rng: &mut Rng,
) -> Result<Vec<f64>, ModelError> {
    let d = m.dim();
    let mut flat = Vec::with_capacity(m.k * d);
    for _ in 0..m.k {
        flat.extend(m.proposal.sample(store, rng));
    }
    let xs = Tensor::matrix(m.k, d, flat);
    let logits: Vec<f64> = m.energy.value_batch(store, &xs).iter().map(|&u| -u).collect();
    let i = categorical_sample(&logits, rng)?;
    Ok(xs.data()[i * d..(i + 1) * d].to_vec())
}

/// Differentiable lower bound on log p(x):
/// log π(x) − U(x) − logsumexp(−U(x₂),…,−U(x_K),−U(x)) + log K,
/// with x₂…x_K drawn pathwise from the proposal. With U ≡ 0 the bound is
/// log π(x) bit-for-bit; with K = 1 it is log π(x) for any energy.
pub fn snis_elbo<'s, E: Energy>(
    m: &SnisModel<E>,
    g: &mut Graph<'s>,
    store: &ParamStore,
    x: &[f64],
    rng: &mut Rng,
) -> NodeId {
    let xn = g.vector_const(x.to_vec());
    let lp_x = m.proposal.log_prob_node(g, xn);
    let u_x = m.energy.value_node(g, xn);
    let neg_ux = g.neg(u_x);
    let neg_ux1 = g.reshape(neg_ux, vec![1]);
    let stacked = if m.k > 1 {
        let draws = m.proposal.reparam_batch_node(g, store, m.k - 1, rng);
        let u_draws = m.energy.value_batch_node(g, draws);
        let neg_ud = g.neg(u_draws);
        g.concat(&[neg_ud, neg_ux1])
    } else {
        neg_ux1
    };
    let lse = g.logsumexp(stacked);
    let ln_k = g.scalar_const((m.k as f64).ln());
    let numer = g.add(lp_x, neg_ux);
    let denom = g.sub(lse, ln_k);
    g.sub(numer, denom)
}

/// One realization of the log importance ratio; exp of it averages to the
/// exact p_SNIS(x) over proposal randomness.
pub fn snis_log_ratio<E: Energy>(
    m: &SnisModel<E>,
    store: &ParamStore,
    x: &[f64],
    rng: &mut Rng,
) -> Result<f64, ModelError> {
    let lp_x = m.proposal.log_prob(store, x);
    let u_x = m.energy.value(store, x);
    let mut neg_us = Vec::with_capacity(m.k);
    for _ in 1..m.k {
        let xi = m.proposal.sample(store, rng);
        neg_us.push(-m.energy.value(store, &xi));
    }
    neg_us.push(-u_x);
    Ok(lp_x - u_x - logsumexp_slice(&neg_us) + (m.k as f64).ln())
}
