//! Truncated rejection sampling model: propose from π, accept each draw with
//! probability σ(−U(x)), force acceptance at draw T. The bound treats the
//! accepted index as a latent variable with a closed-form variational
//! posterior q(i|x) ∝ (1−Ẑ)^{i−1}·σ(−U(x))^{[i<T]}, where Ẑ = σ(ζ) is a
//! learned stand-in for the average acceptance probability.

use crate::dist::{bernoulli_sample, categorical_sample};
use crate::error::ModelError;
use crate::graph::{logsumexp_slice, sigmoid, softplus, Graph, NodeId};
use crate::nn::{Energy, EnergyNet};
use crate::params::{ParamId, ParamStore};
use crate::proposal::Proposal;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TrsModel<E: Energy = EnergyNet> {
    pub proposal: Proposal,
    pub energy: E,
    pub t: usize,
    pub zhat_logit: ParamId,
}

impl TrsModel<EnergyNet> {
    pub fn register(
        store: &mut ParamStore,
        proposal: Proposal,
        t: usize,
        rng: &mut Rng,
    ) -> Self {
        let energy = EnergyNet::register(store, "energy", proposal.dim(), rng);
        Self::with_energy(store, proposal, energy, t)
    }
}

impl<E: Energy> TrsModel<E> {
    /// Ẑ starts at ½ (zero logit).
    pub fn with_energy(store: &mut ParamStore, proposal: Proposal, energy: E, t: usize) -> Self {
        assert!(t >= 1);
        assert_eq!(proposal.dim(), energy.dim());
        let zhat_logit = store.register("trs.zhat_logit", Tensor::scalar(0.0));
        TrsModel { proposal, energy, t, zhat_logit }
    }

    pub fn dim(&self) -> usize {
        self.proposal.dim()
    }
}

/// Exact generative sample: up to T−1 draws accepted with probability
/// σ(−U(x)); the T-th draw is returned unconditionally.
pub fn trs_sample<E: Energy>(m: &TrsModel<E>, store: &ParamStore, rng: &mut Rng) -> Vec<f64> {
    for _ in 1..m.t {
        let x = m.proposal.sample(store, rng);
        let accept_prob = sigmoid(-m.energy.value(store, &x));
        if bernoulli_sample(accept_prob, rng).expect("sigmoid output is a probability") {
            return x;
        }
    }
    m.proposal.sample(store, rng)
}

/// Differentiable lower bound on log p(x). The expectation over the accepted
/// index i is an exact sum (q(i|x) is closed-form); the expectation over
/// rejected draws is estimated with `inner_samples` shared proposal draws.
/// With T = 1 the bound is log π(x) for any energy; with constant energy and
/// Ẑ = σ(−U) it is log π(x) up to roundoff.
pub fn trs_elbo<'s, E: Energy>(
    m: &TrsModel<E>,
    g: &mut Graph<'s>,
    store: &ParamStore,
    x: &[f64],
    rng: &mut Rng,
    inner_samples: usize,
) -> NodeId {
    assert!(inner_samples >= 1);
    let xn = g.vector_const(x.to_vec());
    let lp_x = m.proposal.log_prob_node(g, xn);
    if m.t == 1 {
        return lp_x;
    }
    let u_x = m.energy.value_node(g, xn);
    let neg_ux = g.neg(u_x);
    let log_accept = g.log_sigmoid(neg_ux); // log σ(−U(x))
    let zeta = g.param(m.zhat_logit);
    let neg_zeta = g.neg(zeta);
    let log_reject_z = g.log_sigmoid(neg_zeta); // log(1−Ẑ)

    // log q-weights lv_i = (i−1)·log(1−Ẑ) + [i<T]·log σ(−U(x))
    let mut parts = Vec::with_capacity(m.t);
    for i in 1..=m.t {
        let c = g.scalar_const((i - 1) as f64);
        let geom = g.mul(c, log_reject_z);
        let lv = if i < m.t { g.add(geom, log_accept) } else { geom };
        parts.push(g.reshape(lv, vec![1]));
    }
    let lvs = g.concat(&parts);
    let lse = g.logsumexp(lvs);
    let centered = g.sub(lvs, lse);
    let q = g.exp(centered);

    // E_q[[i<T]]·log σ(−U(x))
    let q_head = g.slice(q, 0, m.t - 1);
    let accept_mass = g.sum(q_head);
    let accept_term = g.mul(accept_mass, log_accept);

    // E_q[i−1]·mean_s log σ(U(x_s)), x_s ∼ π shared across the i-sum
    let idx = g.vector_const((0..m.t).map(|i| i as f64).collect());
    let rejected_count = g.dot(q, idx);
    let draws = m.proposal.reparam_batch_node(g, store, inner_samples, rng);
    let u_draws = m.energy.value_batch_node(g, draws);
    let log_rej = g.log_sigmoid(u_draws); // log(1−σ(−U)) = log σ(U)
    let r_hat = g.mean(log_rej);
    let reject_term = g.mul(rejected_count, r_hat);

    // entropy of q
    let q_log_q = g.dot(q, centered);
    let entropy = g.neg(q_log_q);

    let s1 = g.add(lp_x, accept_term);
    let s2 = g.add(s1, reject_term);
    g.add(s2, entropy)
}

/// One realization of the log importance ratio: sample i ∼ q(i|x) and the
/// i−1 rejected draws; exp of the ratio averages to the exact p_TRS(x).
pub fn trs_log_ratio<E: Energy>(
    m: &TrsModel<E>,
    store: &ParamStore,
    x: &[f64],
    rng: &mut Rng,
) -> Result<f64, ModelError> {
    let lp_x = m.proposal.log_prob(store, x);
    if m.t == 1 {
        return Ok(lp_x);
    }
    let log_accept = -softplus(m.energy.value(store, x));
    let zeta = store.value(m.zhat_logit).scalar_value();
    let log_reject_z = -softplus(zeta);
    let lvs: Vec<f64> = (1..=m.t)
        .map(|i| {
            let geom = (i - 1) as f64 * log_reject_z;
            if i < m.t {
                geom + log_accept
            } else {
                geom
            }
        })
        .collect();
    let lse = logsumexp_slice(&lvs);
    let i = categorical_sample(&lvs, rng)? + 1;
    let mut rejected = 0.0;
    for _ in 1..i {
        let xs = m.proposal.sample(store, rng);
        rejected += -softplus(-m.energy.value(store, &xs)); // log σ(U(x_s))
    }
    let accept = if i < m.t { log_accept } else { 0.0 };
    let log_q_i = lvs[i - 1] - lse;
    Ok(lp_x + accept + rejected - log_q_i)
}
