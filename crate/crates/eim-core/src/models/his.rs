//! Hamiltonian importance sampling model: a sample is produced by drawing
//! (x₀, ρ₀) from proposal × standard normal and running T tempered leapfrog
//! steps. The map (x₀, ρ₀) → (x_T, ρ_T) is deterministic and invertible with
//! unit Jacobian (shear steps plus momentum scalings whose product is 1), so
//! the bound needs only a variational momentum posterior q(ρ_T|x_T):
//! log p(x_T) ≥ E_q[log π(x₀) + log N(ρ₀; 0, I) − log q(ρ_T|x_T)].

use crate::dist::{
    gaussian_reparam_log_prob_node, gaussian_reparam_node, std_normal_log_prob,
    std_normal_log_prob_node, LN_2PI,
};
use crate::error::ModelError;
use crate::graph::{Graph, NodeId};
use crate::nn::{Energy, EnergyNet, QNet};
use crate::params::{ParamId, ParamStore};
use crate::proposal::Proposal;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct HisModel<E: Energy = EnergyNet> {
    pub proposal: Proposal,
    pub energy: E,
    /// Leapfrog step count.
    pub t: usize,
    /// ε = exp(log_eps) elementwise; ε starts at 0.1.
    pub log_eps: ParamId,
    /// Temperatures α_t = exp(a_t − mean(a)), t = 0…T, so ∏α_t = 1 exactly.
    pub temp_raw: ParamId,
    pub qnet: QNet,
}

impl HisModel<EnergyNet> {
    pub fn register(
        store: &mut ParamStore,
        proposal: Proposal,
        t: usize,
        rng: &mut Rng,
    ) -> Self {
        let energy = EnergyNet::register(store, "energy", proposal.dim(), rng);
        Self::with_energy(store, proposal, energy, t, rng)
    }
}

impl<E: Energy> HisModel<E> {
    pub fn with_energy(
        store: &mut ParamStore,
        proposal: Proposal,
        energy: E,
        t: usize,
        rng: &mut Rng,
    ) -> Self {
        assert!(t >= 1);
        assert_eq!(proposal.dim(), energy.dim());
        let d = proposal.dim();
        let log_eps = store.register("his.log_eps", Tensor::full(&[d], 0.1f64.ln()));
        let temp_raw = store.register("his.temp_raw", Tensor::zeros(&[t + 1]));
        let qnet = QNet::register(store, "qnet", d, rng);
        HisModel { proposal, energy, t, log_eps, temp_raw, qnet }
    }

    pub fn dim(&self) -> usize {
        self.proposal.dim()
    }

    /// α_0…α_T with ∏α_t = 1 by construction.
    pub fn alphas(&self, store: &ParamStore) -> Vec<f64> {
        let a = store.value(self.temp_raw).data();
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        a.iter().map(|&v| (v - mean).exp()).collect()
    }

    /// Elementwise leapfrog step sizes ε.
    pub fn step_sizes(&self, store: &ParamStore) -> Vec<f64> {
        store.value(self.log_eps).data().iter().map(|&v| v.exp()).collect()
    }
}

fn check_finite(x: &[f64], rho: &[f64], step: usize, what: &str) -> Result<(), ModelError> {
    if x.iter().chain(rho.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFiniteStep { step, what: what.to_string() })
    }
}

/// Deterministic forward dynamics: ρ ← α₀·ρ₀_raw, then T leapfrog steps,
/// each ending with the tempering scale α_t.
pub fn his_forward<E: Energy>(
    m: &HisModel<E>,
    store: &ParamStore,
    x0: &[f64],
    rho0_raw: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let d = m.dim();
    assert_eq!(x0.len(), d);
    assert_eq!(rho0_raw.len(), d);
    let al = m.alphas(store);
    let ep = m.step_sizes(store);
    let mut x = x0.to_vec();
    let mut rho: Vec<f64> = rho0_raw.iter().map(|&r| al[0] * r).collect();
    check_finite(&x, &rho, 0, "his_forward")?;
    for t in 1..=m.t {
        let gx = m.energy.grad(store, &x);
        for i in 0..d {
            rho[i] -= 0.5 * ep[i] * gx[i];
            x[i] += ep[i] * rho[i];
        }
        let gx2 = m.energy.grad(store, &x);
        for i in 0..d {
            rho[i] = al[t] * (rho[i] - 0.5 * ep[i] * gx2[i]);
        }
        check_finite(&x, &rho, t, "his_forward")?;
    }
    Ok((x, rho))
}

/// Exact algebraic inverse of [`his_forward`].
pub fn his_inverse<E: Energy>(
    m: &HisModel<E>,
    store: &ParamStore,
    x_t: &[f64],
    rho_t: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let d = m.dim();
    assert_eq!(x_t.len(), d);
    assert_eq!(rho_t.len(), d);
    let al = m.alphas(store);
    let ep = m.step_sizes(store);
    let mut x = x_t.to_vec();
    let mut rho = rho_t.to_vec();
    check_finite(&x, &rho, m.t, "his_inverse")?;
    for t in (1..=m.t).rev() {
        let gx = m.energy.grad(store, &x);
        for i in 0..d {
            rho[i] = rho[i] / al[t] + 0.5 * ep[i] * gx[i];
            x[i] -= ep[i] * rho[i];
        }
        let gx2 = m.energy.grad(store, &x);
        for i in 0..d {
            rho[i] += 0.5 * ep[i] * gx2[i];
        }
        check_finite(&x, &rho, t, "his_inverse")?;
    }
    let rho0_raw: Vec<f64> = rho.iter().map(|&r| r / al[0]).collect();
    Ok((x, rho0_raw))
}

/// One exact generative sample: run the dynamics forward from the proposal.
pub fn his_sample<E: Energy>(
    m: &HisModel<E>,
    store: &ParamStore,
    rng: &mut Rng,
) -> Result<Vec<f64>, ModelError> {
    let x0 = m.proposal.sample(store, rng);
    let rho0: Vec<f64> = (0..m.dim()).map(|_| rng.standard_normal()).collect();
    let (x_t, _) = his_forward(m, store, &x0, &rho0)?;
    Ok(x_t)
}

/// Differentiable lower bound on log p(x_T): draw ρ_T ∼ q(·|x_T) pathwise,
/// invert the dynamics in-graph (second-order: the graph contains ∇U), and
/// score the start point under proposal × standard normal.
pub fn his_elbo<'s, E: Energy>(
    m: &HisModel<E>,
    g: &mut Graph<'s>,
    x: &[f64],
    rng: &mut Rng,
) -> NodeId {
    let d = m.dim();
    assert_eq!(x.len(), d);
    let xn = g.vector_const(x.to_vec());
    let (q_mean, q_log_std) = m.qnet.mean_log_std_node(g, xn);
    let eps_q: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let mut rho = gaussian_reparam_node(g, q_mean, q_log_std, &eps_q);
    let log_q = gaussian_reparam_log_prob_node(g, q_log_std, &eps_q);

    let temps = g.param(m.temp_raw);
    let temp_mean = g.mean(temps);
    let centered = g.sub(temps, temp_mean);
    let log_eps = g.param(m.log_eps);
    let eps_v = g.exp(log_eps);
    let half = g.scalar_const(0.5);
    let eps_half = g.mul(half, eps_v);

    let mut xcur = xn;
    for t in (1..=m.t).rev() {
        let a_t = g.index(centered, t);
        let alpha_t = g.exp(a_t);
        let unscaled = g.div(rho, alpha_t);
        let gx = m.energy.grad_node(g, xcur);
        let kick = g.mul(eps_half, gx);
        rho = g.add(unscaled, kick);
        let step = g.mul(eps_v, rho);
        xcur = g.sub(xcur, step);
        let gx2 = m.energy.grad_node(g, xcur);
        let kick2 = g.mul(eps_half, gx2);
        rho = g.add(rho, kick2);
    }
    let a_0 = g.index(centered, 0);
    let alpha_0 = g.exp(a_0);
    let rho0_raw = g.div(rho, alpha_0);

    let lp_x0 = m.proposal.log_prob_node(g, xcur);
    let lp_rho0 = std_normal_log_prob_node(g, rho0_raw);
    let joint = g.add(lp_x0, lp_rho0);
    g.sub(joint, log_q)
}

/// One realization of the log importance ratio
/// log [π(x₀)·N(ρ₀; 0, I) / q(ρ_T|x_T)] with ρ_T ∼ q(·|x_T).
pub fn his_log_ratio<E: Energy>(
    m: &HisModel<E>,
    store: &ParamStore,
    x: &[f64],
    rng: &mut Rng,
) -> Result<f64, ModelError> {
    let d = m.dim();
    let (q_mean, q_log_std) = m.qnet.mean_log_std(store, x);
    let eps_q: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let rho_t: Vec<f64> =
        (0..d).map(|i| q_mean[i] + q_log_std[i].exp() * eps_q[i]).collect();
    let log_q = -q_log_std.iter().sum::<f64>()
        - 0.5 * d as f64 * LN_2PI
        - 0.5 * eps_q.iter().map(|&e| e * e).sum::<f64>();
    let (x0, rho0_raw) = his_inverse(m, store, x, &rho_t)?;
    Ok(m.proposal.log_prob(store, &x0) + std_normal_log_prob(&rho0_raw) - log_q)
}
