//! Proposal distributions π(x): the base samplers that the three model
//! families reweight, filter, or transport.
//!
//! A proposal is either a fixed diagonal Gaussian, a trainable diagonal
//! Gaussian whose mean and log-std live in the parameter store, or a finite
//! categorical over explicit points (used by the enumerable toy models).

use crate::dist::{DiagGaussian, LN_2PI};
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub enum Proposal {
    /// Frozen diagonal Gaussian; contributes no parameters.
    Fixed(DiagGaussian),
    /// Diagonal Gaussian with mean and log-std registered as parameters.
    Trainable { mean: ParamId, log_std: ParamId, dim: usize },
    /// Finite categorical over explicit points with fixed log-probabilities.
    Finite { points: Vec<Vec<f64>>, log_probs: Vec<f64> },
}

impl Proposal {
    /// Frozen isotropic Gaussian N(mean·1, std²·I).
    pub fn fixed_isotropic(dim: usize, mean: f64, std: f64) -> Proposal {
        Proposal::Fixed(DiagGaussian::new(
            Tensor::full(&[dim], mean),
            Tensor::full(&[dim], std.ln()),
        ))
    }

    /// Registers a trainable diagonal Gaussian initialized at N(mean, std²·I).
    pub fn trainable(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        mean: f64,
        std: f64,
    ) -> Proposal {
        let mean_id = store.register(&format!("{prefix}.mean"), Tensor::full(&[dim], mean));
        let log_std_id =
            store.register(&format!("{prefix}.log_std"), Tensor::full(&[dim], std.ln()));
        Proposal::Trainable { mean: mean_id, log_std: log_std_id, dim }
    }

    /// Finite categorical from point/probability pairs. Probabilities must be
    /// positive and sum to 1 within 1e-12.
    pub fn finite(points: Vec<Vec<f64>>, probs: &[f64]) -> Proposal {
        assert_eq!(points.len(), probs.len());
        assert!(!points.is_empty());
        let total: f64 = probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "probabilities sum to {total}");
        assert!(probs.iter().all(|&p| p > 0.0));
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Proposal::Finite { points, log_probs }
    }

    pub fn dim(&self) -> usize {
        match self {
            Proposal::Fixed(g) => g.dim(),
            Proposal::Trainable { dim, .. } => *dim,
            Proposal::Finite { points, .. } => points[0].len(),
        }
    }

    /// True when the proposal owns parameters in the store.
    pub fn is_trainable(&self) -> bool {
        matches!(self, Proposal::Trainable { .. })
    }

    /// One numeric draw.
    pub fn sample(&self, store: &ParamStore, rng: &mut Rng) -> Vec<f64> {
        match self {
            Proposal::Fixed(g) => g.sample(rng),
            Proposal::Trainable { mean, log_std, dim } => {
                let m = store.value(*mean).data();
                let ls = store.value(*log_std).data();
                (0..*dim).map(|i| m[i] + ls[i].exp() * rng.standard_normal()).collect()
            }
            Proposal::Finite { points, log_probs } => {
                let idx = crate::dist::categorical_sample(log_probs, rng)
                    .expect("finite proposal has valid log-probabilities");
                points[idx].clone()
            }
        }
    }

    /// Numeric log π(x).
    pub fn log_prob(&self, store: &ParamStore, x: &[f64]) -> f64 {
        match self {
            Proposal::Fixed(g) => g.log_prob(x),
            Proposal::Trainable { mean, log_std, .. } => {
                let m = store.value(*mean).data();
                let ls = store.value(*log_std).data();
                let mut acc = -0.5 * x.len() as f64 * LN_2PI;
                for i in 0..x.len() {
                    let z = (x[i] - m[i]) / ls[i].exp();
                    acc += -ls[i] - 0.5 * z * z;
                }
                acc
            }
            Proposal::Finite { points, log_probs } => points
                .iter()
                .position(|p| p.as_slice() == x)
                .map(|i| log_probs[i])
                .unwrap_or(f64::NEG_INFINITY),
        }
    }

    /// log π(x) as a graph node for a graph-valued point. Differentiable wrt
    /// the proposal parameters when trainable. A finite proposal requires `x`
    /// to be a constant node (its value is looked up numerically).
    pub fn log_prob_node<'s>(&self, g: &mut Graph<'s>, x: NodeId) -> NodeId {
        match self {
            Proposal::Fixed(dg) => {
                let mean = g.vector_const(dg.mean.data().to_vec());
                let log_std = g.vector_const(dg.log_std.data().to_vec());
                self.gaussian_log_prob_parts(g, x, mean, log_std)
            }
            Proposal::Trainable { mean, log_std, .. } => {
                let mean = g.param(*mean);
                let log_std = g.param(*log_std);
                self.gaussian_log_prob_parts(g, x, mean, log_std)
            }
            Proposal::Finite { .. } => {
                let point = g.raw_value(x).data().to_vec();
                // store is irrelevant for finite log-probs
                let lp = self.log_prob_finite(&point);
                g.scalar_const(lp)
            }
        }
    }

    fn log_prob_finite(&self, x: &[f64]) -> f64 {
        match self {
            Proposal::Finite { points, log_probs } => points
                .iter()
                .position(|p| p.as_slice() == x)
                .map(|i| log_probs[i])
                .unwrap_or(f64::NEG_INFINITY),
            _ => unreachable!(),
        }
    }

    fn gaussian_log_prob_parts<'s>(
        &self,
        g: &mut Graph<'s>,
        x: NodeId,
        mean: NodeId,
        log_std: NodeId,
    ) -> NodeId {
        let d = self.dim() as f64;
        let diff = g.sub(x, mean);
        let std = g.exp(log_std);
        let z = g.div(diff, std);
        let z2 = g.dot(z, z);
        let half = g.scalar_const(-0.5);
        let quad = g.mul(half, z2);
        let sum_ls = g.sum(log_std);
        let neg_sum_ls = g.neg(sum_ls);
        let const_term = g.scalar_const(-0.5 * d * LN_2PI);
        let a = g.add(neg_sum_ls, const_term);
        g.add(a, quad)
    }

    /// One pathwise draw as a graph node: for Gaussian proposals the node is
    /// mean + exp(log_std)⊙ε with ε constant, so gradients flow to trainable
    /// parameters; for finite proposals the draw is a constant node.
    pub fn reparam_node<'s>(&self, g: &mut Graph<'s>, rng: &mut Rng) -> NodeId {
        match self {
            Proposal::Fixed(dg) => {
                let x = dg.sample(rng);
                g.vector_const(x)
            }
            Proposal::Trainable { mean, log_std, dim } => {
                let eps: Vec<f64> = (0..*dim).map(|_| rng.standard_normal()).collect();
                let mean = g.param(*mean);
                let log_std = g.param(*log_std);
                let eps = g.vector_const(eps);
                let std = g.exp(log_std);
                let scaled = g.mul(std, eps);
                g.add(mean, scaled)
            }
            Proposal::Finite { .. } => {
                let store_free = self.sample_finite(rng);
                g.vector_const(store_free)
            }
        }
    }

    /// `n` pathwise draws as an `[n, dim]` node; rows follow the same rng
    /// stream as `n` successive calls to [`Proposal::sample`].
    pub fn reparam_batch_node<'s>(
        &self,
        g: &mut Graph<'s>,
        store: &ParamStore,
        n: usize,
        rng: &mut Rng,
    ) -> NodeId {
        let d = self.dim();
        match self {
            Proposal::Trainable { mean, log_std, .. } => {
                let eps: Vec<f64> = (0..n * d).map(|_| rng.standard_normal()).collect();
                let eps = g.constant(Tensor::matrix(n, d, eps));
                let log_std_n = g.param(*log_std);
                let std = g.exp(log_std_n);
                let scaled = g.mul_row(eps, std);
                let mean_n = g.param(*mean);
                g.add_row(scaled, mean_n)
            }
            Proposal::Fixed(_) | Proposal::Finite { .. } => {
                let mut data = Vec::with_capacity(n * d);
                for _ in 0..n {
                    data.extend(self.sample(store, rng));
                }
                g.constant(Tensor::matrix(n, d, data))
            }
        }
    }

    fn sample_finite(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            Proposal::Finite { points, log_probs } => {
                let idx = crate::dist::categorical_sample(log_probs, rng)
                    .expect("finite proposal has valid log-probabilities");
                points[idx].clone()
            }
            _ => unreachable!(),
        }
    }
}
