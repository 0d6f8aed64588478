//! Primitive distributions used by the samplers.
//!
//! Each density has a plain numeric form (for sampling and evaluation) and,
//! where objectives need gradients, a graph-node form. Log-space is used
//! everywhere a density enters an objective.

use crate::error::StatsError;
use crate::graph::{logsumexp_slice, Graph, NodeId};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LN_2PI: f64 = 1.8378770664093453;

/// Axis-aligned Gaussian with one mean and log-standard-deviation per
/// coordinate.
#[derive(Clone, Debug)]
pub struct DiagGaussian {
    pub mean: Tensor,
    pub log_std: Tensor,
}

impl DiagGaussian {
    pub fn new(mean: Tensor, log_std: Tensor) -> Self {
        assert_eq!(mean.rank(), 1, "mean must be a vector");
        assert_eq!(mean.shape(), log_std.shape(), "mean/log_std shape mismatch");
        assert!(log_std.all_finite(), "log_std must be finite");
        DiagGaussian { mean, log_std }
    }

    /// N(0, I) in `d` dimensions.
    pub fn standard(d: usize) -> Self {
        Self::new(Tensor::zeros(&[d]), Tensor::zeros(&[d]))
    }

    /// Zero-mean with a common standard deviation.
    pub fn isotropic(d: usize, std: f64) -> Self {
        assert!(std > 0.0, "standard deviation must be positive");
        Self::new(Tensor::zeros(&[d]), Tensor::full(&[d], std.ln()))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Reparameterized draw x = mean + exp(log_std) ⊙ ε, ε ∼ N(0, I).
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let eps = rng.standard_normal_vec(self.dim());
        self.sample_with_eps(&eps)
    }

    pub fn sample_with_eps(&self, eps: &[f64]) -> Vec<f64> {
        assert_eq!(eps.len(), self.dim());
        self.mean
            .data()
            .iter()
            .zip(self.log_std.data())
            .zip(eps)
            .map(|((&m, &s), &e)| m + s.exp() * e)
            .collect()
    }

    pub fn log_prob(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim());
        let mut lp = 0.0;
        for ((&m, &s), &xi) in self.mean.data().iter().zip(self.log_std.data()).zip(x) {
            let z = (xi - m) * (-s).exp();
            lp += -s - 0.5 * LN_2PI - 0.5 * z * z;
        }
        lp
    }
}

/// log N(x; 0, I).
pub fn std_normal_log_prob(x: &[f64]) -> f64 {
    let sq: f64 = x.iter().map(|&v| v * v).sum();
    -0.5 * (x.len() as f64) * LN_2PI - 0.5 * sq
}

/// Graph form of log N(x; 0, I) for a vector node.
pub fn std_normal_log_prob_node(g: &mut Graph<'_>, x: NodeId) -> NodeId {
    let d = g.raw_value(x).len() as f64;
    let sq = g.dot(x, x);
    let half = g.scalar_const(-0.5);
    let quad = g.mul(half, sq);
    let c = g.scalar_const(-0.5 * d * LN_2PI);
    g.add(quad, c)
}

/// Graph form of the reparameterized draw: mean + exp(log_std) ⊙ ε.
pub fn gaussian_reparam_node(
    g: &mut Graph<'_>,
    mean: NodeId,
    log_std: NodeId,
    eps: &[f64],
) -> NodeId {
    let e = g.vector_const(eps.to_vec());
    let std = g.exp(log_std);
    let scaled = g.mul(std, e);
    g.add(mean, scaled)
}

/// Graph form of the diagonal-Gaussian log-density at an arbitrary point.
pub fn gaussian_log_prob_node(
    g: &mut Graph<'_>,
    mean: NodeId,
    log_std: NodeId,
    x: NodeId,
) -> NodeId {
    let d = g.raw_value(x).len() as f64;
    let diff = g.sub(x, mean);
    let neg_s = g.neg(log_std);
    let inv_std = g.exp(neg_s);
    let z = g.mul(diff, inv_std);
    let zsq = g.mul(z, z);
    let sum_zsq = g.sum(zsq);
    let sum_s = g.sum(log_std);
    let half = g.scalar_const(-0.5);
    let quad = g.mul(half, sum_zsq);
    let a = g.sub(quad, sum_s);
    let c = g.scalar_const(-0.5 * d * LN_2PI);
    g.add(a, c)
}

/// Log-density of a reparameterized draw at the draw itself, written in
/// terms of ε. Same value and same total gradient as evaluating
/// [`gaussian_log_prob_node`] at the sample, but cheaper and exact:
/// log q(x) = −Σ log_std − (d/2) log 2π − ½‖ε‖².
pub fn gaussian_reparam_log_prob_node(g: &mut Graph<'_>, log_std: NodeId, eps: &[f64]) -> NodeId {
    let d = eps.len() as f64;
    let sq: f64 = eps.iter().map(|&e| e * e).sum();
    let sum_s = g.sum(log_std);
    let neg = g.neg(sum_s);
    let c = g.scalar_const(-0.5 * d * LN_2PI - 0.5 * sq);
    g.add(neg, c)
}

/// Draw an index with probability softmax(logits), normalizing through
/// logsumexp so extreme logits cannot overflow.
pub fn categorical_sample(logits: &[f64], rng: &mut Rng) -> Result<usize, StatsError> {
    if logits.is_empty() {
        return Err(StatsError::EmptyLogits);
    }
    if let Some(pos) = logits.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFiniteLogit { index: pos, value: logits[pos] });
    }
    let lse = logsumexp_slice(logits);
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &l) in logits.iter().enumerate() {
        acc += (l - lse).exp();
        if u < acc {
            return Ok(i);
        }
    }
    // Rounding can leave acc slightly below 1; fall back to the last index.
    Ok(logits.len() - 1)
}

/// Draw a bit that is 1 with probability `p`.
pub fn bernoulli_sample(p: f64, rng: &mut Rng) -> Result<bool, StatsError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(StatsError::InvalidProbability(p));
    }
    Ok(rng.uniform() < p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::rng::Rng;
    use crate::testutil::{assert_matches_fd, p};

    #[test]
    fn standard_normal_log_density_at_origin() {
        let d = DiagGaussian::standard(2);
        assert!((d.log_prob(&[0.0, 0.0]) - (-LN_2PI)).abs() < 1e-12);
        assert!((std_normal_log_prob(&[0.0, 0.0]) - (-LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn reparameterization_identity() {
        let d = DiagGaussian::standard(2);
        let x = d.sample_with_eps(&[1.0, 1.0]);
        assert_eq!(x, vec![1.0, 1.0]);
    }

    #[test]
    fn log_prob_matches_shifted_scaled_form() {
        let d = DiagGaussian::new(
            Tensor::vector(vec![0.3, -1.2]),
            Tensor::vector(vec![0.5f64.ln(), 2.0f64.ln()]),
        );
        // hand evaluation coordinate-wise
        let x = [1.0, 0.0];
        let by_hand = (-(0.5f64.ln()) - 0.5 * LN_2PI - 0.5 * ((1.0 - 0.3) / 0.5_f64).powi(2))
            + (-(2.0f64.ln()) - 0.5 * LN_2PI - 0.5 * ((0.0 + 1.2) / 2.0_f64).powi(2));
        assert!((d.log_prob(&x) - by_hand).abs() < 1e-12);
    }

    #[test]
    fn million_draws_match_standard_normal_moments() {
        let d = DiagGaussian::standard(1);
        let mut rng = Rng::new(123);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = d.sample(&mut rng)[0];
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 4e-3, "sample mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "sample variance {var}");
    }

    #[test]
    fn monte_carlo_log_prob_matches_negative_entropy() {
        // E[log N(x;0,I)] = −(d/2)(1 + log 2π) for x ∼ N(0, I)
        let d = 2usize;
        let dist = DiagGaussian::standard(d);
        let mut rng = Rng::new(9);
        let n = 100_000usize;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = dist.sample(&mut rng);
            acc += dist.log_prob(&x);
        }
        let est = acc / n as f64;
        let expect = -(d as f64) / 2.0 * (1.0 + LN_2PI);
        assert!((est - expect).abs() / expect.abs() < 0.01, "{est} vs {expect}");
    }

    #[test]
    fn density_integrates_to_one_by_quadrature() {
        // 1-D Simpson over [-8σ, 8σ] around the mean.
        let cases = [
            DiagGaussian::standard(1),
            DiagGaussian::new(Tensor::vector(vec![0.7]), Tensor::vector(vec![0.3f64.ln()])),
        ];
        for d in cases {
            let (m, s) = (d.mean.data()[0], d.log_std.data()[0].exp());
            let (a, b) = (m - 8.0 * s, m + 8.0 * s);
            let n = 2000usize; // even
            let h = (b - a) / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let x = a + i as f64 * h;
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * d.log_prob(&[x]).exp();
            }
            let integral = acc * h / 3.0;
            assert!((integral - 1.0).abs() < 1e-9, "integral {integral}");
        }
        // 2-D product grid on a standard normal.
        let d2 = DiagGaussian::standard(2);
        let n = 400usize;
        let (a, b) = (-7.0, 7.0);
        let h = (b - a) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let wi = if i == 0 || i == n { 0.5 } else { 1.0 };
                let wj = if j == 0 || j == n { 0.5 } else { 1.0 };
                let x = [a + i as f64 * h, a + j as f64 * h];
                acc += wi * wj * d2.log_prob(&x).exp();
            }
        }
        let integral = acc * h * h;
        assert!((integral - 1.0).abs() < 1e-6, "2-D integral {integral}");
    }

    #[test]
    fn pathwise_gradient_matches_fd_with_eps_held_fixed() {
        // loss = ‖x‖², x = mean + exp(log_std) ⊙ ε
        let eps = [0.7, -1.3];
        let mut store = ParamStore::new();
        store.register("mean", Tensor::vector(vec![0.2, -0.4]));
        store.register("log_std", Tensor::vector(vec![0.1, -0.3]));
        assert_matches_fd(&mut store, &|g| {
            let (m, s) = (p(g, "mean"), p(g, "log_std"));
            let x = gaussian_reparam_node(g, m, s, &eps);
            g.dot(x, x)
        });
    }

    #[test]
    fn reparam_log_prob_forms_agree_in_value_and_gradient() {
        let eps = [0.5, -0.9];
        let mut store = ParamStore::new();
        store.register("mean", Tensor::vector(vec![0.3, 1.1]));
        store.register("log_std", Tensor::vector(vec![-0.2, 0.4]));

        // value agreement
        let density_form = |g: &mut Graph<'_>| {
            let (m, s) = (p(g, "mean"), p(g, "log_std"));
            let x = gaussian_reparam_node(g, m, s, &eps);
            gaussian_log_prob_node(g, m, s, x)
        };
        let eps_form = |g: &mut Graph<'_>| {
            let s = p(g, "log_std");
            gaussian_reparam_log_prob_node(g, s, &eps)
        };
        let mut g = Graph::new(&store);
        let a = density_form(&mut g);
        let b = eps_form(&mut g);
        let (va, vb) = (g.scalar(a).unwrap(), g.scalar(b).unwrap());
        assert!((va - vb).abs() < 1e-12, "{va} vs {vb}");

        // both forms carry the same total gradient
        let bwa = {
            let mut g = Graph::new(&store);
            let l = density_form(&mut g);
            g.backward(l).unwrap().grads
        };
        let bwb = {
            let mut g = Graph::new(&store);
            let l = eps_form(&mut g);
            g.backward(l).unwrap().grads
        };
        for id in store.ids() {
            for (x, y) in bwa.get(id).data().iter().zip(bwb.get(id).data()) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
        // FD against the density form too
        assert_matches_fd(&mut store, &density_form);
    }

    #[test]
    fn categorical_single_logit_is_always_zero() {
        let mut rng = Rng::new(1);
        for _ in 0..100 {
            assert_eq!(categorical_sample(&[0.0], &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn categorical_equal_logits_are_uniform() {
        let mut rng = Rng::new(2);
        let n = 100_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[categorical_sample(&[5.0, 5.0, 5.0], &mut rng).unwrap()] += 1;
        }
        // 3σ band around 1/3 for a binomial proportion
        let p0 = 1.0 / 3.0;
        let sigma = (p0 * (1.0 - p0) / n as f64).sqrt();
        for &c in &counts {
            let f = c as f64 / n as f64;
            assert!((f - p0).abs() < 3.0 * sigma + 1e-9, "frequency {f}");
        }
    }

    #[test]
    fn categorical_log1_log3_gives_three_quarters() {
        let mut rng = Rng::new(3);
        let n = 100_000usize;
        let logits = [0.0, 3.0f64.ln()];
        let mut ones = 0usize;
        for _ in 0..n {
            if categorical_sample(&logits, &mut rng).unwrap() == 1 {
                ones += 1;
            }
        }
        let f = ones as f64 / n as f64;
        let sigma = (0.75 * 0.25 / n as f64).sqrt();
        assert!((f - 0.75).abs() < 3.0 * sigma, "frequency {f}");
    }

    #[test]
    fn categorical_extreme_logits_do_not_overflow() {
        let mut rng = Rng::new(4);
        for _ in 0..100 {
            let i = categorical_sample(&[1000.0, 0.0], &mut rng).unwrap();
            assert_eq!(i, 0);
        }
    }

    #[test]
    fn categorical_rejects_bad_input() {
        let mut rng = Rng::new(5);
        assert!(matches!(categorical_sample(&[], &mut rng), Err(StatsError::EmptyLogits)));
        assert!(matches!(
            categorical_sample(&[0.0, f64::NAN], &mut rng),
            Err(StatsError::NonFiniteLogit { index: 1, .. })
        ));
    }

    #[test]
    fn bernoulli_edge_probabilities() {
        let mut rng = Rng::new(6);
        for _ in 0..1000 {
            assert!(!bernoulli_sample(0.0, &mut rng).unwrap());
            assert!(bernoulli_sample(1.0, &mut rng).unwrap());
        }
    }

    #[test]
    fn bernoulli_frequency_matches_p() {
        let mut rng = Rng::new(7);
        let n = 100_000usize;
        let p0 = 0.3;
        let mut ones = 0usize;
        for _ in 0..n {
            if bernoulli_sample(p0, &mut rng).unwrap() {
                ones += 1;
            }
        }
        let f = ones as f64 / n as f64;
        let sigma = (p0 * (1.0 - p0) / n as f64).sqrt();
        assert!((f - p0).abs() < 3.0 * sigma, "frequency {f}");
    }

    #[test]
    fn bernoulli_rejects_out_of_range() {
        let mut rng = Rng::new(8);
        assert!(bernoulli_sample(-0.1, &mut rng).is_err());
        assert!(bernoulli_sample(1.1, &mut rng).is_err());
    }
}
