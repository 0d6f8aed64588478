//! Bound zoo on analytically tractable Gaussian models: the multi-sample
//! importance-weighted bound (IWAE), the auxiliary-variable bound with an
//! SNIS variational family (identical to IWAE draw-for-draw), the
//! semi-implicit multi-sample bound, and the InfoNCE mutual-information
//! bound. Every bound here has a closed-form oracle.

use crate::dist::{std_normal_log_prob, DiagGaussian, LN_2PI};
use crate::error::{BoundsError, StatsError};
use crate::graph::logsumexp_slice;
use crate::linalg::{cholesky, cholesky_log_det, cholesky_solve};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Linear-Gaussian latent-variable model: z ∼ N(0, I_m),
/// x | z ∼ N(Az + b, σ²I_n). Marginal and posterior are closed-form.
#[derive(Clone, Debug)]
pub struct GaussianLinearModel {
    /// n×m loading matrix.
    pub a: Tensor,
    pub b: Vec<f64>,
    pub obs_var: f64,
}

impl GaussianLinearModel {
    pub fn new(a: Tensor, b: Vec<f64>, obs_var: f64) -> Self {
        assert_eq!(a.rank(), 2);
        assert_eq!(a.rows(), b.len());
        assert!(obs_var > 0.0, "observation variance must be positive");
        GaussianLinearModel { a, b, obs_var }
    }

    pub fn obs_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.a.cols()
    }

    /// log p(x, z) = log N(z; 0, I) + log N(x; Az + b, σ²I).
    pub fn log_joint(&self, x: &[f64], z: &[f64]) -> f64 {
        let (n, m) = (self.obs_dim(), self.latent_dim());
        assert_eq!(x.len(), n);
        assert_eq!(z.len(), m);
        let mut quad = 0.0;
        for i in 0..n {
            let mean_i = self.b[i]
                + (0..m).map(|j| self.a.at2(i, j) * z[j]).sum::<f64>();
            let r = x[i] - mean_i;
            quad += r * r;
        }
        let log_lik =
            -0.5 * n as f64 * (LN_2PI + self.obs_var.ln()) - 0.5 * quad / self.obs_var;
        std_normal_log_prob(z) + log_lik
    }

    /// Closed-form log p(x) = log N(x; b, AAᵀ + σ²I).
    pub fn exact_log_marginal(&self, x: &[f64]) -> Result<f64, BoundsError> {
        let (n, m) = (self.obs_dim(), self.latent_dim());
        assert_eq!(x.len(), n);
        let mut cov = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                cov[i * n + j] =
                    (0..m).map(|k| self.a.at2(i, k) * self.a.at2(j, k)).sum::<f64>();
            }
            cov[i * n + i] += self.obs_var;
        }
        let l = cholesky(n, &cov)?;
        let diff: Vec<f64> = x.iter().zip(&self.b).map(|(&xi, &bi)| xi - bi).collect();
        let sol = cholesky_solve(n, &l, &diff);
        let quad: f64 = diff.iter().zip(&sol).map(|(&d, &s)| d * s).sum();
        Ok(-0.5 * (n as f64 * LN_2PI + cholesky_log_det(n, &l) + quad))
    }

    /// Exact Gaussian posterior p(z|x): returns (mean, covariance m×m).
    pub fn exact_posterior(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), BoundsError> {
        let (n, m) = (self.obs_dim(), self.latent_dim());
        assert_eq!(x.len(), n);
        // precision Λ = I + AᵀA/σ², mean = Λ⁻¹ Aᵀ(x−b)/σ²
        let mut lambda = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                lambda[i * m + j] =
                    (0..n).map(|k| self.a.at2(k, i) * self.a.at2(k, j)).sum::<f64>()
                        / self.obs_var;
            }
            lambda[i * m + i] += 1.0;
        }
        let l = cholesky(m, &lambda)?;
        let rhs: Vec<f64> = (0..m)
            .map(|i| {
                (0..n).map(|k| self.a.at2(k, i) * (x[k] - self.b[k])).sum::<f64>()
                    / self.obs_var
            })
            .collect();
        let mean = cholesky_solve(m, &l, &rhs);
        let mut cov = vec![0.0; m * m];
        for col in 0..m {
            let mut e = vec![0.0; m];
            e[col] = 1.0;
            let c = cholesky_solve(m, &l, &e);
            for row in 0..m {
                cov[row * m + col] = c[row];
            }
        }
        Ok((mean, cov))
    }
}

/// One realization of the K-sample importance-weighted estimator from given
/// latent draws: logsumexp_i(log p(x, z_i) − log q̃(z_i)) − log K.
pub fn iwae_realization(
    g: &GaussianLinearModel,
    x: &[f64],
    q: &DiagGaussian,
    zs: &[Vec<f64>],
) -> f64 {
    assert!(!zs.is_empty());
    let logs: Vec<f64> = zs.iter().map(|z| g.log_joint(x, z) - q.log_prob(z)).collect();
    logsumexp_slice(&logs) - (zs.len() as f64).ln()
}

/// Monte Carlo average of the K-sample importance-weighted bound over
/// `n_outer` independent realizations.
pub fn iwae_bound(
    g: &GaussianLinearModel,
    x: &[f64],
    q: &DiagGaussian,
    k: usize,
    n_outer: usize,
    rng: &mut Rng,
) -> f64 {
    assert!(k >= 1 && n_outer >= 1);
    let mut acc = 0.0;
    for _ in 0..n_outer {
        let zs: Vec<Vec<f64>> = (0..k).map(|_| q.sample(rng)).collect();
        acc += iwae_realization(g, x, q, &zs);
    }
    acc / n_outer as f64
}

/// One realization of the auxiliary-variable bound with an SNIS variational
/// family, assembled literally: pick i from the self-normalized weights of
/// the shared draws, then evaluate log [p(x, z_i)·r(λ|z_i, x) / q(z_i, λ|x)]
/// where λ is the remaining draws plus the index. Algebraically equal to
/// [`iwae_realization`] on the same draws.
pub fn avvi_snis_realization(
    g: &GaussianLinearModel,
    x: &[f64],
    q: &DiagGaussian,
    zs: &[Vec<f64>],
    rng: &mut Rng,
) -> Result<f64, StatsError> {
    let k = zs.len();
    assert!(k >= 1);
    let log_w: Vec<f64> = zs.iter().map(|z| g.log_joint(x, z) - q.log_prob(z)).collect();
    let i = crate::dist::categorical_sample(&log_w, rng)?;
    // log q(z_i, λ | x) = Σ_k log q̃(z_k) + log(w_i / Σw)
    let log_q_all: f64 = zs.iter().map(|z| q.log_prob(z)).sum();
    let log_sum_w = logsumexp_slice(&log_w);
    let log_q_joint = log_q_all + (log_w[i] - log_sum_w);
    // log r(λ | z_i, x) = log(1/K) + Σ_{j≠i} log q̃(z_j)
    let log_r = -(k as f64).ln() + (log_q_all - q.log_prob(&zs[i]));
    Ok(g.log_joint(x, &zs[i]) + log_r - log_q_joint)
}

/// Monte Carlo average of the SNIS auxiliary-variable bound.
pub fn avvi_snis_bound(
    g: &GaussianLinearModel,
    x: &[f64],
    q: &DiagGaussian,
    k: usize,
    n_outer: usize,
    rng: &mut Rng,
) -> Result<f64, StatsError> {
    assert!(k >= 1 && n_outer >= 1);
    let mut acc = 0.0;
    for _ in 0..n_outer {
        let zs: Vec<Vec<f64>> = (0..k).map(|_| q.sample(rng)).collect();
        acc += avvi_snis_realization(g, x, q, &zs, rng)?;
    }
    Ok(acc / n_outer as f64)
}

/// Hierarchical Gaussian variational family for the semi-implicit bound:
/// λ ∼ q(λ|x) diagonal Gaussian, z | λ ∼ N(M·λ + c, diag(exp(2·log_std))).
#[derive(Clone, Debug)]
pub struct HierarchicalGaussianQ {
    pub lambda: DiagGaussian,
    /// m×L loading M of the conditional mean.
    pub loading: Tensor,
    pub offset: Vec<f64>,
    pub z_log_std: Vec<f64>,
}

impl HierarchicalGaussianQ {
    pub fn latent_dim(&self) -> usize {
        self.offset.len()
    }

    pub fn cond_mean(&self, lambda: &[f64]) -> Vec<f64> {
        let (m, l) = (self.loading.rows(), self.loading.cols());
        assert_eq!(lambda.len(), l);
        (0..m)
            .map(|i| {
                self.offset[i]
                    + (0..l).map(|j| self.loading.at2(i, j) * lambda[j]).sum::<f64>()
            })
            .collect()
    }

    /// log q(z | λ, x).
    pub fn cond_log_prob(&self, z: &[f64], lambda: &[f64]) -> f64 {
        let mean = self.cond_mean(lambda);
        let mut acc = -0.5 * z.len() as f64 * LN_2PI;
        for i in 0..z.len() {
            let ls = self.z_log_std[i];
            let r = (z[i] - mean[i]) / ls.exp();
            acc += -ls - 0.5 * r * r;
        }
        acc
    }

    pub fn sample_lambda(&self, rng: &mut Rng) -> Vec<f64> {
        self.lambda.sample(rng)
    }

    pub fn sample_z(&self, lambda: &[f64], rng: &mut Rng) -> Vec<f64> {
        let mean = self.cond_mean(lambda);
        (0..mean.len())
            .map(|i| mean[i] + self.z_log_std[i].exp() * rng.standard_normal())
            .collect()
    }
}

/// One realization of the semi-implicit K-sample bound from explicit draws:
/// log p(x, z) − log[(1/K)(q(z|λ) + Σᵢ q(z|λᵢ))], computed in log space.
pub fn sivi_realization(
    g: &GaussianLinearModel,
    q: &HierarchicalGaussianQ,
    x: &[f64],
    z: &[f64],
    lambda: &[f64],
    extra_lambdas: &[Vec<f64>],
) -> f64 {
    let mut logs = Vec::with_capacity(extra_lambdas.len() + 1);
    logs.push(q.cond_log_prob(z, lambda));
    for l in extra_lambdas {
        logs.push(q.cond_log_prob(z, l));
    }
    let k = logs.len() as f64;
    g.log_joint(x, z) - (logsumexp_slice(&logs) - k.ln())
}

/// Monte Carlo average of the semi-implicit bound: λ and z from the
/// hierarchy, K−1 fresh λ's for the mixture denominator.
pub fn sivi_bound(
    g: &GaussianLinearModel,
    q: &HierarchicalGaussianQ,
    x: &[f64],
    k: usize,
    n_outer: usize,
    rng: &mut Rng,
) -> f64 {
    assert!(k >= 1 && n_outer >= 1);
    let mut acc = 0.0;
    for _ in 0..n_outer {
        let lambda = q.sample_lambda(rng);
        let z = q.sample_z(&lambda, rng);
        let extras: Vec<Vec<f64>> = (1..k).map(|_| q.sample_lambda(rng)).collect();
        acc += sivi_realization(g, q, x, &z, &lambda, &extras);
    }
    acc / n_outer as f64
}

/// Jointly Gaussian pair with componentwise correlation ρ:
/// X ∼ N(0, I_d), Y = ρX + √(1−ρ²)·ε. True mutual information is
/// −(d/2)·log(1−ρ²).
#[derive(Clone, Copy, Debug)]
pub struct CorrelatedGaussianPair {
    pub rho: f64,
    pub d: usize,
}

impl CorrelatedGaussianPair {
    pub fn new(rho: f64, d: usize) -> Self {
        assert!(rho > -1.0 && rho < 1.0);
        assert!(d >= 1);
        CorrelatedGaussianPair { rho, d }
    }

    pub fn true_mi(&self) -> f64 {
        -0.5 * self.d as f64 * (1.0 - self.rho * self.rho).ln()
    }

    pub fn sample_pair(&self, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = (0..self.d).map(|_| rng.standard_normal()).collect();
        let s = (1.0 - self.rho * self.rho).sqrt();
        let y: Vec<f64> =
            x.iter().map(|&xi| self.rho * xi + s * rng.standard_normal()).collect();
        (x, y)
    }

    pub fn sample_x(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.d).map(|_| rng.standard_normal()).collect()
    }

    /// log p(y|x) − log p(y): the optimal density-ratio critic.
    pub fn log_density_ratio(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2 = 1.0 - self.rho * self.rho;
        let mut acc = -0.5 * self.d as f64 * r2.ln();
        for i in 0..self.d {
            let c = y[i] - self.rho * x[i];
            acc += -0.5 * c * c / r2 + 0.5 * y[i] * y[i];
        }
        acc
    }
}

/// Closed-form critics for the contrastive bound. The critic enters as
/// −U(x, y); larger means "this x generated this y".
#[derive(Clone, Copy, Debug)]
pub enum Critic {
    /// −U ≡ c: completely uninformative.
    Constant(f64),
    /// −U = scale·⟨x, y⟩.
    BilinearDot { scale: f64 },
    /// −U = log p(y|x)/p(y): the optimal critic.
    OptimalDensityRatio,
}

impl Critic {
    pub fn neg_u(&self, pair: &CorrelatedGaussianPair, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Critic::Constant(c) => *c,
            Critic::BilinearDot { scale } => {
                scale * x.iter().zip(y).map(|(&a, &b)| a * b).sum::<f64>()
            }
            Critic::OptimalDensityRatio => pair.log_density_ratio(x, y),
        }
    }
}

/// One realization of the contrastive log-ratio: log K − logsumexp over the
/// positive pair and K−1 negatives of the critic differences. By
/// construction ≤ log K, and exactly 0 for a constant critic.
pub fn infonce_realization(
    pair: &CorrelatedGaussianPair,
    critic: &Critic,
    k: usize,
    rng: &mut Rng,
) -> f64 {
    assert!(k >= 2);
    let (x, y) = pair.sample_pair(rng);
    let pos = critic.neg_u(pair, &x, &y);
    let mut diffs = Vec::with_capacity(k);
    for _ in 1..k {
        let xj = pair.sample_x(rng);
        diffs.push(critic.neg_u(pair, &xj, &y) - pos);
    }
    diffs.push(0.0); // the positive pair's own term
    (k as f64).ln() - logsumexp_slice(&diffs)
}

/// Contrastive mutual-information bound: (estimate, standard error) over
/// `n_outer` realizations.
pub fn infonce_mi_bound(
    pair: &CorrelatedGaussianPair,
    critic: &Critic,
    k: usize,
    n_outer: usize,
    rng: &mut Rng,
) -> (f64, f64) {
    assert!(n_outer >= 1);
    let vals: Vec<f64> = (0..n_outer).map(|_| infonce_realization(pair, critic, k, rng)).collect();
    mean_se(&vals)
}

/// (sample mean, standard error of the mean).
pub fn mean_se(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
