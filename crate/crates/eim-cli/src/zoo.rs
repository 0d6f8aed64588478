//! The `bounds` command: estimate every multi-sample bound in the zoo on a
//! seeded linear-Gaussian reference model (plus a correlated pair for the
//! mutual-information bound) and report each estimate next to its
//! closed-form oracle.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use eim_core::bounds::{
    avvi_snis_realization, infonce_mi_bound, iwae_realization, mean_se, sivi_realization,
    CorrelatedGaussianPair, Critic, GaussianLinearModel, HierarchicalGaussianQ,
};
use eim_core::dist::DiagGaussian;
use eim_core::rng::Rng;
use eim_core::Tensor;

#[derive(Args)]
pub struct BoundsArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent realizations behind each estimate.
    #[arg(long, default_value_t = 1000)]
    n_outer: usize,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn diag(mean: &[f64], std: &[f64]) -> DiagGaussian {
    DiagGaussian::new(
        Tensor::vector(mean.to_vec()),
        Tensor::vector(std.iter().map(|s| s.ln()).collect()),
    )
}

pub fn run(args: &BoundsArgs) -> Result<()> {
    eprintln!("resolved config: seed={} n_outer={}", args.seed, args.n_outer);
    let mut rng = Rng::new(args.seed);
    let n_outer = args.n_outer;

    // seeded 3-observation, 2-latent reference model and one observation
    let a: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
    let b: Vec<f64> = (0..3).map(|_| 0.3 * rng.standard_normal()).collect();
    let g = GaussianLinearModel::new(Tensor::matrix(3, 2, a), b, 0.5);
    let x: Vec<f64> = {
        let z: Vec<f64> = (0..2).map(|_| rng.standard_normal()).collect();
        (0..3)
            .map(|i| {
                g.b[i]
                    + (0..2).map(|j| g.a.at2(i, j) * z[j]).sum::<f64>()
                    + 0.5f64.sqrt() * rng.standard_normal()
            })
            .collect()
    };
    let exact = g.exact_log_marginal(&x)?;

    // overdispersed diagonal proposal centered at the posterior mean
    let (post_mean, post_cov) = g.exact_posterior(&x)?;
    let post_std = [post_cov[0].sqrt(), post_cov[3].sqrt()];
    let q = diag(&post_mean, &[1.4 * post_std[0], 1.4 * post_std[1]]);

    let mut csv = String::from("bound,k,estimate,se,oracle,gap\n");
    let mut push = |name: &str, k: usize, est: f64, se: f64, oracle: f64| {
        csv.push_str(&format!("{name},{k},{est:?},{se:?},{oracle:?},{:?}\n", oracle - est));
    };

    for &k in &[1usize, 8, 64, 512] {
        let vals: Vec<f64> = (0..n_outer)
            .map(|_| {
                let zs: Vec<Vec<f64>> = (0..k).map(|_| q.sample(&mut rng)).collect();
                iwae_realization(&g, &x, &q, &zs)
            })
            .collect();
        let (est, se) = mean_se(&vals);
        push("iwae", k, est, se, exact);
    }

    for &k in &[1usize, 8, 64, 512] {
        let vals: Vec<f64> = (0..n_outer)
            .map(|_| {
                let zs: Vec<Vec<f64>> = (0..k).map(|_| q.sample(&mut rng)).collect();
                avvi_snis_realization(&g, &x, &q, &zs, &mut rng)
            })
            .collect::<std::result::Result<_, _>>()?;
        let (est, se) = mean_se(&vals);
        push("avvi_snis", k, est, se, exact);
    }

    let hq = HierarchicalGaussianQ {
        lambda: diag(&post_mean, &[0.8, 0.8]),
        loading: Tensor::matrix(2, 2, vec![0.7, 0.0, 0.0, 0.7]),
        offset: vec![0.3 * post_mean[0], 0.3 * post_mean[1]],
        z_log_std: vec![post_std[0].ln(), post_std[1].ln()],
    };
    for &k in &[1usize, 4, 16, 64] {
        let vals: Vec<f64> = (0..n_outer)
            .map(|_| {
                let lambda = hq.sample_lambda(&mut rng);
                let z = hq.sample_z(&lambda, &mut rng);
                let extras: Vec<Vec<f64>> = (1..k).map(|_| hq.sample_lambda(&mut rng)).collect();
                sivi_realization(&g, &hq, &x, &z, &lambda, &extras)
            })
            .collect();
        let (est, se) = mean_se(&vals);
        push("sivi", k, est, se, exact);
    }

    let pair = CorrelatedGaussianPair::new(0.9, 1);
    for &k in &[2usize, 8, 32, 128] {
        let (est, se) = infonce_mi_bound(&pair, &Critic::OptimalDensityRatio, k, n_outer, &mut rng);
        push("infonce", k, est, se, pair.true_mi());
    }

    match &args.out {
        Some(path) => {
            fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{csv}"),
    }
    Ok(())
}
