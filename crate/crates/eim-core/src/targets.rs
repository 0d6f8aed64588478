//! Synthetic 2-D target densities: exact samplers for training data and
//! exact normalized log-densities for evaluation references.
//!
//! Three targets: a mixture of nine Gaussians on the lattice {−1,0,1}², a
//! checkerboard of eight uniform squares, and two concentric rings. The
//! rings density is radial: the radius follows the 1-D mixture
//! f(r) ∝ N(r; 0.6, 0.1) + N(r; 1.3, 0.1) (0.1 is a standard deviation) and
//! the angle is uniform, so the planar density at radius r is
//! f(r) / (2π r Z_r) with Z_r the radial normalizer.

use crate::graph::logsumexp_slice;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const NINE_GAUSSIANS_STD: f64 = 0.1;
/// Standard deviation of each radial ring.
const RINGS_STD: f64 = 0.1;
const LN_2PI: f64 = crate::dist::LN_2PI;

/// Side length of each checkerboard square.
const SQUARE: f64 = 0.25;
/// Lower-left corners of the eight squares.
const SQUARE_ORIGINS: [(f64, f64); 8] = [
    (0.0, 0.0),
    (0.0, 0.5),
    (0.5, 0.0),
    (0.5, 0.5),
    (0.25, 0.25),
    (0.25, 0.75),
    (0.75, 0.25),
    (0.75, 0.75),
];

/// Radial grid extent and resolution for the rings tables.
const RINGS_R_MAX: f64 = 3.0;
const RINGS_GRID: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    NineGaussians,
    Checkerboard,
    TwoRings,
}

impl TargetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TargetKind::NineGaussians => "nine_gaussians",
            TargetKind::Checkerboard => "checkerboard",
            TargetKind::TwoRings => "two_rings",
        }
    }

    pub fn parse(s: &str) -> Option<TargetKind> {
        match s {
            "nine_gaussians" => Some(TargetKind::NineGaussians),
            "checkerboard" => Some(TargetKind::Checkerboard),
            "two_rings" => Some(TargetKind::TwoRings),
            _ => None,
        }
    }
}

/// Tabulated radial CDF for the rings target.
#[derive(Clone, Debug)]
struct RingsTable {
    /// Cumulative trapezoid integral of f on the uniform grid.
    cdf: Vec<f64>,
    /// Z_r = ∫₀³ f(r) dr.
    norm: f64,
    step: f64,
}

fn rings_radial_unnormalized(r: f64) -> f64 {
    let pdf = |mu: f64| {
        let z = (r - mu) / RINGS_STD;
        (-0.5 * z * z).exp() / (RINGS_STD * (2.0 * std::f64::consts::PI).sqrt())
    };
    pdf(0.6) + pdf(1.3)
}

impl RingsTable {
    fn build() -> Self {
        let step = RINGS_R_MAX / (RINGS_GRID - 1) as f64;
        let mut cdf = Vec::with_capacity(RINGS_GRID);
        let mut acc = 0.0;
        let mut prev = rings_radial_unnormalized(0.0);
        cdf.push(0.0);
        for i in 1..RINGS_GRID {
            let cur = rings_radial_unnormalized(i as f64 * step);
            acc += 0.5 * (prev + cur) * step;
            cdf.push(acc);
            prev = cur;
        }
        let norm = acc;
        RingsTable { cdf, norm, step }
    }

    /// Inverse CDF by binary search plus linear interpolation.
    fn inv_cdf(&self, u: f64) -> f64 {
        let target = u * self.norm;
        let hi = self.cdf.partition_point(|&c| c < target);
        if hi == 0 {
            return 0.0;
        }
        if hi >= self.cdf.len() {
            return RINGS_R_MAX;
        }
        let (c0, c1) = (self.cdf[hi - 1], self.cdf[hi]);
        let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
        ((hi - 1) as f64 + frac) * self.step
    }
}

/// One of the three synthetic 2-D targets.
#[derive(Clone, Debug)]
pub struct Target {
    kind: TargetKind,
    rings: Option<RingsTable>,
}

impl Target {
    pub fn new(kind: TargetKind) -> Target {
        let rings = match kind {
            TargetKind::TwoRings => Some(RingsTable::build()),
            _ => None,
        };
        Target { kind, rings }
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    /// One exact sample.
    pub fn sample(&self, rng: &mut Rng) -> [f64; 2] {
        match self.kind {
            TargetKind::NineGaussians => {
                let c = rng.below(9);
                let mx = (c % 3) as f64 - 1.0;
                let my = (c / 3) as f64 - 1.0;
                [
                    mx + NINE_GAUSSIANS_STD * rng.standard_normal(),
                    my + NINE_GAUSSIANS_STD * rng.standard_normal(),
                ]
            }
            TargetKind::Checkerboard => {
                let (ox, oy) = SQUARE_ORIGINS[rng.below(8)];
                [ox + SQUARE * rng.uniform(), oy + SQUARE * rng.uniform()]
            }
            TargetKind::TwoRings => {
                let table = self.rings.as_ref().unwrap();
                let r = table.inv_cdf(rng.uniform());
                let theta = rng.uniform() * 2.0 * std::f64::consts::PI;
                [r * theta.cos(), r * theta.sin()]
            }
        }
    }

    /// `n` samples as an `[n, 2]` tensor.
    pub fn sample_batch(&self, n: usize, rng: &mut Rng) -> Tensor {
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let p = self.sample(rng);
            data.extend_from_slice(&p);
        }
        Tensor::matrix(n, 2, data)
    }

    /// Exact normalized log-density. −∞ off the checkerboard support; the
    /// rings value diverges to +∞ at the exact origin (a measure-zero point
    /// where the polar density is unbounded).
    pub fn log_density(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            TargetKind::NineGaussians => {
                let var = NINE_GAUSSIANS_STD * NINE_GAUSSIANS_STD;
                let mut comps = [0.0f64; 9];
                for (c, slot) in comps.iter_mut().enumerate() {
                    let mx = (c % 3) as f64 - 1.0;
                    let my = (c / 3) as f64 - 1.0;
                    let d2 = (x - mx) * (x - mx) + (y - my) * (y - my);
                    *slot = -(9.0f64).ln() - LN_2PI - var.ln() - 0.5 * d2 / var;
                }
                logsumexp_slice(&comps)
            }
            TargetKind::Checkerboard => {
                let inside = SQUARE_ORIGINS.iter().any(|&(ox, oy)| {
                    x >= ox && x < ox + SQUARE && y >= oy && y < oy + SQUARE
                });
                if inside {
                    2.0f64.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            TargetKind::TwoRings => {
                let table = self.rings.as_ref().unwrap();
                let r = x.hypot(y);
                rings_radial_unnormalized(r).ln()
                    - (2.0 * std::f64::consts::PI * r).ln()
                    - table.norm.ln()
            }
        }
    }

    /// Monte Carlo estimate of E[log p(x)] under the target itself — the
    /// best achievable held-out log-likelihood. Returns (mean, standard
    /// error).
    pub fn reference_avg_log_density(&self, n: usize, rng: &mut Rng) -> (f64, f64) {
        assert!(n >= 1);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let p = self.sample(rng);
            let lp = self.log_density(p[0], p[1]);
            sum += lp;
            sum_sq += lp * lp;
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        (mean, se)
    }
}
