//! Finite-support toy instances with brute-force density enumeration.
//! These give every sampler and bound an exact oracle: the model's true
//! density is computed by summing over all draw configurations.

use crate::error::BoundsError;
use crate::graph::{sigmoid, Graph, NodeId};
use crate::models::snis::SnisModel;
use crate::models::trs::TrsModel;
use crate::nn::Energy;
use crate::params::ParamStore;
use crate::proposal::Proposal;

const ENUMERATION_LIMIT: u64 = 1_000_000;

/// Energy defined by exact-match table lookup over a finite point set.
/// Gradients are zero; graph nodes are constants, so only values (not
/// parameter derivatives) flow through bounds built on it.
#[derive(Clone, Debug)]
pub struct TableEnergy {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl TableEnergy {
    pub fn new(points: Vec<Vec<f64>>, values: Vec<f64>) -> Self {
        assert_eq!(points.len(), values.len());
        assert!(!points.is_empty());
        TableEnergy { points, values }
    }

    fn lookup(&self, x: &[f64]) -> f64 {
        let i = self
            .points
            .iter()
            .position(|p| p.as_slice() == x)
            .unwrap_or_else(|| panic!("point {x:?} not in table support"));
        self.values[i]
    }
}

impl Energy for TableEnergy {
    fn dim(&self) -> usize {
        self.points[0].len()
    }

    fn value(&self, _store: &ParamStore, x: &[f64]) -> f64 {
        self.lookup(x)
    }

    fn grad(&self, _store: &ParamStore, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn value_node(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        let point = g.raw_value(x).data().to_vec();
        let v = self.lookup(&point);
        g.scalar_const(v)
    }

    fn grad_node(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        let n = g.raw_value(x).len();
        g.vector_const(vec![0.0; n])
    }

    fn value_batch_node(&self, g: &mut Graph<'_>, xs: NodeId) -> NodeId {
        let t = g.raw_value(xs).clone();
        let d = self.dim();
        let vals: Vec<f64> =
            (0..t.rows()).map(|r| self.lookup(&t.data()[r * d..(r + 1) * d])).collect();
        g.vector_const(vals)
    }
}

fn finite_support(p: &Proposal) -> (&[Vec<f64>], Vec<f64>) {
    match p {
        Proposal::Finite { points, log_probs } => {
            (points.as_slice(), log_probs.iter().map(|&l| l.exp()).collect())
        }
        _ => panic!("enumeration requires a finite proposal"),
    }
}

/// Exact p_TRS over the proposal's support, by walking every sequence of
/// draws and accept/reject outcomes.
pub fn trs_exact_density<E: Energy>(
    m: &TrsModel<E>,
    store: &ParamStore,
) -> Result<Vec<f64>, BoundsError> {
    let (points, probs) = finite_support(&m.proposal);
    let s = points.len() as u64;
    let configs = s.checked_pow(m.t as u32).unwrap_or(u64::MAX);
    if configs > ENUMERATION_LIMIT {
        return Err(BoundsError::EnumerationTooLarge { configs, limit: ENUMERATION_LIMIT });
    }
    let accepts: Vec<f64> =
        points.iter().map(|p| sigmoid(-m.energy.value(store, p))).collect();

    fn walk(
        step: usize,
        t: usize,
        prefix: f64,
        probs: &[f64],
        accepts: &[f64],
        out: &mut [f64],
    ) {
        if step == t {
            // forced acceptance of the final draw
            for (j, &pj) in probs.iter().enumerate() {
                out[j] += prefix * pj;
            }
            return;
        }
        for (j, &pj) in probs.iter().enumerate() {
            out[j] += prefix * pj * accepts[j];
            walk(step + 1, t, prefix * pj * (1.0 - accepts[j]), probs, accepts, out);
        }
    }

    let mut out = vec![0.0; points.len()];
    walk(1, m.t, 1.0, &probs, &accepts, &mut out);
    Ok(out)
}

/// Exact p_SNIS over the proposal's support, by enumerating every K-tuple
/// of candidate draws and the categorical choice within it.
pub fn snis_exact_density<E: Energy>(
    m: &SnisModel<E>,
    store: &ParamStore,
) -> Result<Vec<f64>, BoundsError> {
    let (points, probs) = finite_support(&m.proposal);
    let s = points.len();
    let configs = (s as u64).checked_pow(m.k as u32).unwrap_or(u64::MAX);
    if configs > ENUMERATION_LIMIT {
        return Err(BoundsError::EnumerationTooLarge { configs, limit: ENUMERATION_LIMIT });
    }
    let weights: Vec<f64> =
        points.iter().map(|p| (-m.energy.value(store, p)).exp()).collect();

    let mut out = vec![0.0; s];
    let mut tuple = vec![0usize; m.k];
    loop {
        let tuple_prob: f64 = tuple.iter().map(|&j| probs[j]).product();
        let total_w: f64 = tuple.iter().map(|&j| weights[j]).sum();
        for &j in &tuple {
            out[j] += tuple_prob * weights[j] / total_w;
        }
        // odometer increment
        let mut pos = 0;
        loop {
            tuple[pos] += 1;
            if tuple[pos] < s {
                break;
            }
            tuple[pos] = 0;
            pos += 1;
            if pos == m.k {
                return Ok(out);
            }
        }
    }
}

/// Two-point TRS instance with near-certain acceptance of A and near-certain
/// rejection of B at T = 2: p_TRS = (¾, ¼) up to O(1e−17).
pub fn two_point_trs_toy(store: &mut ParamStore) -> TrsModel<TableEnergy> {
    let points = vec![vec![0.0], vec![1.0]];
    let proposal = Proposal::finite(points.clone(), &[0.5, 0.5]);
    let energy = TableEnergy::new(points, vec![-40.0, 40.0]);
    TrsModel::with_energy(store, proposal, energy, 2)
}

/// Two-point SNIS instance with weights (1, 3) at K = 2: p_SNIS = (⅜, ⅝).
pub fn two_point_snis_toy() -> SnisModel<TableEnergy> {
    let points = vec![vec![0.0], vec![1.0]];
    let proposal = Proposal::finite(points.clone(), &[0.5, 0.5]);
    let energy = TableEnergy::new(points, vec![0.0, -(3.0f64.ln())]);
    SnisModel::with_energy(proposal, energy, 2)
}
