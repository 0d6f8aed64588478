//! Small dense networks with tanh hidden layers.
//!
//! Every network operation exists in two synchronized forms: a graph form
//! (nodes, for objectives that need gradients) and a plain numeric form (for
//! sampling and evaluation, where taping would be wasted work). The numeric
//! forms use the same operation order as the graph forms so both agree to
//! rounding.
//!
//! For scalar-valued networks the input gradient ∇ₓU is materialized as an
//! explicit "gradient network": the closed-form backprop expression
//! W₁ᵀ((1−a₁²) ⊙ W₂ᵀ((1−a₂²) ⊙ w₃)) re-expressed in first-order graph ops.
//! Because that expression is itself an ordinary graph, differentiating a
//! scalar function of it yields correct second-order derivatives — which the
//! Hamiltonian sampler's objective requires.

use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// One affine layer; weight layout is `[out, in]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Fully-connected network, tanh on all layers except the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    /// Register parameters for the layer widths in `dims`. Weights get
    /// fan-in-scaled uniform noise, biases start at zero; with `zero_final`
    /// the last layer starts all-zero so the network's initial output is 0.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        zero_final: bool,
        rng: &mut Rng,
    ) -> Mlp {
        assert!(dims.len() >= 2, "network needs at least input and output widths");
        let mut layers = Vec::new();
        for l in 0..dims.len() - 1 {
            let (in_dim, out_dim) = (dims[l], dims[l + 1]);
            let last = l == dims.len() - 2;
            let w = if last && zero_final {
                Tensor::zeros(&[out_dim, in_dim])
            } else {
                let bound = 1.0 / (in_dim as f64).sqrt();
                let data: Vec<f64> =
                    (0..out_dim * in_dim).map(|_| rng.uniform_in(-bound, bound)).collect();
                Tensor::matrix(out_dim, in_dim, data)
            };
            let b = Tensor::zeros(&[out_dim]);
            layers.push(Dense {
                w: store.register(&format!("{prefix}.w{l}"), w),
                b: store.register(&format!("{prefix}.b{l}"), b),
                in_dim,
                out_dim,
            });
        }
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    // ---- graph forms ----------------------------------------------------

    /// Forward pass on a vector node, also returning the hidden activations
    /// (needed by the gradient network).
    fn forward_trace(&self, g: &mut Graph<'_>, x: NodeId) -> (NodeId, Vec<NodeId>) {
        let mut h = x;
        let mut acts = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let w = g.param(layer.w);
            let b = g.param(layer.b);
            let z0 = g.matvec(w, h);
            let z = g.add(z0, b);
            if l + 1 < self.layers.len() {
                h = g.tanh(z);
                acts.push(h);
            } else {
                h = z;
            }
        }
        (h, acts)
    }

    /// Forward pass on a vector node `x` of length `in_dim`.
    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        self.forward_trace(g, x).0
    }

    /// Forward pass for a scalar-valued network, unwrapped to a scalar node.
    pub fn forward_scalar(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        assert_eq!(self.out_dim(), 1, "forward_scalar requires a 1-output network");
        let out = self.forward(g, x);
        g.index(out, 0)
    }

    fn forward_batch_trace(&self, g: &mut Graph<'_>, xs: NodeId) -> (NodeId, Vec<NodeId>) {
        let mut h = xs;
        let mut acts = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let w = g.param(layer.w);
            let b = g.param(layer.b);
            let z0 = g.matmul_tr(h, w);
            let z = g.add_row(z0, b);
            if l + 1 < self.layers.len() {
                h = g.tanh(z);
                acts.push(h);
            } else {
                h = z;
            }
        }
        (h, acts)
    }

    /// Forward pass on a batch node `[S, in_dim] -> [S, out_dim]`.
    pub fn forward_batch(&self, g: &mut Graph<'_>, xs: NodeId) -> NodeId {
        self.forward_batch_trace(g, xs).0
    }

    /// Batch forward for a scalar-valued network, flattened to `[S]`.
    pub fn forward_batch_scalar(&self, g: &mut Graph<'_>, xs: NodeId) -> NodeId {
        assert_eq!(self.out_dim(), 1, "requires a 1-output network");
        let out = self.forward_batch(g, xs);
        let rows = g.raw_value(out).rows();
        g.reshape(out, vec![rows])
    }

    /// ∇ₓ of a scalar-valued network at vector node `x`, as a differentiable
    /// node.
    pub fn input_grad_node(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        assert_eq!(self.out_dim(), 1, "input gradient requires a 1-output network");
        let (_, acts) = self.forward_trace(g, x);
        let wl = g.param(self.layers.last().unwrap().w);
        let mut v = g.row(wl, 0);
        let one = g.scalar_const(1.0);
        for l in (0..self.layers.len() - 1).rev() {
            let a = acts[l];
            let asq = g.mul(a, a);
            let dact = g.sub(one, asq);
            let dz = g.mul(dact, v);
            let w = g.param(self.layers[l].w);
            v = g.mat_t_vec(w, dz);
        }
        v
    }

    /// Batch form of [`Mlp::input_grad_node`]: `[S, in] -> [S, in]`.
    pub fn input_grad_batch_node(&self, g: &mut Graph<'_>, xs: NodeId) -> NodeId {
        assert_eq!(self.out_dim(), 1, "input gradient requires a 1-output network");
        let (_, acts) = self.forward_batch_trace(g, xs);
        let wl = g.param(self.layers.last().unwrap().w);
        let wrow = g.row(wl, 0);
        let one = g.scalar_const(1.0);
        let last_hidden = self.layers.len() - 2;
        let a = acts[last_hidden];
        let asq = g.mul(a, a);
        let dact = g.sub(one, asq);
        let mut d = g.mul_row(dact, wrow);
        for l in (0..self.layers.len() - 1).rev() {
            let w = g.param(self.layers[l].w);
            let gprev = g.matmul(d, w);
            if l == 0 {
                return gprev;
            }
            let a = acts[l - 1];
            let asq = g.mul(a, a);
            let dact = g.sub(one, asq);
            d = g.mul(dact, gprev);
        }
        unreachable!("loop returns at l == 0");
    }

    // ---- numeric forms --------------------------------------------------

    fn eval_trace(&self, store: &ParamStore, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        assert_eq!(x.len(), self.in_dim());
        let mut h = x.to_vec();
        let mut acts = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let w = store.value(layer.w);
            let b = store.value(layer.b);
            let mut z = vec![0.0; layer.out_dim];
            for i in 0..layer.out_dim {
                let row = &w.data()[i * layer.in_dim..(i + 1) * layer.in_dim];
                z[i] = row.iter().zip(&h).map(|(&a, &b)| a * b).sum::<f64>() + b.data()[i];
            }
            if l + 1 < self.layers.len() {
                for v in &mut z {
                    *v = v.tanh();
                }
                acts.push(z.clone());
            }
            h = z;
        }
        (h, acts)
    }

    pub fn eval(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        self.eval_trace(store, x).0
    }

    pub fn eval_scalar(&self, store: &ParamStore, x: &[f64]) -> f64 {
        assert_eq!(self.out_dim(), 1);
        self.eval_trace(store, x).0[0]
    }

    /// Numeric batch forward: `[S, in] -> [S, out]`.
    pub fn eval_batch(&self, store: &ParamStore, xs: &Tensor) -> Tensor {
        assert_eq!(xs.rank(), 2);
        assert_eq!(xs.cols(), self.in_dim());
        let s = xs.rows();
        let mut h = xs.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let w = store.value(layer.w);
            let b = store.value(layer.b);
            let (ni, no) = (layer.in_dim, layer.out_dim);
            let mut z = vec![0.0; s * no];
            for r in 0..s {
                let hrow = &h.data()[r * ni..(r + 1) * ni];
                let zrow = &mut z[r * no..(r + 1) * no];
                for i in 0..no {
                    let wrow = &w.data()[i * ni..(i + 1) * ni];
                    zrow[i] =
                        wrow.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<f64>() + b.data()[i];
                }
            }
            if l + 1 < self.layers.len() {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            h = Tensor::matrix(s, no, z);
        }
        h
    }

    /// Numeric ∇ₓ for a scalar-valued network.
    pub fn grad_input(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.out_dim(), 1);
        let (_, acts) = self.eval_trace(store, x);
        let wl = store.value(self.layers.last().unwrap().w);
        let mut v: Vec<f64> = wl.data()[..self.layers.last().unwrap().in_dim].to_vec();
        for l in (0..self.layers.len() - 1).rev() {
            let a = &acts[l];
            let dz: Vec<f64> = a.iter().zip(&v).map(|(&ai, &vi)| (1.0 - ai * ai) * vi).collect();
            let layer = &self.layers[l];
            let w = store.value(layer.w);
            let mut prev = vec![0.0; layer.in_dim];
            for i in 0..layer.out_dim {
                let row = &w.data()[i * layer.in_dim..(i + 1) * layer.in_dim];
                for j in 0..layer.in_dim {
                    prev[j] += row[j] * dz[i];
                }
            }
            v = prev;
        }
        v
    }
}

/// Scalar-valued energy function U(x), callable in numeric and graph form.
pub trait Energy {
    fn dim(&self) -> usize;
    fn value(&self, store: &ParamStore, x: &[f64]) -> f64;
    fn grad(&self, store: &ParamStore, x: &[f64]) -> Vec<f64>;
    /// Energies of each row of `[S, d]`.
    fn value_batch(&self, store: &ParamStore, xs: &Tensor) -> Vec<f64> {
        let d = self.dim();
        (0..xs.rows()).map(|r| self.value(store, &xs.data()[r * d..(r + 1) * d])).collect()
    }
    fn value_node(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId;
    fn grad_node(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId;
    /// Graph energies of each row of `[S, d]`, as an `[S]` node.
    fn value_batch_node(&self, g: &mut Graph<'_>, xs: NodeId) -> NodeId;
}

/// Learnable energy: a d → 20 → 20 → 1 tanh network whose final layer starts
/// at zero, so U ≡ 0 at initialization and the model starts at its proposal.
#[derive(Clone, Debug)]
pub struct EnergyNet {
    pub mlp: Mlp,
    dim: usize,
}

pub const ENERGY_HIDDEN: usize = 20;

impl EnergyNet {
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut Rng) -> Self {
        let mlp =
            Mlp::register(store, prefix, &[dim, ENERGY_HIDDEN, ENERGY_HIDDEN, 1], true, rng);
        EnergyNet { mlp, dim }
    }
}

impl Energy for EnergyNet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, store: &ParamStore, x: &[f64]) -> f64 {
        self.mlp.eval_scalar(store, x)
    }

    fn grad(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        self.mlp.grad_input(store, x)
    }

    fn value_batch(&self, store: &ParamStore, xs: &Tensor) -> Vec<f64> {
        self.mlp.eval_batch(store, xs).data().to_vec()
    }

    fn value_node(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        self.mlp.forward_scalar(g, x)
    }

    fn grad_node(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        self.mlp.input_grad_node(g, x)
    }

    fn value_batch_node(&self, g: &mut Graph<'_>, xs: NodeId) -> NodeId {
        self.mlp.forward_batch_scalar(g, xs)
    }
}

/// Fixed quadratic energy U(x) = ½‖x‖² with closed-form gradient x; used by
/// tests that need exactly known dynamics.
#[derive(Clone, Debug)]
pub struct QuadraticEnergy {
    pub dim: usize,
}

impl Energy for QuadraticEnergy {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _store: &ParamStore, x: &[f64]) -> f64 {
        0.5 * x.iter().map(|&v| v * v).sum::<f64>()
    }

    fn grad(&self, _store: &ParamStore, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn value_node(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        let sq = g.dot(x, x);
        let half = g.scalar_const(0.5);
        g.mul(half, sq)
    }

    fn grad_node(&self, _g: &mut Graph<'_>, x: NodeId) -> NodeId {
        x
    }

    fn value_batch_node(&self, g: &mut Graph<'_>, xs: NodeId) -> NodeId {
        let sq = g.mul(xs, xs);
        let sums = g.sum_rows(sq);
        let half = g.scalar_const(0.5);
        g.mul(half, sums)
    }
}

/// Constant energy U ≡ c; degenerate acceptance/weighting for tests.
#[derive(Clone, Debug)]
pub struct ConstEnergy {
    pub dim: usize,
    pub c: f64,
}

impl Energy for ConstEnergy {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _store: &ParamStore, _x: &[f64]) -> f64 {
        self.c
    }

    fn grad(&self, _store: &ParamStore, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn value_node(&self, g: &mut Graph<'_>, _x: NodeId) -> NodeId {
        g.scalar_const(self.c)
    }

    fn grad_node(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        let n = g.raw_value(x).len();
        g.vector_const(vec![0.0; n])
    }

    fn value_batch_node(&self, g: &mut Graph<'_>, xs: NodeId) -> NodeId {
        let rows = g.raw_value(xs).rows();
        g.vector_const(vec![self.c; rows])
    }
}

/// Amortized Gaussian head: x ↦ (mean, log_std) of q(ρ|x), a d → 20 → 20 → 2d
/// tanh network whose final layer starts at zero so q begins as N(0, I).
#[derive(Clone, Debug)]
pub struct QNet {
    pub mlp: Mlp,
    dim: usize,
}

impl QNet {
    pub fn register(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut Rng) -> Self {
        let mlp = Mlp::register(
            store,
            prefix,
            &[dim, ENERGY_HIDDEN, ENERGY_HIDDEN, 2 * dim],
            true,
            rng,
        );
        QNet { mlp, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean_log_std(&self, store: &ParamStore, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let out = self.mlp.eval(store, x);
        (out[..self.dim].to_vec(), out[self.dim..].to_vec())
    }

    pub fn mean_log_std_node(&self, g: &mut Graph<'_>, x: NodeId) -> (NodeId, NodeId) {
        let out = self.mlp.forward(g, x);
        let mean = g.slice(out, 0, self.dim);
        let log_std = g.slice(out, self.dim, self.dim);
        (mean, log_std)
    }
}
