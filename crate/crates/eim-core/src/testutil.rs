//! Shared helpers for numeric tests: a central-finite-difference gradient
//! checker and small random-data utilities. Compiled only for tests.

use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use rand::Rng as _;
use rand_chacha::ChaCha12Rng;

pub fn rand_data(rng: &mut ChaCha12Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>() * (hi - lo) + lo).collect()
}

pub fn eval_loss(store: &ParamStore, build: &dyn Fn(&mut Graph<'_>) -> NodeId) -> f64 {
    let mut g = Graph::new(store);
    let loss = build(&mut g);
    g.scalar(loss).expect("finite loss")
}

/// Pull a named parameter into a graph.
pub fn p(g: &mut Graph<'_>, name: &str) -> NodeId {
    let id = g.store().id(name).expect("registered param");
    g.param(id)
}

/// Add `scale`-sized Gaussian noise to every parameter, so zero-initialized
/// layers get nonzero values and nontrivial gradients in tests.
pub fn randomize(store: &mut ParamStore, rng: &mut crate::rng::Rng, scale: f64) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let data: Vec<f64> = store
            .value(id)
            .data()
            .iter()
            .map(|&v| v + scale * rng.standard_normal())
            .collect();
        store.value_mut(id).data_mut().copy_from_slice(&data);
    }
}

/// Check every parameter coordinate of `build`'s scalar loss against central
/// finite differences (step `h`), requiring relative error at most `tol`.
/// Also asserts the reverse sweep visits each node exactly once.
pub fn assert_matches_fd_tol(
    store: &mut ParamStore,
    build: &dyn Fn(&mut Graph<'_>) -> NodeId,
    h: f64,
    tol: f64,
) {
    let analytic = {
        let mut g = Graph::new(store);
        let loss = build(&mut g);
        let bw = g.backward(loss).expect("backward");
        assert_eq!(bw.nodes_visited, g.len(), "each node visited exactly once");
        bw.grads
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for pid in ids {
        for k in 0..store.value(pid).len() {
            let orig = store.value(pid).data()[k];
            store.value_mut(pid).data_mut()[k] = orig + h;
            let fp = eval_loss(store, build);
            store.value_mut(pid).data_mut()[k] = orig - h;
            let fm = eval_loss(store, build);
            store.value_mut(pid).data_mut()[k] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let an = analytic.get(pid).data()[k];
            let scale = an.abs().max(fd.abs()).max(1.0);
            assert!(
                (an - fd).abs() / scale <= tol,
                "param {} coord {k}: analytic {an} vs finite difference {fd}",
                store.name(pid)
            );
        }
    }
}

pub fn assert_matches_fd(store: &mut ParamStore, build: &dyn Fn(&mut Graph<'_>) -> NodeId) {
    assert_matches_fd_tol(store, build, 1e-5, 1e-4);
}
