//! Reverse-mode differentiation of the forward pass. The arena stores nodes
//! in post-order, so a reverse sweep visits parents before children; each
//! node scatters its pair-vector gradients into the child hidden and cell
//! slots, and leaves accumulate into their embedding rows.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2};

use super::compose::{compose_pair_backward, outer};
use super::forward::{loss, loss_logit_grads, AnnotatedTree, LossMode};
use super::params::{GateParams, TreeLstmParams, UNKNOWN_WORD};
use super::{
    Hyper, NeuralError, GATE_CANDIDATE, GATE_CROSS_CANDIDATE, GATE_CROSS_INPUT, GATE_FORGET,
    GATE_INPUT, GATE_OUTPUT, META_DIM,
};

/// Gradients with the same layout as [`TreeLstmParams`]; embedding rows are
/// sparse over the words that actually occur.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub gates: Vec<GateParams>,
    pub w_out: Array2<f64>,
    pub embeddings: BTreeMap<String, Array1<f64>>,
}

impl Gradients {
    pub fn zeros(hyper: &Hyper) -> Self {
        Self {
            gates: (0..super::NUM_GATES).map(|_| GateParams::zeros(hyper)).collect(),
            w_out: Array2::zeros((Hyper::CLASSES, hyper.d)),
            embeddings: BTreeMap::new(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (mine, theirs) in self.gates.iter_mut().zip(&other.gates) {
            mine.tensor += &theirs.tensor;
            for i in 0..2 {
                for j in 0..2 {
                    mine.w[i][j] += &theirs.w[i][j];
                }
            }
        }
        self.w_out += &other.w_out;
        for (word, grad) in &other.embeddings {
            match self.embeddings.get_mut(word) {
                Some(slot) => *slot += grad,
                None => {
                    self.embeddings.insert(word.clone(), grad.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for gate in &mut self.gates {
            gate.tensor.mapv_inplace(|v| v * factor);
            for row in &mut gate.w {
                for w in row {
                    w.mapv_inplace(|v| v * factor);
                }
            }
        }
        self.w_out.mapv_inplace(|v| v * factor);
        for grad in self.embeddings.values_mut() {
            grad.mapv_inplace(|v| v * factor);
        }
    }

    /// Reads the gradient for the parameter coordinate `idx` of `params`
    /// (same layout as [`TreeLstmParams::coord_get`]); absent embedding rows
    /// read as zero.
    pub fn coord_get(&self, idx: usize, params: &TreeLstmParams) -> f64 {
        let d = params.hyper.d;
        let pair = params.hyper.pair_dim();
        let tensor_len = pair * pair * d;
        let w_len = d * pair;
        let per_gate = tensor_len + 4 * w_len;
        let gates_len = super::NUM_GATES * per_gate;
        if idx < gates_len {
            let gate = &self.gates[idx / per_gate];
            let off = idx % per_gate;
            if off < tensor_len {
                return gate.tensor.as_slice().expect("contiguous")[off];
            }
            let off = off - tensor_len;
            let w = &gate.w[off / w_len / 2][(off / w_len) % 2];
            return w.as_slice().expect("contiguous")[off % w_len];
        }
        let idx = idx - gates_len;
        let out_len = Hyper::CLASSES * d;
        if idx < out_len {
            return self.w_out.as_slice().expect("contiguous")[idx];
        }
        let idx = idx - out_len;
        let word = params
            .embeddings
            .keys()
            .nth(idx / d)
            .expect("coordinate out of range");
        match self.embeddings.get(word) {
            Some(grad) => grad[idx % d],
            None => 0.0,
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut max = 0.0f64;
        for gate in &self.gates {
            for &v in gate.tensor.iter() {
                max = max.max(v.abs());
            }
            for row in &gate.w {
                for w in row {
                    for &v in w.iter() {
                        max = max.max(v.abs());
                    }
                }
            }
        }
        for &v in self.w_out.iter() {
            max = max.max(v.abs());
        }
        for grad in self.embeddings.values() {
            for &v in grad.iter() {
                max = max.max(v.abs());
            }
        }
        max
    }
}

/// Exact gradients of the supervision loss with respect to every parameter,
/// including the embeddings of words present in the tree. Returns the loss
/// value alongside.
pub fn backward(
    tree: &AnnotatedTree,
    params: &TreeLstmParams,
    mode: LossMode,
) -> Result<(f64, Gradients), NeuralError> {
    let d = params.hyper.d;
    let loss_value = loss(tree, mode)?;
    let mut grads = Gradients::zeros(&params.hyper);

    let n = tree.nodes.len();
    let mut dh: Vec<Array1<f64>> = (0..n).map(|_| Array1::zeros(d)).collect();
    let mut dc: Vec<Array1<f64>> = (0..n).map(|_| Array1::zeros(d)).collect();

    // Per-node supervision: dLogits = (p - onehot)/N routed through the head.
    for (idx, dlogits) in loss_logit_grads(tree, mode)? {
        let h = &tree.nodes[idx].state.h;
        grads.w_out += &outer(dlogits.view(), h.view());
        dh[idx] += &params.w_out.t().dot(&dlogits);
    }

    for idx in (0..n).rev() {
        let node = &tree.nodes[idx];
        match node.children {
            Some((l, r)) => {
                let cache = node.cache.as_ref().expect("internal nodes carry a cache");
                let gh = &dh[idx];
                let gc = &dc[idx];

                // h = g (.) tanh(C)
                let d_g = gh * &cache.tanh_c;
                let d_c = gh * &cache.g * cache.tanh_c.mapv(|v| 1.0 - v * v) + gc;

                // C = right.c (.) f + C' (.) i + i'' (.) C''
                let right_c = &tree.nodes[r].state.c;
                let d_f = &d_c * right_c;
                let d_right_c_direct = &d_c * &cache.f;
                let d_i = &d_c * &cache.c_cand;
                let d_cand = &d_c * &cache.i;
                let d_icross = &d_c * &cache.c_cross;
                let d_ccross = &d_c * &cache.i_cross;

                // Through the activations to the pre-activation gradients.
                let a_f = &d_f * &cache.f * &cache.f.mapv(|v| 1.0 - v);
                let a_i = &d_i * &cache.i * &cache.i.mapv(|v| 1.0 - v);
                let a_cand = &d_cand * &cache.c_cand.mapv(|v| 1.0 - v * v);
                let a_icross = &d_icross * &cache.i_cross * &cache.i_cross.mapv(|v| 1.0 - v);
                let a_ccross = &d_ccross * &cache.c_cross.mapv(|v| 1.0 - v * v);
                let a_g = &d_g * &cache.g * &cache.g.mapv(|v| 1.0 - v);

                let mut ds_main = Array1::zeros(params.hyper.pair_dim());
                for (k, a) in [
                    (GATE_FORGET, &a_f),
                    (GATE_INPUT, &a_i),
                    (GATE_CANDIDATE, &a_cand),
                    (GATE_OUTPUT, &a_g),
                ] {
                    ds_main += &compose_pair_backward(
                        k,
                        &cache.s_main,
                        cache.ij,
                        a,
                        params,
                        &mut grads.gates[k],
                    );
                }
                let mut ds_cross = Array1::zeros(params.hyper.pair_dim());
                for (k, a) in [(GATE_CROSS_INPUT, &a_icross), (GATE_CROSS_CANDIDATE, &a_ccross)] {
                    ds_cross += &compose_pair_backward(
                        k,
                        &cache.s_cross,
                        cache.ij,
                        a,
                        params,
                        &mut grads.gates[k],
                    );
                }

                // s_main = [left.h | right.meta | right.meta, right.h];
                // metadata slots are constants and take no gradient.
                let half = params.hyper.half_dim();
                dh[l] += &ds_main.slice(s![..d]);
                dh[r] += &ds_main.slice(s![half + META_DIM..]);
                // s_cross = [left.c | right.meta | right.c | left.meta].
                dc[l] += &ds_cross.slice(s![..d]);
                dc[r] += &ds_cross.slice(s![half..half + d]);
                dc[r] += &d_right_c_direct;
            }
            None => {
                // Leaf: the hidden gradient lands on the word's embedding row
                // (or the unknown-word row); the cell state is a constant.
                let token = node.token.as_ref().expect("leaves carry tokens");
                let key = if params.embeddings.contains_key(token) {
                    token.clone()
                } else {
                    UNKNOWN_WORD.to_string()
                };
                match grads.embeddings.get_mut(&key) {
                    Some(slot) => *slot += &dh[idx],
                    None => {
                        grads.embeddings.insert(key, dh[idx].clone());
                    }
                }
            }
        }
    }

    Ok((loss_value, grads))
}
