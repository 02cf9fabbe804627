//! Bottom-up evaluation over a parse tree. Leaves start from their word
//! embedding with a zero cell state; each internal node runs the cell over
//! its two children and every node emits a sentiment distribution.

use ndarray::{concatenate, Array1, Axis};

use crate::dist::SentimentDistribution;
use crate::treebank::{NodeKind, ParseTree};

use super::compose::compose_pair;
use super::params::TreeLstmParams;
use super::{
    encode_metadata, sigmoid, softmax, NeuralError, GATE_CANDIDATE, GATE_CROSS_CANDIDATE,
    GATE_CROSS_INPUT, GATE_FORGET, GATE_INPUT, GATE_OUTPUT,
};

/// Which nodes contribute to the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LossMode {
    /// Every node carrying a gold label (the default for fully labeled banks).
    AllLabeledNodes,
    /// Only the root label (for partially labeled data).
    RootOnly,
}

/// Completed per-node values.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    /// Hidden vector: the embedding at leaves, `g (.) tanh(C)` inside.
    pub h: Array1<f64>,
    /// Cell state; zero at leaves.
    pub c: Array1<f64>,
    /// 7-dimensional metadata (category code + entity bit).
    pub meta: Array1<f64>,
    /// Output vector `[meta, h]` as consumed by the parent.
    pub o: Array1<f64>,
    /// Softmax of the sentiment head over `h`.
    pub sentiment: SentimentDistribution,
}

/// Saved intermediates for the backward pass.
#[derive(Debug, Clone)]
pub struct CellCache {
    pub(crate) s_main: Array1<f64>,
    pub(crate) s_cross: Array1<f64>,
    pub(crate) ij: (bool, bool),
    pub(crate) f: Array1<f64>,
    pub(crate) i: Array1<f64>,
    pub(crate) c_cand: Array1<f64>,
    pub(crate) i_cross: Array1<f64>,
    pub(crate) c_cross: Array1<f64>,
    pub(crate) g: Array1<f64>,
    pub(crate) tanh_c: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct AnnotatedNode {
    pub state: NodeState,
    pub label: Option<u8>,
    pub category: String,
    pub entity_flag: bool,
    /// Child arena indices for internal nodes.
    pub children: Option<(usize, usize)>,
    /// Leaf token, when this is a leaf.
    pub token: Option<String>,
    pub(crate) cache: Option<CellCache>,
}

/// A parse tree with every node annotated, stored as a post-order arena so
/// children always precede their parent.
#[derive(Debug, Clone)]
pub struct AnnotatedTree {
    pub nodes: Vec<AnnotatedNode>,
    pub root: usize,
}

impl AnnotatedTree {
    pub fn root_state(&self) -> &NodeState {
        &self.nodes[self.root].state
    }

    /// The sentence-level prediction.
    pub fn prediction(&self) -> &SentimentDistribution {
        &self.root_state().sentiment
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.children.is_some()).count()
    }

    /// Fraction of leaf tokens with their own embedding.
    pub fn known_fraction(&self, params: &TreeLstmParams) -> f64 {
        let mut leaves = 0usize;
        let mut known = 0usize;
        for node in &self.nodes {
            if let Some(token) = &node.token {
                leaves += 1;
                if params.knows_word(token) {
                    known += 1;
                }
            }
        }
        if leaves == 0 {
            0.0
        } else {
            known as f64 / leaves as f64
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.token.is_some()).count()
    }

    fn supervised(&self, mode: LossMode) -> Vec<usize> {
        match mode {
            LossMode::AllLabeledNodes => (0..self.nodes.len())
                .filter(|&i| self.nodes[i].label.is_some())
                .collect(),
            LossMode::RootOnly => {
                if self.nodes[self.root].label.is_some() {
                    vec![self.root]
                } else {
                    vec![]
                }
            }
        }
    }
}

fn one_hot(class: u8, n: usize) -> Array1<f64> {
    let mut v = Array1::zeros(n);
    v[class as usize] = 1.0;
    v
}

fn sentiment_of(h: &Array1<f64>, params: &TreeLstmParams) -> SentimentDistribution {
    let logits = params.w_out.dot(h);
    let probs = softmax(&logits);
    let mut p = [0.0; crate::dist::NUM_CLASSES];
    for (slot, &v) in p.iter_mut().zip(probs.iter()) {
        *slot = v;
    }
    SentimentDistribution::new(p).expect("softmax output is a distribution")
}

/// Runs the cell over two completed child states. Per the module equations,
/// the main pair is `[left.h, right.meta]` against the right child's output
/// vector, and the cross pair is `[left.c, right.meta]` against
/// `[right.c, left.meta]`; the entity bits of the left and right child pick
/// the gate matrices. Returns the node state and the cached intermediates.
pub fn lstm_cell(
    left: &NodeState,
    right: &NodeState,
    node_meta: &Array1<f64>,
    params: &TreeLstmParams,
) -> Result<(NodeState, CellCache), NeuralError> {
    let d = params.hyper.d;
    for (what, len, expected) in [
        ("left hidden", left.h.len(), d),
        ("right hidden", right.h.len(), d),
        ("left cell", left.c.len(), d),
        ("right cell", right.c.len(), d),
        ("node metadata", node_meta.len(), super::META_DIM),
        ("right output", right.o.len(), params.hyper.half_dim()),
    ] {
        if len != expected {
            return Err(NeuralError::ShapeMismatch { what, expected, found: len });
        }
    }

    let ij = (left.meta[super::META_DIM - 1] != 0.0, right.meta[super::META_DIM - 1] != 0.0);
    let s_main = concatenate![Axis(0), left.h.view(), right.meta.view(), right.o.view()];
    let s_cross = concatenate![
        Axis(0),
        left.c.view(),
        right.meta.view(),
        right.c.view(),
        left.meta.view()
    ];

    let f = compose_pair(GATE_FORGET, &s_main, ij, params).mapv(sigmoid);
    let i = compose_pair(GATE_INPUT, &s_main, ij, params).mapv(sigmoid);
    let c_cand = compose_pair(GATE_CANDIDATE, &s_main, ij, params).mapv(f64::tanh);
    let i_cross = compose_pair(GATE_CROSS_INPUT, &s_cross, ij, params).mapv(sigmoid);
    let c_cross = compose_pair(GATE_CROSS_CANDIDATE, &s_cross, ij, params).mapv(f64::tanh);
    let g = compose_pair(GATE_OUTPUT, &s_main, ij, params).mapv(sigmoid);

    let c_new = &right.c * &f + &c_cand * &i + &i_cross * &c_cross;
    let tanh_c = c_new.mapv(f64::tanh);
    let h = &g * &tanh_c;
    let sentiment = sentiment_of(&h, params);
    let o = concatenate![Axis(0), node_meta.view(), h.view()];

    let state = NodeState { h, c: c_new.clone(), meta: node_meta.clone(), o, sentiment };
    let cache = CellCache { s_main, s_cross, ij, f, i, c_cand, i_cross, c_cross, g, tanh_c };
    Ok((state, cache))
}

/// Annotates every node of the tree, leaves first.
pub fn forward(tree: &ParseTree, params: &TreeLstmParams) -> Result<AnnotatedTree, NeuralError> {
    let mut nodes = Vec::with_capacity(tree.node_count());
    let root = annotate(tree, params, &mut nodes)?;
    Ok(AnnotatedTree { nodes, root })
}

fn annotate(
    tree: &ParseTree,
    params: &TreeLstmParams,
    nodes: &mut Vec<AnnotatedNode>,
) -> Result<usize, NeuralError> {
    let meta = encode_metadata(&tree.category, tree.entity_flag, &params.categories);
    let idx = match &tree.kind {
        NodeKind::Leaf { token } => {
            let h = params.embedding(token).clone();
            if h.len() != params.hyper.d {
                return Err(NeuralError::ShapeMismatch {
                    what: "embedding",
                    expected: params.hyper.d,
                    found: h.len(),
                });
            }
            let c = Array1::zeros(params.hyper.d);
            let sentiment = sentiment_of(&h, params);
            let o = concatenate![Axis(0), meta.view(), h.view()];
            nodes.push(AnnotatedNode {
                state: NodeState { h, c, meta, o, sentiment },
                label: tree.label,
                category: tree.category.clone(),
                entity_flag: tree.entity_flag,
                children: None,
                token: Some(token.clone()),
                cache: None,
            });
            nodes.len() - 1
        }
        NodeKind::Internal { left, right } => {
            let l = annotate(left, params, nodes)?;
            let r = annotate(right, params, nodes)?;
            let (state, cache) = lstm_cell(&nodes[l].state, &nodes[r].state, &meta, params)?;
            nodes.push(AnnotatedNode {
                state,
                label: tree.label,
                category: tree.category.clone(),
                entity_flag: tree.entity_flag,
                children: Some((l, r)),
                token: None,
                cache: Some(cache),
            });
            nodes.len() - 1
        }
    };
    Ok(idx)
}

/// Mean cross-entropy of node sentiments against gold labels under the
/// given supervision mode.
pub fn loss(tree: &AnnotatedTree, mode: LossMode) -> Result<f64, NeuralError> {
    let supervised = tree.supervised(mode);
    if supervised.is_empty() {
        return Err(NeuralError::NoLabeledNodes);
    }
    let mut sum = 0.0;
    for idx in &supervised {
        let node = &tree.nodes[*idx];
        let label = node.label.expect("supervised nodes are labeled");
        sum -= node.state.sentiment.prob(label as usize).ln();
    }
    Ok(sum / supervised.len() as f64)
}

/// Gradient of [`loss`] with respect to each supervised node's logits,
/// plus the supervised node list (used by the backward pass).
pub(crate) fn loss_logit_grads(
    tree: &AnnotatedTree,
    mode: LossMode,
) -> Result<Vec<(usize, Array1<f64>)>, NeuralError> {
    let supervised = tree.supervised(mode);
    if supervised.is_empty() {
        return Err(NeuralError::NoLabeledNodes);
    }
    let n = supervised.len() as f64;
    let mut out = Vec::with_capacity(supervised.len());
    for idx in supervised {
        let node = &tree.nodes[idx];
        let label = node.label.expect("supervised nodes are labeled");
        let probs = Array1::from(node.state.sentiment.probs().to_vec());
        let grad = (&probs - &one_hot(label, crate::dist::NUM_CLASSES)) / n;
        out.push((idx, grad));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::CategoryTable;
    use crate::neural::Hyper;
    use crate::treebank::parse_ptb;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeSet;

    const SAMPLE_TREE: &str =
        "(3#S#1 (2#NNP#1 acme) (4#VP#0 (2#VBZ#0 is) (4#JJ#0 awesome)))";

    fn vocab(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn zero_params(d: usize, words: &[&str]) -> TreeLstmParams {
        TreeLstmParams::zeros(
            Hyper::new(d).unwrap(),
            &vocab(words),
            CategoryTable::new(vec!["NN".into(), "S".into(), "VP".into()]),
        )
    }

    fn leaf_state(h: Vec<f64>, entity: bool, params: &TreeLstmParams) -> NodeState {
        let d = h.len();
        let meta = encode_metadata("NN", entity, &params.categories);
        let h = Array1::from(h);
        let o = concatenate![Axis(0), meta.view(), h.view()];
        NodeState {
            h: h.clone(),
            c: Array1::zeros(d),
            meta,
            o,
            sentiment: sentiment_of(&h, params),
        }
    }

    #[test]
    fn zero_params_give_half_gates_and_uniform_sentiment() {
        let params = zero_params(3, &[]);
        let left = leaf_state(vec![0.3, -0.1, 0.2], false, &params);
        let mut right = leaf_state(vec![0.5, 0.0, -0.4], false, &params);
        right.c = ndarray::arr1(&[1.0, -2.0, 4.0]);
        let meta = encode_metadata("S", false, &params.categories);
        let (state, cache) = lstm_cell(&left, &right, &meta, &params).unwrap();

        for gate in [&cache.f, &cache.i, &cache.g] {
            assert!(gate.iter().all(|&v| v == 0.5));
        }
        assert!(cache.c_cand.iter().all(|&v| v == 0.0));
        assert!(cache.c_cross.iter().all(|&v| v == 0.0));
        // C_t = 0.5 * C_{t-1} with the right child supplying C_{t-1}.
        assert_eq!(state.c.to_vec(), vec![0.5, -1.0, 2.0]);
        for c in 0..5 {
            assert_abs_diff_eq!(state.sentiment.prob(c), 0.2, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_params_and_zero_right_cell_give_zero_state() {
        let params = zero_params(2, &[]);
        let left = leaf_state(vec![0.7, -0.7], true, &params);
        let right = leaf_state(vec![-0.2, 0.9], false, &params);
        let meta = encode_metadata("S", true, &params.categories);
        let (state, _) = lstm_cell(&left, &right, &meta, &params).unwrap();
        assert!(state.c.iter().all(|&v| v == 0.0));
        assert!(state.h.iter().all(|&v| v == 0.0));
        // o carries the node metadata followed by h.
        assert_eq!(state.o.len(), params.hyper.half_dim());
        assert_eq!(state.o.slice(ndarray::s![..7]).to_vec(), meta.to_vec());
        assert!(state.o.slice(ndarray::s![7..]).iter().all(|&v| v == 0.0));
    }

    /// Scalar reference of the full cell, independent of the ndarray kernels.
    fn scalar_cell(
        left: &NodeState,
        right: &NodeState,
        node_meta: &[f64],
        params: &TreeLstmParams,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = params.hyper.d;
        let pair = params.hyper.pair_dim();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());

        let mut s_main = Vec::with_capacity(pair);
        s_main.extend(left.h.iter());
        s_main.extend(right.meta.iter());
        s_main.extend(right.o.iter());
        let mut s_cross = Vec::with_capacity(pair);
        s_cross.extend(left.c.iter());
        s_cross.extend(right.meta.iter());
        s_cross.extend(right.c.iter());
        s_cross.extend(left.meta.iter());

        let li = left.meta[6] != 0.0;
        let ri = right.meta[6] != 0.0;
        let gate = |k: usize, s: &[f64]| -> Vec<f64> {
            let gp = &params.gates[k];
            let w = &gp.w[li as usize][ri as usize];
            let mut out = vec![0.0; d];
            for m in 0..d {
                for a in 0..pair {
                    for b in 0..pair {
                        out[m] += s[a] * gp.tensor[[a, b, m]] * s[b];
                    }
                    out[m] += w[[m, a]] * s[a];
                }
            }
            out
        };

        let f: Vec<f64> = gate(0, &s_main).iter().map(|&v| sig(v)).collect();
        let i: Vec<f64> = gate(1, &s_main).iter().map(|&v| sig(v)).collect();
        let cc: Vec<f64> = gate(2, &s_main).iter().map(|&v| v.tanh()).collect();
        let ix: Vec<f64> = gate(3, &s_cross).iter().map(|&v| sig(v)).collect();
        let cx: Vec<f64> = gate(4, &s_cross).iter().map(|&v| v.tanh()).collect();
        let g: Vec<f64> = gate(5, &s_main).iter().map(|&v| sig(v)).collect();

        let mut c_new = vec![0.0; d];
        let mut h = vec![0.0; d];
        for m in 0..d {
            c_new[m] = right.c[m] * f[m] + cc[m] * i[m] + ix[m] * cx[m];
            h[m] = g[m] * c_new[m].tanh();
        }
        let mut o = node_meta.to_vec();
        o.extend(h.iter());
        (h, c_new, o)
    }

    #[test]
    fn cell_matches_scalar_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(47);
        let params = TreeLstmParams::init(
            Hyper::new(2).unwrap(),
            &BTreeSet::new(),
            CategoryTable::new(vec!["NN".into(), "S".into()]),
            47,
            None,
        )
        .unwrap();
        let mut rand_state = |entity: bool| {
            let h: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut st = leaf_state(h, entity, &params);
            st.c = Array1::from((0..2).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
            st
        };
        let left = rand_state(true);
        let right = rand_state(false);
        let meta = encode_metadata("S", true, &params.categories);

        let (state, _) = lstm_cell(&left, &right, &meta, &params).unwrap();
        let (h, c, o) = scalar_cell(&left, &right, meta.as_slice().unwrap(), &params);
        for m in 0..2 {
            assert_abs_diff_eq!(state.h[m], h[m], epsilon = 1e-12);
            assert_abs_diff_eq!(state.c[m], c[m], epsilon = 1e-12);
        }
        for (a, b) in state.o.iter().zip(&o) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_leaf_prediction_is_softmax_of_head() {
        let mut params = zero_params(2, &["cat"]);
        params.embeddings.get_mut("cat").unwrap().assign(&ndarray::arr1(&[1.0, -1.0]));
        params.w_out.row_mut(3).assign(&ndarray::arr1(&[2.0, 0.0]));
        let tree = parse_ptb("(2#NN#0 cat)").unwrap();
        let annotated = forward(&tree, &params).unwrap();
        let logits = params.w_out.dot(&ndarray::arr1(&[1.0, -1.0]));
        let expect = softmax(&logits);
        for c in 0..5 {
            assert_abs_diff_eq!(annotated.prediction().prob(c), expect[c], epsilon = 1e-12);
        }
    }

    #[test]
    fn three_token_tree_runs_two_cells() {
        let params = zero_params(2, &["acme", "is", "awesome"]);
        let tree = parse_ptb(SAMPLE_TREE).unwrap();
        let annotated = forward(&tree, &params).unwrap();
        assert_eq!(annotated.nodes.len(), 5);
        // One cell for VP(is, awesome), a second for S(acme, VP).
        assert_eq!(annotated.internal_count(), 2);
        assert_eq!(annotated.leaf_count(), 3);
        // With zero parameters every node predicts uniform.
        for node in &annotated.nodes {
            for c in 0..5 {
                assert_abs_diff_eq!(node.state.sentiment.prob(c), 0.2, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let params = TreeLstmParams::init(
            Hyper::new(3).unwrap(),
            &vocab(&["acme", "is", "awesome"]),
            CategoryTable::new(vec!["S".into(), "VP".into()]),
            5,
            None,
        )
        .unwrap();
        let tree = parse_ptb(SAMPLE_TREE).unwrap();
        let a = forward(&tree, &params).unwrap();
        let b = forward(&tree, &params).unwrap();
        for (x, y) in a.nodes.iter().zip(&b.nodes) {
            assert_eq!(x.state, y.state);
        }
    }

    #[test]
    fn flipping_a_leaf_entity_bit_switches_every_ancestor_pair() {
        // Structural check: with a fresh entity bit on one leaf, every
        // ancestor cell selects a different matrix pair on the side that
        // contains that leaf.
        let params = zero_params(2, &["a", "b", "c", "d"]);
        let plain = parse_ptb(
            "(2#S#0 (2#NP#0 (2#NN#0 a) (2#NN#0 b)) (2#VP#0 (2#NN#0 c) (2#NN#0 d)))",
        )
        .unwrap();
        // Flag leaf "c": its parent VP and the root S carry the OR.
        let flagged = parse_ptb(
            "(2#S#1 (2#NP#0 (2#NN#0 a) (2#NN#0 b)) (2#VP#1 (2#NN#1 c) (2#NN#0 d)))",
        )
        .unwrap();
        let before = forward(&plain, &params).unwrap();
        let after = forward(&flagged, &params).unwrap();
        let pairs = |tree: &AnnotatedTree| -> Vec<(String, (bool, bool))> {
            tree.nodes
                .iter()
                .filter_map(|n| {
                    n.cache.as_ref().map(|c| (n.category.clone(), c.ij))
                })
                .collect()
        };
        let before = pairs(&before);
        let after = pairs(&after);
        // NP does not contain the flagged leaf: same pair. VP sees its left
        // child flagged; S sees its right child (VP) flagged.
        assert_eq!(before, vec![
            ("NP".into(), (false, false)),
            ("VP".into(), (false, false)),
            ("S".into(), (false, false)),
        ]);
        assert_eq!(after, vec![
            ("NP".into(), (false, false)),
            ("VP".into(), (true, false)),
            ("S".into(), (false, true)),
        ]);
    }

    #[test]
    fn loss_cases() {
        let params = zero_params(2, &["acme", "is", "awesome"]);
        let tree = parse_ptb(SAMPLE_TREE).unwrap();
        let annotated = forward(&tree, &params).unwrap();
        // Uniform predictions give -ln(0.2) = ln 5 whatever the labels.
        let l = loss(&annotated, LossMode::AllLabeledNodes).unwrap();
        assert_abs_diff_eq!(l, 5.0f64.ln(), epsilon = 1e-12);
        let l = loss(&annotated, LossMode::RootOnly).unwrap();
        assert_abs_diff_eq!(l, 5.0f64.ln(), epsilon = 1e-12);

        let unlabeled = parse_ptb("(_#NN#0 cat)").unwrap();
        let annotated = forward(&unlabeled, &zero_params(2, &["cat"])).unwrap();
        assert!(matches!(
            loss(&annotated, LossMode::RootOnly),
            Err(NeuralError::NoLabeledNodes)
        ));
    }

    #[test]
    fn mixed_loss_matches_hand_sum() {
        // Three labeled nodes with hand-set heads, checked against the
        // hand-computed mean of the three cross-entropies.
        let mut params = zero_params(1, &["a", "b"]);
        params.embeddings.get_mut("a").unwrap().assign(&ndarray::arr1(&[1.0]));
        params.embeddings.get_mut("b").unwrap().assign(&ndarray::arr1(&[-1.0]));
        params.w_out.assign(&ndarray::arr2(&[[0.5], [0.0], [-0.5], [1.0], [-1.0]]));
        let tree = parse_ptb("(3#S#0 (0#NN#0 a) (4#NN#0 b))").unwrap();
        let annotated = forward(&tree, &params).unwrap();
        let l = loss(&annotated, LossMode::AllLabeledNodes).unwrap();

        let ce = |h: f64, label: usize| -> f64 {
            let logits: Vec<f64> = [0.5, 0.0, -0.5, 1.0, -1.0].iter().map(|w| w * h).collect();
            let z: f64 = logits.iter().map(|v| v.exp()).sum();
            -(logits[label].exp() / z).ln()
        };
        let root_h = annotated.root_state().h[0];
        let expect = (ce(1.0, 0) + ce(-1.0, 4) + ce(root_h, 3)) / 3.0;
        assert_abs_diff_eq!(l, expect, epsilon = 1e-12);
    }
}
