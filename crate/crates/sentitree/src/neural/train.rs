//! Minibatch gradient training over a treebank. Per-tree gradients inside a
//! batch may be computed on worker threads; they are reduced in tree order,
//! so the result is identical for any thread count, and all shuffling flows
//! from the explicit seed.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::treebank::{NodeKind, ParseTree, Treebank};

use super::backward::{backward, Gradients};
use super::forward::{forward, loss, LossMode};
use super::params::{CategoryTable, GateParams, TreeLstmParams};
use super::{Hyper, NeuralError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    AdaGrad,
    Sgd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    pub mode: LossMode,
    pub optimizer: OptimizerKind,
    /// Worker threads for per-tree gradient evaluation; results are
    /// schedule-independent.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 0.05,
            l2: 0.0,
            seed: 0,
            mode: LossMode::AllLabeledNodes,
            optimizer: OptimizerKind::AdaGrad,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: TreeLstmParams,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Builds initial parameters from the bank's vocabulary and categories.
pub fn init_from_bank(
    bank: &Treebank,
    hyper: Hyper,
    seed: u64,
    pretrained: Option<&BTreeMap<String, Vec<f64>>>,
) -> Result<TreeLstmParams, NeuralError> {
    let mut vocab = BTreeSet::new();
    let mut categories = BTreeSet::new();
    for tree in &bank.trees {
        collect(tree, &mut vocab, &mut categories);
    }
    let table = CategoryTable::from_categories(categories.iter().map(|s| s.as_str()));
    TreeLstmParams::init(hyper, &vocab, table, seed, pretrained)
}

fn collect(tree: &ParseTree, vocab: &mut BTreeSet<String>, categories: &mut BTreeSet<String>) {
    categories.insert(tree.category.clone());
    match &tree.kind {
        NodeKind::Leaf { token } => {
            vocab.insert(token.clone());
        }
        NodeKind::Internal { left, right } => {
            collect(left, vocab, categories);
            collect(right, vocab, categories);
        }
    }
}

fn has_supervision(tree: &ParseTree, mode: LossMode) -> bool {
    match mode {
        LossMode::RootOnly => tree.label.is_some(),
        LossMode::AllLabeledNodes => {
            let mut found = false;
            tree.visit(&mut |n| found |= n.label.is_some());
            found
        }
    }
}

/// Chunked map that preserves item order regardless of thread count.
fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let workers = threads.clamp(1, items.len().max(1));
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let mut out: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (slots, chunk_items) in out.chunks_mut(chunk).zip(items.chunks(chunk)) {
            let f = &f;
            scope.spawn(move || {
                for (slot, item) in slots.iter_mut().zip(chunk_items) {
                    *slot = Some(f(item));
                }
            });
        }
    });
    out.into_iter().map(|r| r.expect("worker filled every slot")).collect()
}

struct AdaGradState {
    gates: Vec<GateParams>,
    w_out: Array2<f64>,
    embeddings: BTreeMap<String, Array1<f64>>,
    eps: f64,
}

impl AdaGradState {
    fn new(params: &TreeLstmParams) -> Self {
        Self {
            gates: (0..super::NUM_GATES).map(|_| GateParams::zeros(&params.hyper)).collect(),
            w_out: Array2::zeros((Hyper::CLASSES, params.hyper.d)),
            embeddings: params
                .embeddings
                .keys()
                .map(|w| (w.clone(), Array1::zeros(params.hyper.d)))
                .collect(),
            eps: 1e-8,
        }
    }
}

fn apply_update(
    params: &mut TreeLstmParams,
    grads: &Gradients,
    lr: f64,
    optimizer: OptimizerKind,
    adagrad: &mut AdaGradState,
) {
    let step = |value: &mut f64, grad: f64, accum: &mut f64, eps: f64| match optimizer {
        OptimizerKind::Sgd => *value -= lr * grad,
        OptimizerKind::AdaGrad => {
            *accum += grad * grad;
            *value -= lr * grad / (accum.sqrt() + eps);
        }
    };
    let eps = adagrad.eps;
    for (k, gate) in params.gates.iter_mut().enumerate() {
        let ggate = &grads.gates[k];
        let sgate = &mut adagrad.gates[k];
        for ((v, &g), a) in gate
            .tensor
            .iter_mut()
            .zip(ggate.tensor.iter())
            .zip(sgate.tensor.iter_mut())
        {
            step(v, g, a, eps);
        }
        for i in 0..2 {
            for j in 0..2 {
                for ((v, &g), a) in gate.w[i][j]
                    .iter_mut()
                    .zip(ggate.w[i][j].iter())
                    .zip(sgate.w[i][j].iter_mut())
                {
                    step(v, g, a, eps);
                }
            }
        }
    }
    for ((v, &g), a) in params
        .w_out
        .iter_mut()
        .zip(grads.w_out.iter())
        .zip(adagrad.w_out.iter_mut())
    {
        step(v, g, a, eps);
    }
    for (word, grad) in &grads.embeddings {
        let vec = params.embeddings.get_mut(word).expect("gradient for known word");
        let accum = adagrad.embeddings.get_mut(word).expect("state for known word");
        for ((v, &g), a) in vec.iter_mut().zip(grad.iter()).zip(accum.iter_mut()) {
            step(v, g, a, eps);
        }
    }
}

/// Mean per-tree loss over a bank.
pub fn bank_loss(
    bank: &Treebank,
    params: &TreeLstmParams,
    mode: LossMode,
) -> Result<f64, NeuralError> {
    if bank.is_empty() {
        return Err(NeuralError::NoLabeledNodes);
    }
    let mut sum = 0.0;
    for tree in &bank.trees {
        sum += loss(&forward(tree, params)?, mode)?;
    }
    Ok(sum / bank.len() as f64)
}

/// Fraction of supervised nodes whose argmax sentiment matches the gold
/// label.
pub fn node_accuracy(
    bank: &Treebank,
    params: &TreeLstmParams,
    mode: LossMode,
) -> Result<f64, NeuralError> {
    let mut total = 0usize;
    let mut hits = 0usize;
    for tree in &bank.trees {
        let annotated = forward(tree, params)?;
        for (idx, node) in annotated.nodes.iter().enumerate() {
            let counted = match mode {
                LossMode::AllLabeledNodes => node.label.is_some(),
                LossMode::RootOnly => idx == annotated.root && node.label.is_some(),
            };
            if counted {
                total += 1;
                if node.state.sentiment.argmax() == node.label.unwrap() as usize {
                    hits += 1;
                }
            }
        }
    }
    if total == 0 {
        return Err(NeuralError::NoLabeledNodes);
    }
    Ok(hits as f64 / total as f64)
}

/// Trains on the bank and returns the parameters of the best epoch measured
/// on `validation` (the training bank itself when absent).
pub fn train(
    bank: &Treebank,
    validation: Option<&Treebank>,
    hyper: Hyper,
    config: &TrainConfig,
    pretrained: Option<&BTreeMap<String, Vec<f64>>>,
) -> Result<TrainReport, NeuralError> {
    if bank.is_empty() {
        return Err(NeuralError::NoLabeledNodes);
    }
    for tree in &bank.trees {
        if !has_supervision(tree, config.mode) {
            return Err(NeuralError::NoLabeledNodes);
        }
    }

    let mut params = init_from_bank(bank, hyper, config.seed, pretrained)?;
    let eval_bank = validation.unwrap_or(bank);
    let mut adagrad = AdaGradState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut best_params = params.clone();
    let mut best_loss = bank_loss(eval_bank, &params, config.mode)?;
    let mut best_epoch = 0usize;
    let mut history = Vec::with_capacity(config.epochs);

    let mut order: Vec<usize> = (0..bank.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut train_loss_sum = 0.0;
        for batch in order.chunks(config.batch_size.max(1)) {
            let trees: Vec<&ParseTree> = batch.iter().map(|&i| &bank.trees[i]).collect();
            let results = parallel_map(&trees, config.threads, |tree| {
                let annotated = forward(tree, &params)?;
                backward(&annotated, &params, config.mode)
            });
            // Reduce in tree order so results are schedule-independent.
            let mut total = Gradients::zeros(&hyper);
            for result in results {
                let (tree_loss, grads) = result?;
                train_loss_sum += tree_loss;
                total.add_assign(&grads);
            }
            total.scale(1.0 / batch.len() as f64);
            if config.l2 > 0.0 {
                add_l2(&mut total, &params, config.l2);
            }
            if !total.max_abs().is_finite() {
                return Err(NeuralError::NonFinite("gradient update"));
            }
            apply_update(&mut params, &total, config.learning_rate, config.optimizer, &mut adagrad);
        }

        let eval_loss = bank_loss(eval_bank, &params, config.mode)?;
        if !eval_loss.is_finite() {
            return Err(NeuralError::NonFinite("evaluation loss"));
        }
        let eval_accuracy = node_accuracy(eval_bank, &params, config.mode)?;
        history.push(EpochStats {
            epoch,
            train_loss: train_loss_sum / bank.len() as f64,
            eval_loss,
            eval_accuracy,
        });
        if eval_loss < best_loss {
            best_loss = eval_loss;
            best_params = params.clone();
            best_epoch = epoch;
        }
    }

    Ok(TrainReport { params: best_params, history, best_epoch })
}

fn add_l2(grads: &mut Gradients, params: &TreeLstmParams, l2: f64) {
    for (g, p) in grads.gates.iter_mut().zip(&params.gates) {
        g.tensor.scaled_add(l2, &p.tensor);
        for i in 0..2 {
            for j in 0..2 {
                g.w[i][j].scaled_add(l2, &p.w[i][j]);
            }
        }
    }
    grads.w_out.scaled_add(l2, &params.w_out);
    for (word, grad) in grads.embeddings.iter_mut() {
        grad.scaled_add(l2, &params.embeddings[word]);
    }
}
