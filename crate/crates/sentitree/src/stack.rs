//! Model stacking: concatenated model distributions plus semantic flags feed
//! a multinomial logistic regression or a one-hidden-layer feedforward
//! network, and recursive feature elimination drops the weakest model group
//! at a time.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{SentimentDistribution, NUM_CLASSES};

#[derive(Debug, Error, PartialEq)]
pub enum StackError {
    #[error("feature vector does not fit the schema: {0}")]
    SchemaMismatch(String),
    #[error("training data is empty")]
    EmptyInput,
    #[error("training data contains a single class")]
    SingleClassInput,
    #[error("need at least two feature groups, found {0}")]
    TooFewGroups(usize),
    #[error("label {0} is not one of the model's classes")]
    UnknownLabel(i64),
}

/// Names of the semantic flags, in schema order.
pub const FLAG_NAMES: [&str; 7] = [
    "in_subject",
    "in_object",
    "pos_adjective",
    "neg_adjective",
    "negation",
    "quotation",
    "perfect_progressive",
];

/// Per-tweet semantic flags extracted upstream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticFlags {
    pub in_subject: bool,
    pub in_object: bool,
    pub pos_adjective: bool,
    pub neg_adjective: bool,
    pub negation: bool,
    pub quotation: bool,
    pub perfect_progressive: bool,
}

impl SemanticFlags {
    pub fn to_values(self) -> [f64; 7] {
        let b = |v: bool| if v { 1.0 } else { 0.0 };
        [
            b(self.in_subject),
            b(self.in_object),
            b(self.pos_adjective),
            b(self.neg_adjective),
            b(self.negation),
            b(self.quotation),
            b(self.perfect_progressive),
        ]
    }

    /// Parses a comma-separated subset of [`FLAG_NAMES`].
    pub fn parse(text: &str) -> Result<Self, StackError> {
        let mut flags = Self::default();
        for name in text.split(',') {
            let name = name.trim();
            if name.is_empty() {
                continue;
            }
            match name {
                "in_subject" => flags.in_subject = true,
                "in_object" => flags.in_object = true,
                "pos_adjective" => flags.pos_adjective = true,
                "neg_adjective" => flags.neg_adjective = true,
                "negation" => flags.negation = true,
                "quotation" => flags.quotation = true,
                "perfect_progressive" => flags.perfect_progressive = true,
                other => return Err(StackError::SchemaMismatch(format!("unknown flag {other:?}"))),
            }
        }
        Ok(flags)
    }
}

/// One named block of feature columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureGroup {
    /// A model's 5-class distribution.
    ModelDist(String),
    /// The seven semantic flags.
    Flags,
}

impl FeatureGroup {
    pub fn width(&self) -> usize {
        match self {
            FeatureGroup::ModelDist(_) => NUM_CLASSES,
            FeatureGroup::Flags => FLAG_NAMES.len(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            FeatureGroup::ModelDist(name) => name.clone(),
            FeatureGroup::Flags => "flags".to_string(),
        }
    }
}

/// Ordered feature groups; the serialized schema travels with trained models
/// so prediction can validate widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub groups: Vec<FeatureGroup>,
}

impl FeatureSchema {
    pub fn width(&self) -> usize {
        self.groups.iter().map(FeatureGroup::width).sum()
    }

    /// Column range of group `idx`.
    pub fn columns(&self, idx: usize) -> std::ops::Range<usize> {
        let start: usize = self.groups[..idx].iter().map(FeatureGroup::width).sum();
        start..start + self.groups[idx].width()
    }
}

/// A dense feature row laid out per a [`FeatureSchema`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Array1<f64>,
}

/// Concatenates model distributions and flags in schema order. Distribution
/// blocks are validated to sum to 1 within 1e-6.
pub fn build_features(
    model_dists: &[SentimentDistribution],
    flags: Option<SemanticFlags>,
) -> Result<(FeatureVector, FeatureSchema), StackError> {
    if model_dists.is_empty() {
        return Err(StackError::SchemaMismatch("no model distributions".into()));
    }
    let mut groups = Vec::new();
    let mut values = Vec::new();
    for (i, dist) in model_dists.iter().enumerate() {
        let sum: f64 = dist.probs().iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(StackError::SchemaMismatch(format!(
                "model {i} distribution sums to {sum}"
            )));
        }
        groups.push(FeatureGroup::ModelDist(format!("model{i}")));
        values.extend_from_slice(dist.probs());
    }
    groups.push(FeatureGroup::Flags);
    values.extend_from_slice(&flags.unwrap_or_default().to_values());
    Ok((FeatureVector { values: Array1::from(values) }, FeatureSchema { groups }))
}

/// Multinomial logistic regression with L2 regularization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// `classes x features`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// Original label values, sorted; row `i` of `weights` scores
    /// `classes[i]`.
    pub classes: Vec<i64>,
    pub schema: Option<FeatureSchema>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub max_iters: usize,
    pub grad_tolerance: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { learning_rate: 1.0, l2: 1e-4, max_iters: 2000, grad_tolerance: 1e-6 }
    }
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Full-batch gradient descent on the mean L2-regularized cross-entropy,
/// stopping at the gradient-norm tolerance or the iteration cap. Zero
/// initialization makes the result independent of row order.
pub fn train_logistic(
    rows: &[(Array1<f64>, i64)],
    config: &LogisticConfig,
) -> Result<LogisticModel, StackError> {
    if rows.is_empty() {
        return Err(StackError::EmptyInput);
    }
    let n_features = rows[0].0.len();
    for (x, _) in rows {
        if x.len() != n_features {
            return Err(StackError::SchemaMismatch(format!(
                "row width {} vs {}",
                x.len(),
                n_features
            )));
        }
    }
    let mut classes: Vec<i64> = rows.iter().map(|(_, y)| *y).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(StackError::SingleClassInput);
    }

    let n = rows.len();
    let k = classes.len();
    let mut x = Array2::zeros((n, n_features));
    let mut y = vec![0usize; n];
    for (i, (features, label)) in rows.iter().enumerate() {
        x.row_mut(i).assign(features);
        y[i] = classes.binary_search(label).expect("label collected above");
    }

    let mut weights: Array2<f64> = Array2::zeros((k, n_features));
    let mut bias: Array1<f64> = Array1::zeros(k);
    for _ in 0..config.max_iters {
        // probs = softmax(X W^T + b)
        let mut probs = x.dot(&weights.t());
        probs += &bias;
        softmax_rows(&mut probs);
        for (i, &label) in y.iter().enumerate() {
            probs[[i, label]] -= 1.0;
        }
        probs.mapv_inplace(|v| v / n as f64);

        let mut grad_w = probs.t().dot(&x);
        grad_w.scaled_add(config.l2, &weights);
        let grad_b = probs.sum_axis(Axis(0));

        let norm = grad_w.iter().chain(grad_b.iter()).map(|g| g * g).sum::<f64>().sqrt();
        if norm < config.grad_tolerance {
            break;
        }
        weights.scaled_add(-config.learning_rate, &grad_w);
        bias.scaled_add(-config.learning_rate, &grad_b);
    }
    Ok(LogisticModel { weights, bias, classes, schema: None })
}

/// Mean regularized cross-entropy of a model on a dataset.
pub fn logistic_objective(
    model: &LogisticModel,
    rows: &[(Array1<f64>, i64)],
    l2: f64,
) -> Result<f64, StackError> {
    if rows.is_empty() {
        return Err(StackError::EmptyInput);
    }
    let mut sum = 0.0;
    for (x, label) in rows {
        let probs = predict_logistic(model, x)?;
        let idx = model
            .classes
            .binary_search(label)
            .map_err(|_| StackError::UnknownLabel(*label))?;
        sum -= probs[idx].max(1e-300).ln();
    }
    let reg: f64 = model.weights.iter().map(|w| w * w).sum::<f64>() * l2 / 2.0;
    Ok(sum / rows.len() as f64 + reg)
}

/// Class probabilities `softmax(Wx + b)` aligned with `model.classes`.
pub fn predict_logistic(model: &LogisticModel, x: &Array1<f64>) -> Result<Array1<f64>, StackError> {
    if x.len() != model.weights.ncols() {
        return Err(StackError::SchemaMismatch(format!(
            "input width {} vs model width {}",
            x.len(),
            model.weights.ncols()
        )));
    }
    let logits = model.weights.dot(x) + &model.bias;
    Ok(crate::neural::softmax(&logits))
}

/// Most probable class label.
pub fn classify_logistic(model: &LogisticModel, x: &Array1<f64>) -> Result<i64, StackError> {
    let probs = predict_logistic(model, x)?;
    let mut best = 0;
    for i in 1..probs.len() {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    Ok(model.classes[best])
}

/// One tanh hidden layer into a 5-class softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub schema: Option<FeatureSchema>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: 32, learning_rate: 0.1, epochs: 500, batch_size: 16, seed: 0 }
    }
}

impl MlpModel {
    fn init(n_features: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize, fan_in: usize| {
            let r = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-r..=r))
        };
        let w1 = draw(hidden, n_features, n_features);
        let w2 = draw(NUM_CLASSES, hidden, hidden);
        Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(NUM_CLASSES),
            schema: None,
        }
    }

    pub fn predict(&self, x: &Array1<f64>) -> Result<Array1<f64>, StackError> {
        if x.len() != self.w1.ncols() {
            return Err(StackError::SchemaMismatch(format!(
                "input width {} vs model width {}",
                x.len(),
                self.w1.ncols()
            )));
        }
        let hidden = (self.w1.dot(x) + &self.b1).mapv(f64::tanh);
        let logits = self.w2.dot(&hidden) + &self.b2;
        Ok(crate::neural::softmax(&logits))
    }

    /// Mean cross-entropy over rows.
    pub fn objective(&self, rows: &[(Array1<f64>, usize)]) -> Result<f64, StackError> {
        if rows.is_empty() {
            return Err(StackError::EmptyInput);
        }
        let mut sum = 0.0;
        for (x, label) in rows {
            let probs = self.predict(x)?;
            sum -= probs[*label].max(1e-300).ln();
        }
        Ok(sum / rows.len() as f64)
    }

    /// Mean gradient over a batch; exposed for the finite-difference tests.
    pub(crate) fn batch_gradients(
        &self,
        rows: &[(Array1<f64>, usize)],
    ) -> (Array2<f64>, Array1<f64>, Array2<f64>, Array1<f64>) {
        let mut gw1 = Array2::zeros(self.w1.dim());
        let mut gb1 = Array1::zeros(self.b1.len());
        let mut gw2 = Array2::zeros(self.w2.dim());
        let mut gb2 = Array1::zeros(self.b2.len());
        for (x, label) in rows {
            let hidden = (self.w1.dot(x) + &self.b1).mapv(f64::tanh);
            let probs = crate::neural::softmax(&(self.w2.dot(&hidden) + &self.b2));
            let mut dlogits = probs;
            dlogits[*label] -= 1.0;
            gw2 += &outer(&dlogits, &hidden);
            gb2 += &dlogits;
            let dhidden = self.w2.t().dot(&dlogits) * hidden.mapv(|h| 1.0 - h * h);
            gw1 += &outer(&dhidden, x);
            gb1 += &dhidden;
        }
        let scale = 1.0 / rows.len() as f64;
        gw1.mapv_inplace(|v| v * scale);
        gb1.mapv_inplace(|v| v * scale);
        gw2.mapv_inplace(|v| v * scale);
        gb2.mapv_inplace(|v| v * scale);
        (gw1, gb1, gw2, gb2)
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    &a2 * &b2
}

/// Minibatch gradient descent; the shuffle order is a pure function of the
/// seed.
pub fn train_mlp(rows: &[(Array1<f64>, usize)], config: &MlpConfig) -> Result<MlpModel, StackError> {
    if rows.is_empty() {
        return Err(StackError::EmptyInput);
    }
    let n_features = rows[0].0.len();
    let mut model = MlpModel::init(n_features, config.hidden, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size.max(1)) {
            let batch_rows: Vec<(Array1<f64>, usize)> =
                batch.iter().map(|&i| rows[i].clone()).collect();
            let (gw1, gb1, gw2, gb2) = model.batch_gradients(&batch_rows);
            model.w1.scaled_add(-config.learning_rate, &gw1);
            model.b1.scaled_add(-config.learning_rate, &gb1);
            model.w2.scaled_add(-config.learning_rate, &gw2);
            model.b2.scaled_add(-config.learning_rate, &gb2);
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfeTarget {
    /// Keep exactly this many groups.
    Count(usize),
    /// Keep the iteration with the best k-fold validation macro-recall.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RfeMode {
    /// Drop whole feature groups (one model at a time).
    Group,
    /// Drop single columns.
    Column,
}

#[derive(Debug, Clone)]
pub struct RfeConfig {
    pub logistic: LogisticConfig,
    pub folds: usize,
    pub seed: u64,
    pub mode: RfeMode,
}

impl Default for RfeConfig {
    fn default() -> Self {
        Self { logistic: LogisticConfig::default(), folds: 3, seed: 0, mode: RfeMode::Group }
    }
}

#[derive(Debug, Clone)]
pub struct RfeSelection {
    /// Indices into the schema's groups (or columns in column mode), sorted.
    pub kept: Vec<usize>,
    /// `(surviving set, validation macro-recall)` per iteration, largest
    /// set first. Validation scores are present in auto mode only.
    pub history: Vec<(Vec<usize>, Option<f64>)>,
}

fn project(rows: &[(Array1<f64>, i64)], columns: &[usize]) -> Vec<(Array1<f64>, i64)> {
    rows.iter()
        .map(|(x, y)| {
            let picked: Vec<f64> = columns.iter().map(|&c| x[c]).collect();
            (Array1::from(picked), *y)
        })
        .collect()
}

/// Macro recall over the classes that occur in the fold's gold labels.
fn fold_macro_recall(model: &LogisticModel, rows: &[(Array1<f64>, i64)]) -> f64 {
    let mut per_class: std::collections::BTreeMap<i64, (usize, usize)> = Default::default();
    for (x, gold) in rows {
        let pred = match classify_logistic(model, x) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let entry = per_class.entry(*gold).or_insert((0, 0));
        entry.1 += 1;
        if pred == *gold {
            entry.0 += 1;
        }
    }
    if per_class.is_empty() {
        return 0.0;
    }
    let sum: f64 = per_class.values().map(|&(hit, total)| hit as f64 / total as f64).sum();
    sum / per_class.len() as f64
}

fn cross_validated_recall(
    rows: &[(Array1<f64>, i64)],
    columns: &[usize],
    config: &RfeConfig,
) -> f64 {
    let projected = project(rows, columns);
    let mut order: Vec<usize> = (0..projected.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    order.shuffle(&mut rng);
    let folds = config.folds.clamp(2, projected.len().max(2));
    let fold_size = projected.len().div_ceil(folds);
    let mut scores = Vec::new();
    for fold in order.chunks(fold_size) {
        let holdout: Vec<(Array1<f64>, i64)> = fold.iter().map(|&i| projected[i].clone()).collect();
        let train_rows: Vec<(Array1<f64>, i64)> = order
            .iter()
            .filter(|i| !fold.contains(i))
            .map(|&i| projected[i].clone())
            .collect();
        if train_rows.is_empty() || holdout.is_empty() {
            continue;
        }
        match train_logistic(&train_rows, &config.logistic) {
            Ok(model) => scores.push(fold_macro_recall(&model, &holdout)),
            Err(_) => continue,
        }
    }
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// Recursive feature elimination. Each iteration trains a logistic
/// regression, scores every unit (group or column) by the L2 norm of its
/// weight columns, and drops the weakest; ties drop the higher index.
/// Constant units are pruned up front.
pub fn rfe_select(
    rows: &[(Array1<f64>, i64)],
    schema: &FeatureSchema,
    target: RfeTarget,
    config: &RfeConfig,
) -> Result<RfeSelection, StackError> {
    if rows.is_empty() {
        return Err(StackError::EmptyInput);
    }
    let units: Vec<Vec<usize>> = match config.mode {
        RfeMode::Group => (0..schema.groups.len())
            .map(|g| schema.columns(g).collect())
            .collect(),
        RfeMode::Column => (0..schema.width()).map(|c| vec![c]).collect(),
    };
    if units.len() < 2 {
        return Err(StackError::TooFewGroups(units.len()));
    }

    // Degenerate pruning: a unit whose every column is constant across rows
    // carries no signal and would tie at zero norm forever.
    let mut alive: Vec<usize> = (0..units.len())
        .filter(|&u| {
            units[u].iter().any(|&c| {
                let first = rows[0].0[c];
                rows.iter().any(|(x, _)| x[c] != first)
            })
        })
        .collect();
    if alive.len() < 2 {
        return Err(StackError::TooFewGroups(alive.len()));
    }
    if let RfeTarget::Count(k) = target {
        if k > alive.len() {
            return Err(StackError::TooFewGroups(alive.len()));
        }
    }

    let min_keep = match target {
        RfeTarget::Count(k) => k.max(1),
        RfeTarget::Auto => 1,
    };

    let mut history: Vec<(Vec<usize>, Option<f64>)> = Vec::new();
    loop {
        let columns: Vec<usize> = alive.iter().flat_map(|&u| units[u].iter().copied()).collect();
        let score = match target {
            RfeTarget::Auto => Some(cross_validated_recall(rows, &columns, config)),
            RfeTarget::Count(_) => None,
        };
        history.push((alive.clone(), score));
        if alive.len() <= min_keep {
            break;
        }

        let projected = project(rows, &columns);
        let model = train_logistic(&projected, &config.logistic)?;
        // Weakest unit by the L2 norm of its weight columns.
        let mut offset = 0usize;
        let mut weakest: Option<(f64, usize)> = None;
        for (slot, &unit) in alive.iter().enumerate() {
            let width = units[unit].len();
            let norm: f64 = (offset..offset + width)
                .map(|c| model.weights.column(c).iter().map(|w| w * w).sum::<f64>())
                .sum();
            let replace = match weakest {
                None => true,
                // `<=` drops the higher index on ties.
                Some((best, _)) => norm <= best,
            };
            if replace {
                weakest = Some((norm, slot));
            }
            offset += width;
        }
        let (_, slot) = weakest.expect("at least two units alive");
        alive.remove(slot);
    }

    let kept = match target {
        RfeTarget::Count(_) => history.last().expect("loop ran").0.clone(),
        RfeTarget::Auto => {
            let mut best: Option<(f64, &Vec<usize>)> = None;
            for (set, score) in &history {
                let score = score.expect("auto mode records scores");
                let replace = match best {
                    None => true,
                    // Strict improvement keeps the earliest (largest) set.
                    Some((best_score, _)) => score > best_score,
                };
                if replace {
                    best = Some((score, set));
                }
            }
            best.expect("history nonempty").1.clone()
        }
    };
    Ok(RfeSelection { kept, history })
}
