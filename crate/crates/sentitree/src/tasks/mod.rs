//! The five task workflows: class-targeted resampling and iterative
//! distribution matching (3-class classification), entity-level binary
//! classification with Beta priors and Beta-Binomial posteriors (binary
//! classification and quantification), and the per-entity reweighting,
//! minimum-expected-distance labeling and bootstrap machinery behind the
//! 5-class tasks.

pub mod workflows;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dist::{SentimentDistribution, LabelScale, NEUTRAL, NUM_CLASSES};
use crate::stack::{
    predict_logistic, train_logistic, LogisticConfig, LogisticModel, SemanticFlags, StackError,
};
use crate::treebank::ParseTree;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("target puts mass on class {class} but the data has no such rows")]
    MissingClass { class: usize },
    #[error("entity {0:?} has no prior")]
    MissingPrior(String),
    #[error("positives {positives} exceed total {total}")]
    CountOutOfRange { positives: u64, total: u64 },
    #[error("column {class} sums to zero across tweets")]
    ZeroColumn { class: usize },
    #[error("entity {0:?} has no tweets")]
    EmptyEntity(String),
    #[error("dataset is empty")]
    EmptyInput,
    #[error("record {id}: {message}")]
    BadRecord { id: String, message: String },
    #[error("{path} line {line}: {message}")]
    BadFileLine { path: String, line: usize, message: String },
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Stack(#[from] StackError),
}

/// A dataset row: tasks B-E require the entity, task A may leave it empty.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub entity: Option<String>,
    /// Gold class in `0..=4` (file labels `-2..=2` are shifted by 2).
    pub gold: Option<u8>,
    pub text: String,
    pub flags: Option<SemanticFlags>,
    pub parses: Vec<ParseTree>,
}

/// Beta prior/posterior over an entity's positive rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityPrior {
    pub entity: String,
    pub alpha: f64,
    pub beta: f64,
}

impl EntityPrior {
    pub fn new(entity: &str, alpha: f64, beta: f64) -> Result<Self, TaskError> {
        if !(alpha > 0.0) || !(beta > 0.0) {
            return Err(TaskError::BadRecord {
                id: entity.to_string(),
                message: format!("Beta parameters must be positive, got ({alpha}, {beta})"),
            });
        }
        Ok(Self { entity: entity.to_string(), alpha, beta })
    }

    /// Prior built from a predicted positive probability with concentration
    /// `kappa`.
    pub fn from_probability(entity: &str, p: f64, kappa: f64) -> Result<Self, TaskError> {
        let p = p.clamp(1e-6, 1.0 - 1e-6);
        Self::new(entity, kappa * p, kappa * (1.0 - p))
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

/// Conjugate update: `positives` successes out of `total` Binomial draws.
pub fn beta_posterior(
    prior: &EntityPrior,
    positives: u64,
    total: u64,
) -> Result<EntityPrior, TaskError> {
    if positives > total {
        return Err(TaskError::CountOutOfRange { positives, total });
    }
    Ok(EntityPrior {
        entity: prior.entity.clone(),
        alpha: prior.alpha + positives as f64,
        beta: prior.beta + (total - positives) as f64,
    })
}

/// Largest-remainder class counts for a target distribution, then seeded
/// with-replacement draws inside each class. Returns indices into `labels`.
pub fn resample_to_target(
    labels: &[usize],
    n_classes: usize,
    target: &[f64],
    size: usize,
    seed: u64,
) -> Result<Vec<usize>, TaskError> {
    if labels.is_empty() {
        return Err(TaskError::EmptyInput);
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &label) in labels.iter().enumerate() {
        by_class[label].push(i);
    }
    for (class, &mass) in target.iter().enumerate() {
        if mass > 0.0 && by_class[class].is_empty() {
            return Err(TaskError::MissingClass { class });
        }
    }

    // Largest-remainder rounding keeps the empirical distribution within
    // 1/size of the target per class.
    let mut counts: Vec<usize> = Vec::with_capacity(n_classes);
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(n_classes);
    let mut assigned = 0usize;
    for (class, &mass) in target.iter().enumerate() {
        let exact = mass.max(0.0) * size as f64;
        let base = exact.floor() as usize;
        counts.push(base);
        assigned += base;
        remainders.push((exact - base as f64, class));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut leftover = size.saturating_sub(assigned);
    for &(_, class) in remainders.iter().cycle().take(n_classes.max(leftover)) {
        if leftover == 0 {
            break;
        }
        if target[class] > 0.0 {
            counts[class] += 1;
            leftover -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(size);
    for (class, &count) in counts.iter().enumerate() {
        let pool = &by_class[class];
        for _ in 0..count {
            out.push(pool[rng.gen_range(0..pool.len())]);
        }
    }
    Ok(out)
}

/// Empirical class distribution of a label slice.
pub fn empirical_distribution(labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; n_classes];
    for &label in labels {
        counts[label] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        for c in &mut counts {
            *c /= total;
        }
    }
    counts
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[derive(Debug, Clone)]
pub struct MatchConfig {
    pub max_iters: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub logistic: LogisticConfig,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { max_iters: 20, tolerance: 0.02, seed: 0, logistic: LogisticConfig::default() }
    }
}

#[derive(Debug, Clone)]
pub struct MatchResult {
    /// Indices into the original training rows forming the final sample.
    pub sample: Vec<usize>,
    /// L1 distance between the predicted test distribution and the current
    /// sample's empirical distribution, one entry per iteration.
    pub trace: Vec<f64>,
}

/// Repeatedly trains a classifier on the current sample, predicts the test
/// set's class distribution, and resamples the original training set toward
/// it, until the two distributions agree within the tolerance.
pub fn iterative_distribution_match(
    train_rows: &[(Array1<f64>, i64)],
    test_features: &[Array1<f64>],
    classes: &[i64],
    config: &MatchConfig,
) -> Result<MatchResult, TaskError> {
    if train_rows.is_empty() || test_features.is_empty() {
        return Err(TaskError::EmptyInput);
    }
    let class_index = |label: i64| -> usize {
        classes.iter().position(|&c| c == label).expect("labels drawn from classes")
    };
    let labels: Vec<usize> = train_rows.iter().map(|(_, y)| class_index(*y)).collect();

    let mut sample: Vec<usize> = (0..train_rows.len()).collect();
    let mut trace = Vec::new();
    for iter in 0..config.max_iters {
        let current: Vec<(Array1<f64>, i64)> =
            sample.iter().map(|&i| train_rows[i].clone()).collect();
        let model = train_logistic(&current, &config.logistic)?;

        // Mean predicted distribution on the test side, embedded into the
        // canonical class list.
        let mut predicted = vec![0.0; classes.len()];
        for features in test_features {
            let probs = predict_logistic(&model, features)?;
            for (slot, &label) in model.classes.iter().enumerate() {
                predicted[class_index(label)] += probs[slot];
            }
        }
        for p in &mut predicted {
            *p /= test_features.len() as f64;
        }

        let current_labels: Vec<usize> = sample.iter().map(|&i| labels[i]).collect();
        let empirical = empirical_distribution(&current_labels, classes.len());
        let distance = l1_distance(&predicted, &empirical);
        trace.push(distance);
        if distance < config.tolerance {
            break;
        }
        sample = resample_to_target(
            &labels,
            classes.len(),
            &predicted,
            train_rows.len(),
            config.seed.wrapping_add(iter as u64),
        )?;
    }
    Ok(MatchResult { sample, trace })
}

/// Whether the whole test set or each entity supplies the classification
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdScope {
    Global,
    PerEntity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryPrediction {
    pub id: String,
    pub entity: String,
    pub positive_prob: f64,
    pub positive: bool,
}

/// Scores each tweet with the trained binary model over
/// `[5-label distribution, entity prior mean]`, then labels positive
/// everything at or above the mean positive probability (ties positive).
pub fn entity_binary_classify(
    rows: &[(String, String, SentimentDistribution)],
    priors: &BTreeMap<String, EntityPrior>,
    model: &LogisticModel,
    scope: ThresholdScope,
) -> Result<Vec<BinaryPrediction>, TaskError> {
    if rows.is_empty() {
        return Err(TaskError::EmptyInput);
    }
    let positive_slot = model
        .classes
        .iter()
        .position(|&c| c == 1)
        .ok_or(TaskError::Stack(StackError::UnknownLabel(1)))?;

    let mut scored = Vec::with_capacity(rows.len());
    for (id, entity, dist) in rows {
        let prior = priors
            .get(entity)
            .ok_or_else(|| TaskError::MissingPrior(entity.clone()))?;
        let features = binary_features(dist, prior.mean());
        let probs = predict_logistic(model, &features)?;
        scored.push((id.clone(), entity.clone(), probs[positive_slot]));
    }

    let global_mean: f64 =
        scored.iter().map(|(_, _, p)| *p).sum::<f64>() / scored.len() as f64;
    let mut entity_means: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (_, entity, p) in &scored {
        let slot = entity_means.entry(entity).or_insert((0.0, 0));
        slot.0 += p;
        slot.1 += 1;
    }

    Ok(scored
        .iter()
        .map(|(id, entity, p)| {
            let threshold = match scope {
                ThresholdScope::Global => global_mean,
                ThresholdScope::PerEntity => {
                    let (sum, count) = entity_means[entity.as_str()];
                    sum / count as f64
                }
            };
            BinaryPrediction {
                id: id.clone(),
                entity: entity.clone(),
                positive_prob: *p,
                positive: *p >= threshold,
            }
        })
        .collect())
}

/// Feature row for the binary model: the 5 labels then the prior mean.
pub fn binary_features(dist: &SentimentDistribution, prior_mean: f64) -> Array1<f64> {
    let mut values = dist.probs().to_vec();
    values.push(prior_mean);
    Array1::from(values)
}

/// The per-tweet reweighting formula before renormalization:
/// `p_new(t0, c0) = sum_c p(t0, c) * p_lr(t0, c0) / sum_t p(t, c)`.
pub fn entity_reweight_raw(
    tweet_dists: &[SentimentDistribution],
    t0: usize,
    entity_lr: &SentimentDistribution,
) -> Result<[f64; NUM_CLASSES], TaskError> {
    if tweet_dists.is_empty() {
        return Err(TaskError::EmptyInput);
    }
    let mut column_sums = [0.0; NUM_CLASSES];
    for dist in tweet_dists {
        for (slot, &p) in column_sums.iter_mut().zip(dist.probs()) {
            *slot += p;
        }
    }
    for (class, &sum) in column_sums.iter().enumerate() {
        if sum <= 0.0 {
            return Err(TaskError::ZeroColumn { class });
        }
    }
    let mut out = [0.0; NUM_CLASSES];
    for (c0, slot) in out.iter_mut().enumerate() {
        for c in 0..NUM_CLASSES {
            *slot += tweet_dists[t0].prob(c) * entity_lr.prob(c0) / column_sums[c];
        }
    }
    Ok(out)
}

/// Reweighting with the output renormalized back to a distribution.
pub fn entity_reweight(
    tweet_dists: &[SentimentDistribution],
    t0: usize,
    entity_lr: &SentimentDistribution,
) -> Result<SentimentDistribution, TaskError> {
    let raw = entity_reweight_raw(tweet_dists, t0, entity_lr)?;
    SentimentDistribution::from_weights(&raw).map_err(|_| TaskError::ZeroColumn { class: 0 })
}

/// Expected-distance losses per candidate class:
/// `loss(c0) = sum_c |c - c0| * p(t0, c) / sum_t p(t, c)`.
///
/// A column whose mass is zero across all tweets contributes nothing: its
/// numerator `p(t0, c)` is necessarily zero as well, so the 0/0 term is
/// dropped. A point-mass tweet alone in `T` therefore scores zero loss at
/// its own class.
pub fn expected_distance_losses(
    tweet_dists: &[SentimentDistribution],
    t0: usize,
    scale: &LabelScale,
) -> Result<[f64; NUM_CLASSES], TaskError> {
    if tweet_dists.is_empty() {
        return Err(TaskError::EmptyInput);
    }
    let mut column_sums = [0.0; NUM_CLASSES];
    for dist in tweet_dists {
        for (slot, &p) in column_sums.iter_mut().zip(dist.probs()) {
            *slot += p;
        }
    }
    let mut losses = [0.0; NUM_CLASSES];
    for (c0, slot) in losses.iter_mut().enumerate() {
        for c in 0..NUM_CLASSES {
            if column_sums[c] <= 0.0 {
                continue;
            }
            let distance = (scale.value(c) - scale.value(c0)).abs();
            *slot += distance * tweet_dists[t0].prob(c) / column_sums[c];
        }
    }
    Ok(losses)
}

/// Label with the smallest expected distance; exact ties go to the class
/// nearest neutral, then to the lower index.
pub fn min_expected_distance_label(
    tweet_dists: &[SentimentDistribution],
    t0: usize,
    scale: &LabelScale,
) -> Result<usize, TaskError> {
    let losses = expected_distance_losses(tweet_dists, t0, scale)?;
    let mut best = 0usize;
    for c0 in 1..NUM_CLASSES {
        let better = losses[c0] < losses[best]
            || (losses[c0] == losses[best]
                && neutral_distance(c0) < neutral_distance(best));
        if better {
            best = c0;
        }
    }
    Ok(best)
}

fn neutral_distance(class: usize) -> usize {
    class.abs_diff(NEUTRAL)
}

/// Mean of one-hot labels per entity.
pub fn quantify_labels(
    per_entity: &BTreeMap<String, Vec<usize>>,
) -> Result<BTreeMap<String, SentimentDistribution>, TaskError> {
    let mut out = BTreeMap::new();
    for (entity, labels) in per_entity {
        if labels.is_empty() {
            return Err(TaskError::EmptyEntity(entity.clone()));
        }
        let mut acc = [0.0; NUM_CLASSES];
        for &label in labels {
            acc[label] += 1.0;
        }
        let dist = SentimentDistribution::from_weights(&acc)
            .map_err(|_| TaskError::EmptyEntity(entity.clone()))?;
        out.insert(entity.clone(), dist);
    }
    Ok(out)
}

/// Mean of distributions per entity.
pub fn quantify_dists(
    per_entity: &BTreeMap<String, Vec<SentimentDistribution>>,
) -> Result<BTreeMap<String, SentimentDistribution>, TaskError> {
    let mut out = BTreeMap::new();
    for (entity, dists) in per_entity {
        if dists.is_empty() {
            return Err(TaskError::EmptyEntity(entity.clone()));
        }
        out.insert(entity.clone(), mean_dist(dists));
    }
    Ok(out)
}

pub fn mean_dist(dists: &[SentimentDistribution]) -> SentimentDistribution {
    let mut acc = [0.0; NUM_CLASSES];
    for dist in dists {
        for (slot, &p) in acc.iter_mut().zip(dist.probs()) {
            *slot += p;
        }
    }
    SentimentDistribution::from_weights(&acc).expect("mean of distributions")
}

fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in text.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Stable per-entity RNG stream so parallel schedules agree.
fn entity_rng(seed: u64, entity: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(entity))
}

/// `b` with-replacement resamples of each entity's tweet indices.
pub fn bootstrap_entity_indices(
    per_entity: &BTreeMap<String, Vec<usize>>,
    b: usize,
    seed: u64,
) -> Result<BTreeMap<String, Vec<Vec<usize>>>, TaskError> {
    let mut out = BTreeMap::new();
    for (entity, members) in per_entity {
        if members.is_empty() {
            return Err(TaskError::EmptyEntity(entity.clone()));
        }
        let mut rng = entity_rng(seed, entity);
        let mut resamples = Vec::with_capacity(b);
        for _ in 0..b {
            let draw: Vec<usize> =
                (0..members.len()).map(|_| members[rng.gen_range(0..members.len())]).collect();
            resamples.push(draw);
        }
        out.insert(entity.clone(), resamples);
    }
    Ok(out)
}

/// One row per resample: the mean 5-label distribution of the drawn tweets.
pub fn bootstrap_entity_rows(
    per_entity: &BTreeMap<String, Vec<SentimentDistribution>>,
    b: usize,
    seed: u64,
) -> Result<BTreeMap<String, Vec<SentimentDistribution>>, TaskError> {
    let indices: BTreeMap<String, Vec<usize>> = per_entity
        .iter()
        .map(|(entity, dists)| (entity.clone(), (0..dists.len()).collect()))
        .collect();
    let resamples = bootstrap_entity_indices(&indices, b, seed)?;
    let mut out = BTreeMap::new();
    for (entity, draws) in resamples {
        let dists = &per_entity[&entity];
        let rows: Vec<SentimentDistribution> = draws
            .iter()
            .map(|draw| {
                let picked: Vec<SentimentDistribution> =
                    draw.iter().map(|&i| dists[i].clone()).collect();
                mean_dist(&picked)
            })
            .collect();
        out.insert(entity, rows);
    }
    Ok(out)
}

/// Majority label with ties resolved toward neutral, then the lower index.
pub fn majority_label(labels: &[usize]) -> Option<usize> {
    if labels.is_empty() {
        return None;
    }
    let mut counts = [0usize; NUM_CLASSES];
    for &label in labels {
        counts[label] += 1;
    }
    let mut best = 0usize;
    for c in 1..NUM_CLASSES {
        let better = counts[c] > counts[best]
            || (counts[c] == counts[best] && neutral_distance(c) < neutral_distance(best));
        if better {
            best = c;
        }
    }
    Some(best)
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

/// Reads the dataset TSV `id<TAB>entity<TAB>label<TAB>text<TAB>flags` with
/// labels in `-2..=2` (empty label allowed for unlabeled rows, empty entity
/// for task A); `flags` is a comma-separated subset of the flag names.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, TaskError> {
    let text = fs::read_to_string(path).map_err(|e| TaskError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(TaskError::BadFileLine {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("want 5 tab-separated fields, got {}", fields.len()),
            });
        }
        let id = fields[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(TaskError::BadFileLine {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("duplicate id {id:?}"),
            });
        }
        let entity =
            if fields[1].is_empty() { None } else { Some(fields[1].to_string()) };
        let gold = if fields[2].is_empty() {
            None
        } else {
            let raw: i8 = fields[2].parse().map_err(|_| TaskError::BadFileLine {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("bad label {:?}", fields[2]),
            })?;
            if !(-2..=2).contains(&raw) {
                return Err(TaskError::BadFileLine {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("label {raw} outside -2..=2"),
                });
            }
            Some((raw + 2) as u8)
        };
        let flags = if fields[4].is_empty() {
            None
        } else {
            Some(SemanticFlags::parse(fields[4]).map_err(|e| TaskError::BadFileLine {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?)
        };
        out.push(DatasetRecord {
            id,
            entity,
            gold,
            text: fields[3].to_string(),
            flags,
            parses: Vec::new(),
        });
    }
    Ok(out)
}

/// Reads per-tweet distributions: `id<TAB>p0<TAB>p1<TAB>p2<TAB>p3<TAB>p4`.
pub fn load_dists(path: &Path) -> Result<BTreeMap<String, SentimentDistribution>, TaskError> {
    let text = fs::read_to_string(path).map_err(|e| TaskError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(TaskError::BadFileLine {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("want 6 tab-separated fields, got {}", fields.len()),
            });
        }
        let mut probs = [0.0; NUM_CLASSES];
        for (slot, field) in probs.iter_mut().zip(&fields[1..]) {
            *slot = field.parse().map_err(|_| TaskError::BadFileLine {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("bad probability {field:?}"),
            })?;
        }
        let dist =
            SentimentDistribution::from_weights(&probs).map_err(|e| TaskError::BadFileLine {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        out.insert(fields[0].to_string(), dist);
    }
    Ok(out)
}

/// Attaches trees from a `id<TAB>s-expression` TSV (one sentence tree per
/// line, repeated ids collect in order).
pub fn load_trees_tsv(path: &Path) -> Result<BTreeMap<String, Vec<ParseTree>>, TaskError> {
    let text = fs::read_to_string(path).map_err(|e| TaskError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut out: BTreeMap<String, Vec<ParseTree>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((id, sexp)) = line.split_once('\t') else {
            return Err(TaskError::BadFileLine {
                path: path.display().to_string(),
                line: i + 1,
                message: "want id<TAB>s-expression".into(),
            });
        };
        let tree = crate::treebank::parse_ptb(sexp).map_err(|e| TaskError::BadFileLine {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.entry(id.to_string()).or_default().push(tree);
    }
    Ok(out)
}
