//! End-to-end task runs wiring dataset records and per-tweet distributions
//! through the classification and quantification machinery. Every run is a
//! pure function of its inputs and seed.

use std::collections::BTreeMap;

use ndarray::Array1;

use crate::dist::{LabelScale, SentimentDistribution, NUM_CLASSES};
use crate::stack::{predict_logistic, train_logistic, LogisticConfig, LogisticModel};

use super::{
    beta_posterior, binary_features, bootstrap_entity_indices, entity_binary_classify,
    entity_reweight, iterative_distribution_match, majority_label, mean_dist,
    min_expected_distance_label, BinaryPrediction, DatasetRecord, EntityPrior, MatchConfig,
    TaskError, ThresholdScope,
};

/// A labeled per-tweet prediction, class in `0..=4`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub entity: Option<String>,
    pub class: u8,
}

/// Positive-class side of the binary split: positive and very-positive.
pub fn binary_gold(class: u8) -> i64 {
    if class >= 3 {
        1
    } else {
        0
    }
}

fn dist_for<'a>(
    record: &DatasetRecord,
    dists: &'a BTreeMap<String, SentimentDistribution>,
) -> Result<&'a SentimentDistribution, TaskError> {
    dists.get(&record.id).ok_or_else(|| TaskError::BadRecord {
        id: record.id.clone(),
        message: "no distribution for this id".into(),
    })
}

fn gold_for(record: &DatasetRecord) -> Result<u8, TaskError> {
    record.gold.ok_or_else(|| TaskError::BadRecord {
        id: record.id.clone(),
        message: "gold label required".into(),
    })
}

fn entity_for(record: &DatasetRecord) -> Result<&str, TaskError> {
    record.entity.as_deref().ok_or_else(|| TaskError::BadRecord {
        id: record.id.clone(),
        message: "entity required for this task".into(),
    })
}

/// Tweet features for the 3-class task: the 5-label distribution plus the
/// seven semantic flags (zero when absent).
fn task_a_features(
    record: &DatasetRecord,
    dists: &BTreeMap<String, SentimentDistribution>,
) -> Result<Array1<f64>, TaskError> {
    let dist = dist_for(record, dists)?;
    let mut values = dist.probs().to_vec();
    values.extend_from_slice(&record.flags.unwrap_or_default().to_values());
    Ok(Array1::from(values))
}

#[derive(Debug, Clone)]
pub struct TaskAConfig {
    pub matching: MatchConfig,
}

impl Default for TaskAConfig {
    fn default() -> Self {
        Self { matching: MatchConfig::default() }
    }
}

/// 3-class classification: resample the training set until a logistic
/// regression predicts matching class distributions on train and test, then
/// train on the matched sample and label the test set.
pub fn task_a_run(
    train: &[DatasetRecord],
    train_dists: &BTreeMap<String, SentimentDistribution>,
    test: &[DatasetRecord],
    test_dists: &BTreeMap<String, SentimentDistribution>,
    config: &TaskAConfig,
) -> Result<Vec<Prediction>, TaskError> {
    if train.is_empty() || test.is_empty() {
        return Err(TaskError::EmptyInput);
    }
    let mut rows = Vec::with_capacity(train.len());
    for record in train {
        rows.push((task_a_features(record, train_dists)?, gold_for(record)? as i64));
    }
    let mut classes: Vec<i64> = rows.iter().map(|(_, y)| *y).collect();
    classes.sort_unstable();
    classes.dedup();

    let test_features: Vec<Array1<f64>> = test
        .iter()
        .map(|record| task_a_features(record, test_dists))
        .collect::<Result<_, _>>()?;

    let matched =
        iterative_distribution_match(&rows, &test_features, &classes, &config.matching)?;
    let sample: Vec<(Array1<f64>, i64)> =
        matched.sample.iter().map(|&i| rows[i].clone()).collect();
    let model = train_logistic(&sample, &config.matching.logistic)?;

    let mut out = Vec::with_capacity(test.len());
    for (record, features) in test.iter().zip(&test_features) {
        let class = crate::stack::classify_logistic(&model, features)? as u8;
        out.push(Prediction { id: record.id.clone(), entity: record.entity.clone(), class });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TaskBdConfig {
    pub kappa: f64,
    pub threshold_scope: ThresholdScope,
    pub logistic: LogisticConfig,
}

impl Default for TaskBdConfig {
    fn default() -> Self {
        Self {
            kappa: 10.0,
            threshold_scope: ThresholdScope::Global,
            logistic: LogisticConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskBdOutput {
    /// Per-tweet binary predictions (task B).
    pub predictions: Vec<BinaryPrediction>,
    /// Beta priors per test entity, before the update.
    pub priors: BTreeMap<String, EntityPrior>,
    /// Beta posteriors per test entity; their means are the task D output.
    pub posteriors: BTreeMap<String, EntityPrior>,
}

fn entity_groups<'a>(
    records: &'a [DatasetRecord],
    dists: &BTreeMap<String, SentimentDistribution>,
) -> Result<BTreeMap<String, (Vec<&'a DatasetRecord>, Vec<SentimentDistribution>)>, TaskError> {
    let mut groups: BTreeMap<String, (Vec<&DatasetRecord>, Vec<SentimentDistribution>)> =
        BTreeMap::new();
    for record in records {
        let entity = entity_for(record)?;
        let dist = dist_for(record, dists)?.clone();
        let slot = groups.entry(entity.to_string()).or_default();
        slot.0.push(record);
        slot.1.push(dist);
    }
    Ok(groups)
}

/// Binary classification plus 2-class quantification. An entity-level
/// logistic regression over mean distributions supplies a positive
/// probability per entity, which becomes a Beta prior; a second, tweet-level
/// regression over `[distribution, prior mean]` labels each test tweet with
/// the mean positive probability as the threshold; the per-entity positive
/// counts then update the priors to Beta posteriors.
pub fn task_bd_run(
    train: &[DatasetRecord],
    train_dists: &BTreeMap<String, SentimentDistribution>,
    test: &[DatasetRecord],
    test_dists: &BTreeMap<String, SentimentDistribution>,
    config: &TaskBdConfig,
) -> Result<TaskBdOutput, TaskError> {
    if train.is_empty() || test.is_empty() {
        return Err(TaskError::EmptyInput);
    }
    let train_groups = entity_groups(train, train_dists)?;
    let test_groups = entity_groups(test, test_dists)?;

    // Entity-level model: mean distribution -> majority binary label.
    let mut entity_rows = Vec::with_capacity(train_groups.len());
    for (records, dists) in train_groups.values() {
        let labels: Vec<usize> = records
            .iter()
            .map(|r| gold_for(r).map(|g| binary_gold(g) as usize))
            .collect::<Result<_, _>>()?;
        let label = majority_label(&labels).expect("groups are nonempty") as i64;
        entity_rows.push((Array1::from(mean_dist(dists).probs().to_vec()), label));
    }
    let entity_model = train_logistic(&entity_rows, &config.logistic)?;
    let positive_slot = entity_model
        .classes
        .iter()
        .position(|&c| c == 1)
        .ok_or(TaskError::Stack(crate::stack::StackError::UnknownLabel(1)))?;

    let prior_for = |groups: &BTreeMap<String, (Vec<&DatasetRecord>, Vec<SentimentDistribution>)>|
     -> Result<BTreeMap<String, EntityPrior>, TaskError> {
        let mut priors = BTreeMap::new();
        for (entity, (_, dists)) in groups {
            let features = Array1::from(mean_dist(dists).probs().to_vec());
            let probs = predict_logistic(&entity_model, &features)?;
            priors.insert(
                entity.clone(),
                EntityPrior::from_probability(entity, probs[positive_slot], config.kappa)?,
            );
        }
        Ok(priors)
    };
    let train_priors = prior_for(&train_groups)?;
    let test_priors = prior_for(&test_groups)?;

    // Tweet-level model over [distribution, prior mean].
    let mut tweet_rows = Vec::with_capacity(train.len());
    for record in train {
        let entity = entity_for(record)?;
        let prior = &train_priors[entity];
        let features = binary_features(dist_for(record, train_dists)?, prior.mean());
        tweet_rows.push((features, binary_gold(gold_for(record)?)));
    }
    let tweet_model = train_logistic(&tweet_rows, &config.logistic)?;

    let test_rows: Vec<(String, String, SentimentDistribution)> = test
        .iter()
        .map(|record| {
            Ok((
                record.id.clone(),
                entity_for(record)?.to_string(),
                dist_for(record, test_dists)?.clone(),
            ))
        })
        .collect::<Result<_, TaskError>>()?;
    let predictions =
        entity_binary_classify(&test_rows, &test_priors, &tweet_model, config.threshold_scope)?;

    // Task D: positive counts update each entity's prior.
    let mut posteriors = BTreeMap::new();
    for (entity, (records, _)) in &test_groups {
        let total = records.len() as u64;
        let positives = predictions
            .iter()
            .filter(|p| &p.entity == entity && p.positive)
            .count() as u64;
        posteriors.insert(
            entity.clone(),
            beta_posterior(&test_priors[entity], positives, total)?,
        );
    }
    Ok(TaskBdOutput { predictions, priors: test_priors, posteriors })
}

/// Whether the reweighting pool `T` is the entity's tweets or the whole
/// split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TScope {
    Entity,
    Global,
}

#[derive(Debug, Clone)]
pub struct TaskCeConfig {
    pub resamples: usize,
    pub seed: u64,
    pub t_scope: TScope,
    pub logistic: LogisticConfig,
}

impl Default for TaskCeConfig {
    fn default() -> Self {
        Self {
            resamples: 100,
            seed: 0,
            t_scope: TScope::Entity,
            logistic: LogisticConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskCeOutput {
    /// Per-tweet 5-class predictions (task C).
    pub predictions: Vec<Prediction>,
    /// Predicted probabilities behind those labels, by tweet id.
    pub probabilities: BTreeMap<String, SentimentDistribution>,
    /// Per-entity 5-class quantification (task E).
    pub quantification: BTreeMap<String, SentimentDistribution>,
    /// The expected-distance labels feeding the quantification.
    pub distance_labels: Vec<Prediction>,
}

/// Embeds model probabilities over a class subset into the full 5-slot
/// vector.
fn embed_probs(model: &LogisticModel, probs: &Array1<f64>) -> SentimentDistribution {
    let mut full = [0.0; NUM_CLASSES];
    for (slot, &class) in model.classes.iter().enumerate() {
        full[class as usize] = probs[slot];
    }
    SentimentDistribution::from_weights(&full).expect("model probabilities are a distribution")
}

/// 5-class classification plus 5-class quantification. Bootstrap resamples
/// of each training entity feed an entity-level regression; its predictions
/// reweight every tweet's distribution, a final regression labels the test
/// tweets (task C), and expected-distance labels aggregated per entity give
/// the task E distributions.
pub fn task_ce_run(
    train: &[DatasetRecord],
    train_dists: &BTreeMap<String, SentimentDistribution>,
    test: &[DatasetRecord],
    test_dists: &BTreeMap<String, SentimentDistribution>,
    config: &TaskCeConfig,
) -> Result<TaskCeOutput, TaskError> {
    if train.is_empty() || test.is_empty() {
        return Err(TaskError::EmptyInput);
    }
    let train_groups = entity_groups(train, train_dists)?;
    let test_groups = entity_groups(test, test_dists)?;

    // Bootstrap rows: mean distribution of each resample, labeled by the
    // resample's majority gold label.
    let member_indices: BTreeMap<String, Vec<usize>> = {
        let mut by_entity: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, record) in train.iter().enumerate() {
            by_entity.entry(entity_for(record)?.to_string()).or_default().push(i);
        }
        by_entity
    };
    let resamples = bootstrap_entity_indices(&member_indices, config.resamples, config.seed)?;
    let mut boot_rows = Vec::new();
    for draws in resamples.values() {
        for draw in draws {
            let dists: Vec<SentimentDistribution> = draw
                .iter()
                .map(|&i| dist_for(&train[i], train_dists).cloned())
                .collect::<Result<_, _>>()?;
            let labels: Vec<usize> = draw
                .iter()
                .map(|&i| gold_for(&train[i]).map(usize::from))
                .collect::<Result<_, _>>()?;
            let label = majority_label(&labels).expect("draws are nonempty") as i64;
            boot_rows.push((Array1::from(mean_dist(&dists).probs().to_vec()), label));
        }
    }
    let entity_model = train_logistic(&boot_rows, &config.logistic)?;

    // Entity-level predictions for both splits, off the actual mean
    // distributions.
    let entity_lr = |groups: &BTreeMap<String, (Vec<&DatasetRecord>, Vec<SentimentDistribution>)>|
     -> Result<BTreeMap<String, SentimentDistribution>, TaskError> {
        let mut out = BTreeMap::new();
        for (entity, (_, dists)) in groups {
            let features = Array1::from(mean_dist(dists).probs().to_vec());
            let probs = predict_logistic(&entity_model, &features)?;
            out.insert(entity.clone(), embed_probs(&entity_model, &probs));
        }
        Ok(out)
    };
    let train_lr = entity_lr(&train_groups)?;
    let test_lr = entity_lr(&test_groups)?;

    // Reweight every tweet against its pool.
    let reweight_split = |records: &[DatasetRecord],
                          dists: &BTreeMap<String, SentimentDistribution>,
                          lr: &BTreeMap<String, SentimentDistribution>|
     -> Result<BTreeMap<String, SentimentDistribution>, TaskError> {
        let mut out = BTreeMap::new();
        match config.t_scope {
            TScope::Entity => {
                let mut by_entity: BTreeMap<&str, Vec<&DatasetRecord>> = BTreeMap::new();
                for record in records {
                    by_entity.entry(entity_for(record)?).or_default().push(record);
                }
                for (entity, members) in by_entity {
                    let pool: Vec<SentimentDistribution> = members
                        .iter()
                        .map(|r| dist_for(r, dists).cloned())
                        .collect::<Result<_, _>>()?;
                    for (t0, record) in members.iter().enumerate() {
                        out.insert(record.id.clone(), entity_reweight(&pool, t0, &lr[entity])?);
                    }
                }
            }
            TScope::Global => {
                let pool: Vec<SentimentDistribution> = records
                    .iter()
                    .map(|r| dist_for(r, dists).cloned())
                    .collect::<Result<_, _>>()?;
                for (t0, record) in records.iter().enumerate() {
                    let entity = entity_for(record)?;
                    out.insert(record.id.clone(), entity_reweight(&pool, t0, &lr[entity])?);
                }
            }
        }
        Ok(out)
    };
    let train_new = reweight_split(train, train_dists, &train_lr)?;
    let test_new = reweight_split(test, test_dists, &test_lr)?;

    // Final tweet-level model on the reweighted distributions.
    let final_rows: Vec<(Array1<f64>, i64)> = train
        .iter()
        .map(|record| {
            Ok((
                Array1::from(train_new[&record.id].probs().to_vec()),
                gold_for(record)? as i64,
            ))
        })
        .collect::<Result<_, TaskError>>()?;
    let final_model = train_logistic(&final_rows, &config.logistic)?;

    let mut predictions = Vec::with_capacity(test.len());
    let mut probabilities = BTreeMap::new();
    for record in test {
        let features = Array1::from(test_new[&record.id].probs().to_vec());
        let probs = predict_logistic(&final_model, &features)?;
        let full = embed_probs(&final_model, &probs);
        predictions.push(Prediction {
            id: record.id.clone(),
            entity: record.entity.clone(),
            class: full.argmax() as u8,
        });
        probabilities.insert(record.id.clone(), full);
    }

    // Task E: expected-distance labels over each entity's predicted
    // probabilities, averaged into per-entity distributions.
    let scale = LabelScale::default();
    let mut distance_labels = Vec::with_capacity(test.len());
    let mut per_entity_labels: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (entity, (records, _)) in &test_groups {
        let pool: Vec<SentimentDistribution> =
            records.iter().map(|r| probabilities[&r.id].clone()).collect();
        for (t0, record) in records.iter().enumerate() {
            let label = min_expected_distance_label(&pool, t0, &scale)?;
            distance_labels.push(Prediction {
                id: record.id.clone(),
                entity: Some(entity.clone()),
                class: label as u8,
            });
            per_entity_labels.entry(entity.clone()).or_default().push(label);
        }
    }
    let quantification = super::quantify_labels(&per_entity_labels)?;
    distance_labels.sort_by(|a, b| a.id.cmp(&b.id));

    Ok(TaskCeOutput { predictions, probabilities, quantification, distance_labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Synthetic split: per-tweet distributions concentrated on the gold
    /// label, ten entities, deterministic from the seed.
    pub(crate) fn synthetic_split(
        n: usize,
        seed: u64,
        prefix: &str,
    ) -> (Vec<DatasetRecord>, BTreeMap<String, SentimentDistribution>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::with_capacity(n);
        let mut dists = BTreeMap::new();
        for i in 0..n {
            let gold = rng.gen_range(0..5u8);
            let entity = format!("entity{}", i % 10);
            let id = format!("{prefix}{i:04}");
            let mut weights = [0.0f64; 5];
            for w in &mut weights {
                *w = rng.gen_range(0.02..0.10);
            }
            weights[gold as usize] += 0.75;
            let dist = SentimentDistribution::from_weights(&weights).unwrap();
            dists.insert(id.clone(), dist);
            records.push(DatasetRecord {
                id,
                entity: Some(entity),
                gold: Some(gold),
                text: format!("tweet {i}"),
                flags: None,
                parses: Vec::new(),
            });
        }
        (records, dists)
    }

    #[test]
    fn task_a_labels_most_of_an_easy_test_set() {
        let (train, train_dists) = synthetic_split(150, 41, "tr");
        let (test, test_dists) = synthetic_split(60, 42, "te");
        let preds =
            task_a_run(&train, &train_dists, &test, &test_dists, &TaskAConfig::default())
                .unwrap();
        assert_eq!(preds.len(), test.len());
        let hits = preds
            .iter()
            .zip(&test)
            .filter(|(p, r)| p.class == r.gold.unwrap())
            .count();
        assert!(hits * 10 >= test.len() * 8, "only {hits}/{} correct", test.len());
    }

    #[test]
    fn task_a_is_deterministic() {
        let (train, train_dists) = synthetic_split(80, 7, "tr");
        let (test, test_dists) = synthetic_split(40, 8, "te");
        let a = task_a_run(&train, &train_dists, &test, &test_dists, &TaskAConfig::default())
            .unwrap();
        let b = task_a_run(&train, &train_dists, &test, &test_dists, &TaskAConfig::default())
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn task_bd_produces_consistent_outputs() {
        let (train, train_dists) = synthetic_split(150, 51, "tr");
        let (test, test_dists) = synthetic_split(80, 52, "te");
        let out =
            task_bd_run(&train, &train_dists, &test, &test_dists, &TaskBdConfig::default())
                .unwrap();
        assert_eq!(out.predictions.len(), test.len());
        // Posterior means are probabilities, and every test entity has one.
        for (entity, posterior) in &out.posteriors {
            let mean = posterior.mean();
            assert!((0.0..=1.0).contains(&mean), "{entity}: {mean}");
            assert!(posterior.alpha > out.priors[entity].alpha - 1e-12);
        }
        // Posterior counts line up with the predictions.
        for (entity, posterior) in &out.posteriors {
            let total =
                out.predictions.iter().filter(|p| &p.entity == entity).count() as f64;
            let prior = &out.priors[entity];
            assert!((posterior.alpha + posterior.beta) - (prior.alpha + prior.beta) - total < 1e-9);
        }
        // Binary accuracy on this easy synthetic set should be high.
        let gold: BTreeMap<&str, i64> = test
            .iter()
            .map(|r| (r.id.as_str(), binary_gold(r.gold.unwrap())))
            .collect();
        let hits = out
            .predictions
            .iter()
            .filter(|p| (p.positive as i64) == gold[p.id.as_str()])
            .count();
        assert!(hits * 10 >= test.len() * 7, "only {hits}/{}", test.len());
    }

    #[test]
    fn task_ce_quantifies_every_entity() {
        let (train, train_dists) = synthetic_split(150, 61, "tr");
        let (test, test_dists) = synthetic_split(80, 62, "te");
        let out =
            task_ce_run(&train, &train_dists, &test, &test_dists, &TaskCeConfig::default())
                .unwrap();
        assert_eq!(out.predictions.len(), test.len());
        let entities: std::collections::BTreeSet<&str> =
            test.iter().map(|r| r.entity.as_deref().unwrap()).collect();
        assert_eq!(out.quantification.len(), entities.len());
        for dist in out.quantification.values() {
            let sum: f64 = dist.probs().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
        assert_eq!(out.distance_labels.len(), test.len());
    }

    #[test]
    fn task_ce_is_deterministic() {
        let (train, train_dists) = synthetic_split(60, 71, "tr");
        let (test, test_dists) = synthetic_split(30, 72, "te");
        let config = TaskCeConfig { resamples: 20, seed: 9, ..Default::default() };
        let a = task_ce_run(&train, &train_dists, &test, &test_dists, &config).unwrap();
        let b = task_ce_run(&train, &train_dists, &test, &test_dists, &config).unwrap();
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.quantification, b.quantification);
    }

    #[test]
    fn missing_entity_is_rejected() {
        let (mut train, train_dists) = synthetic_split(20, 81, "tr");
        train[3].entity = None;
        let (test, test_dists) = synthetic_split(10, 82, "te");
        let err = task_bd_run(&train, &train_dists, &test, &test_dists, &TaskBdConfig::default());
        assert!(matches!(err, Err(TaskError::BadRecord { .. })));
    }
}
