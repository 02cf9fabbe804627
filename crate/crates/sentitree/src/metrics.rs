//! Evaluation measures: macro-averaged recall, accuracy, macro-averaged MAE
//! over the ordinal scale, smoothed KL divergence and ordinal earth mover's
//! distance for quantification.

use thiserror::Error;

use crate::dist::LabelScale;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("gold class {class} has no items")]
    EmptyGoldClass { class: usize },
    #[error("no items to evaluate")]
    EmptyInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

/// Gold-by-predicted count matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionTable {
    counts: Vec<Vec<u64>>,
}

impl ConfusionTable {
    pub fn new(n_classes: usize) -> Self {
        Self { counts: vec![vec![0; n_classes]; n_classes] }
    }

    pub fn from_pairs(gold: &[usize], pred: &[usize], n_classes: usize) -> Result<Self, MetricError> {
        if gold.len() != pred.len() {
            return Err(MetricError::LengthMismatch { left: gold.len(), right: pred.len() });
        }
        let mut table = Self::new(n_classes);
        for (&g, &p) in gold.iter().zip(pred) {
            table.add(g, p, n_classes)?;
        }
        Ok(table)
    }

    fn add(&mut self, gold: usize, pred: usize, n_classes: usize) -> Result<(), MetricError> {
        for label in [gold, pred] {
            if label >= n_classes {
                return Err(MetricError::LabelOutOfRange { label, classes: n_classes });
            }
        }
        self.counts[gold][pred] += 1;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn gold_total(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }
}

/// Mean over classes of per-class recall. Every gold class must be populated.
pub fn macro_recall(conf: &ConfusionTable) -> Result<f64, MetricError> {
    let n = conf.n_classes();
    let mut sum = 0.0;
    for c in 0..n {
        let total = conf.gold_total(c);
        if total == 0 {
            return Err(MetricError::EmptyGoldClass { class: c });
        }
        sum += conf.count(c, c) as f64 / total as f64;
    }
    Ok(sum / n as f64)
}

pub fn accuracy(conf: &ConfusionTable) -> Result<f64, MetricError> {
    let total = conf.total();
    if total == 0 {
        return Err(MetricError::EmptyInput);
    }
    let hits: u64 = (0..conf.n_classes()).map(|c| conf.count(c, c)).sum();
    Ok(hits as f64 / total as f64)
}

/// Macro-averaged mean absolute error on the numeric label scale. The macro
/// average runs over the classes that actually occur in `gold`.
pub fn macro_mae(gold: &[usize], pred: &[usize], scale: &LabelScale) -> Result<f64, MetricError> {
    if gold.len() != pred.len() {
        return Err(MetricError::LengthMismatch { left: gold.len(), right: pred.len() });
    }
    if gold.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let n_classes = crate::dist::NUM_CLASSES;
    let mut err_sum = vec![0.0; n_classes];
    let mut count = vec![0u64; n_classes];
    for (&g, &p) in gold.iter().zip(pred) {
        for label in [g, p] {
            if label >= n_classes {
                return Err(MetricError::LabelOutOfRange { label, classes: n_classes });
            }
        }
        err_sum[g] += (scale.value(p) - scale.value(g)).abs();
        count[g] += 1;
    }
    let mut macro_sum = 0.0;
    let mut present = 0;
    for c in 0..n_classes {
        if count[c] > 0 {
            macro_sum += err_sum[c] / count[c] as f64;
            present += 1;
        }
    }
    if present == 0 {
        return Err(MetricError::EmptyInput);
    }
    Ok(macro_sum / present as f64)
}

/// KL divergence with additive smoothing applied identically to both sides:
/// `x' = (x + eps) / (1 + n*eps)`.
pub fn kld(true_dist: &[f64], est: &[f64], epsilon: f64) -> Result<f64, MetricError> {
    if true_dist.len() != est.len() {
        return Err(MetricError::LengthMismatch { left: true_dist.len(), right: est.len() });
    }
    if true_dist.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let n = true_dist.len() as f64;
    let smooth = |x: f64| (x + epsilon) / (1.0 + n * epsilon);
    let mut sum = 0.0;
    for (&t, &e) in true_dist.iter().zip(est) {
        let ts = smooth(t);
        let es = smooth(e);
        if ts > 0.0 {
            if es == 0.0 {
                return Ok(f64::INFINITY);
            }
            sum += ts * (ts / es).ln();
        }
    }
    Ok(sum)
}

/// Earth mover's distance between two distributions over ordered, unit-spaced
/// classes: the L1 distance between their CDFs at the interior cut points.
pub fn emd_ordinal(true_dist: &[f64], est: &[f64]) -> Result<f64, MetricError> {
    if true_dist.len() != est.len() {
        return Err(MetricError::LengthMismatch { left: true_dist.len(), right: est.len() });
    }
    if true_dist.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut cdf_t = 0.0;
    let mut cdf_e = 0.0;
    let mut sum = 0.0;
    for i in 0..true_dist.len() - 1 {
        cdf_t += true_dist[i];
        cdf_e += est[i];
        sum += (cdf_t - cdf_e).abs();
    }
    Ok(sum)
}
