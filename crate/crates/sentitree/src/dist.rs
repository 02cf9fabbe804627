//! Five-class sentiment distributions and the ordinal label scale shared by
//! the neural, aggregation, task and metric layers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of sentiment classes, ordered very-negative .. very-positive.
pub const NUM_CLASSES: usize = 5;

/// Class names in scale order.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "very-negative",
    "negative",
    "neutral",
    "positive",
    "very-positive",
];

/// Index of the neutral class.
pub const NEUTRAL: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("probability entries must be nonnegative, got {0}")]
    Negative(f64),
    #[error("probabilities must sum to 1 within {tol}, got {sum}")]
    BadSum { sum: f64, tol: f64 },
    #[error("cannot normalize: total mass {0} is not positive")]
    ZeroMass(f64),
    #[error("class index {0} out of range 0..{NUM_CLASSES}")]
    BadClass(usize),
}

/// A probability vector over the five sentiment classes.
///
/// Entries are nonnegative and sum to 1 within [`SentimentDistribution::TOL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; NUM_CLASSES]", into = "[f64; NUM_CLASSES]")]
pub struct SentimentDistribution {
    p: [f64; NUM_CLASSES],
}

impl SentimentDistribution {
    pub const TOL: f64 = 1e-9;

    pub fn new(p: [f64; NUM_CLASSES]) -> Result<Self, DistError> {
        for &v in &p {
            if !(v >= 0.0) {
                return Err(DistError::Negative(v));
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > Self::TOL {
            return Err(DistError::BadSum { sum, tol: Self::TOL });
        }
        Ok(Self { p })
    }

    /// Normalizes arbitrary nonnegative weights into a distribution.
    pub fn from_weights(w: &[f64]) -> Result<Self, DistError> {
        if w.len() != NUM_CLASSES {
            return Err(DistError::BadClass(w.len()));
        }
        let mut p = [0.0; NUM_CLASSES];
        let mut sum = 0.0;
        for (i, &v) in w.iter().enumerate() {
            if !(v >= 0.0) {
                return Err(DistError::Negative(v));
            }
            p[i] = v;
            sum += v;
        }
        if sum <= 0.0 || !sum.is_finite() {
            return Err(DistError::ZeroMass(sum));
        }
        for v in &mut p {
            *v /= sum;
        }
        // Renormalization keeps the exact-sum residue below TOL for finite input.
        Ok(Self { p })
    }

    pub fn uniform() -> Self {
        Self { p: [1.0 / NUM_CLASSES as f64; NUM_CLASSES] }
    }

    pub fn point_mass(class: usize) -> Result<Self, DistError> {
        if class >= NUM_CLASSES {
            return Err(DistError::BadClass(class));
        }
        let mut p = [0.0; NUM_CLASSES];
        p[class] = 1.0;
        Ok(Self { p })
    }

    pub fn probs(&self) -> &[f64; NUM_CLASSES] {
        &self.p
    }

    pub fn prob(&self, class: usize) -> f64 {
        self.p[class]
    }

    /// Most probable class; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for c in 1..NUM_CLASSES {
            if self.p[c] > self.p[best] {
                best = c;
            }
        }
        best
    }
}

impl TryFrom<[f64; NUM_CLASSES]> for SentimentDistribution {
    type Error = DistError;

    fn try_from(p: [f64; NUM_CLASSES]) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<SentimentDistribution> for [f64; NUM_CLASSES] {
    fn from(d: SentimentDistribution) -> Self {
        d.p
    }
}

/// Numeric values attached to the five ordinal classes; strictly increasing
/// and unit-spaced so absolute label distances are translation-invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScale {
    values: [f64; NUM_CLASSES],
}

impl Default for LabelScale {
    fn default() -> Self {
        Self { values: [0.0, 1.0, 2.0, 3.0, 4.0] }
    }
}

impl LabelScale {
    pub fn new(values: [f64; NUM_CLASSES]) -> Result<Self, DistError> {
        for w in values.windows(2) {
            if (w[1] - w[0] - 1.0).abs() > 1e-12 {
                return Err(DistError::BadSum { sum: w[1] - w[0], tol: 1e-12 });
            }
        }
        Ok(Self { values })
    }

    pub fn value(&self, class: usize) -> f64 {
        self.values[class]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_distribution_roundtrips_through_serde() {
        let d = SentimentDistribution::new([0.1, 0.2, 0.2, 0.3, 0.2]).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        let back: SentimentDistribution = serde_json::from_str(&json).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn bad_sum_rejected() {
        assert!(matches!(
            SentimentDistribution::new([0.5, 0.5, 0.5, 0.0, 0.0]),
            Err(DistError::BadSum { .. })
        ));
        let json = "[0.5,0.5,0.5,0.0,0.0]";
        assert!(serde_json::from_str::<SentimentDistribution>(json).is_err());
    }

    #[test]
    fn negative_rejected() {
        assert!(matches!(
            SentimentDistribution::new([-0.1, 0.4, 0.3, 0.2, 0.2]),
            Err(DistError::Negative(_))
        ));
    }

    #[test]
    fn normalization_and_argmax() {
        let d = SentimentDistribution::from_weights(&[2.0, 0.0, 0.0, 0.0, 6.0]).unwrap();
        assert_eq!(d.probs(), &[0.25, 0.0, 0.0, 0.0, 0.75]);
        assert_eq!(d.argmax(), 4);
        assert_eq!(SentimentDistribution::uniform().argmax(), 0);
    }

    #[test]
    fn label_scale_must_be_unit_spaced() {
        assert!(LabelScale::new([0.0, 1.0, 2.0, 3.0, 4.0]).is_ok());
        assert!(LabelScale::new([-2.0, -1.0, 0.0, 1.0, 2.0]).is_ok());
        assert!(LabelScale::new([0.0, 2.0, 3.0, 4.0, 5.0]).is_err());
    }
}
