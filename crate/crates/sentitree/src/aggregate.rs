//! Sentence-to-tweet aggregation: each sentence distribution is weighted by
//! `(1+f)^alpha * l^beta * (1+pol)^gamma + 1` where `f` is the fraction of
//! known words, `l` the sentence length and `pol` the polarity score, then
//! the weighted mean is renormalized. The three exponents are fitted against
//! gold tweet labels by grid search plus coordinate descent.

use thiserror::Error;

use crate::dist::SentimentDistribution;

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("tweet has no sentences")]
    EmptyTweet,
    #[error("no tweets to fit on")]
    EmptyInput,
    #[error("known-word fraction must be in [0,1], got {0}")]
    BadFraction(f64),
    #[error("sentence length must be >= 1, got {0}")]
    BadLength(usize),
    #[error("weights and distributions disagree: {0} vs {1}")]
    WeightMismatch(usize, usize),
}

/// One sentence's model output plus the covariates the weight function uses.
#[derive(Debug, Clone, PartialEq)]
pub struct SentencePrediction {
    pub dist: SentimentDistribution,
    known_fraction: f64,
    length: usize,
}

impl SentencePrediction {
    pub fn new(
        dist: SentimentDistribution,
        known_fraction: f64,
        length: usize,
    ) -> Result<Self, AggregateError> {
        if !(0.0..=1.0).contains(&known_fraction) {
            return Err(AggregateError::BadFraction(known_fraction));
        }
        if length == 0 {
            return Err(AggregateError::BadLength(length));
        }
        Ok(Self { dist, known_fraction, length })
    }

    pub fn known_fraction(&self) -> f64 {
        self.known_fraction
    }

    pub fn length(&self) -> usize {
        self.length
    }
}

/// Exponents of the sentence weight function.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AggregationParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl AggregationParams {
    pub fn zero() -> Self {
        Self { alpha: 0.0, beta: 0.0, gamma: 0.0 }
    }
}

/// Polarity of a distribution: `|10*vn + n - p - 10*vp|`. The neutral mass
/// does not enter the formula.
pub fn polarity(dist: &SentimentDistribution) -> f64 {
    let p = dist.probs();
    (10.0 * p[0] + p[1] - p[3] - 10.0 * p[4]).abs()
}

/// Sentence weight `(1+f)^alpha * l^beta * (1+pol)^gamma + 1`; strictly
/// greater than 1 for finite inputs.
pub fn weight(pred: &SentencePrediction, params: &AggregationParams) -> f64 {
    let f = pred.known_fraction;
    let l = pred.length as f64;
    let pol = polarity(&pred.dist);
    (1.0 + f).powf(params.alpha) * l.powf(params.beta) * (1.0 + pol).powf(params.gamma) + 1.0
}

/// Weighted mean of distributions, renormalized. Scaling all weights by a
/// positive constant leaves the result unchanged.
pub fn aggregate_weighted(
    dists: &[SentimentDistribution],
    weights: &[f64],
) -> Result<SentimentDistribution, AggregateError> {
    if dists.is_empty() {
        return Err(AggregateError::EmptyTweet);
    }
    if dists.len() != weights.len() {
        return Err(AggregateError::WeightMismatch(dists.len(), weights.len()));
    }
    if dists.len() == 1 {
        // One sentence: the weight cancels exactly, with no rounding residue.
        return Ok(dists[0].clone());
    }
    let mut acc = [0.0; crate::dist::NUM_CLASSES];
    for (d, &w) in dists.iter().zip(weights) {
        for (a, &p) in acc.iter_mut().zip(d.probs()) {
            *a += w * p;
        }
    }
    SentimentDistribution::from_weights(&acc).map_err(|_| AggregateError::EmptyTweet)
}

/// Combines sentence predictions into one tweet distribution.
pub fn aggregate_tweet(
    preds: &[SentencePrediction],
    params: &AggregationParams,
) -> Result<SentimentDistribution, AggregateError> {
    if preds.is_empty() {
        return Err(AggregateError::EmptyTweet);
    }
    let dists: Vec<SentimentDistribution> = preds.iter().map(|p| p.dist.clone()).collect();
    let weights: Vec<f64> = preds.iter().map(|p| weight(p, params)).collect();
    aggregate_weighted(&dists, &weights)
}

/// Search configuration for [`fit_params`]. The default grid enumerates the
/// origin first so a flat objective degrades to `(0,0,0)`.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub grid: Vec<f64>,
    pub refine_initial_step: f64,
    pub refine_min_step: f64,
    pub max_refine_sweeps: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            grid: vec![0.0, -2.0, -1.0, -0.5, 0.5, 1.0, 2.0],
            refine_initial_step: 0.25,
            refine_min_step: 1e-3,
            max_refine_sweeps: 200,
        }
    }
}

/// Mean cross-entropy of the aggregated distributions against gold labels.
pub fn fit_objective(
    tweets: &[(Vec<SentencePrediction>, usize)],
    params: &AggregationParams,
) -> Result<f64, AggregateError> {
    if tweets.is_empty() {
        return Err(AggregateError::EmptyInput);
    }
    let mut sum = 0.0;
    for (preds, gold) in tweets {
        let agg = aggregate_tweet(preds, params)?;
        sum -= agg.prob(*gold).max(1e-12).ln();
    }
    Ok(sum / tweets.len() as f64)
}

/// Grid search over `(alpha, beta, gamma)` followed by coordinate descent.
/// Deterministic: ties keep the earliest grid point, refinement accepts only
/// strict improvements.
pub fn fit_params(
    tweets: &[(Vec<SentencePrediction>, usize)],
    config: &FitConfig,
) -> Result<(AggregationParams, f64), AggregateError> {
    if tweets.is_empty() {
        return Err(AggregateError::EmptyInput);
    }
    let mut best = AggregationParams::zero();
    let mut best_obj = f64::INFINITY;
    for &alpha in &config.grid {
        for &beta in &config.grid {
            for &gamma in &config.grid {
                let candidate = AggregationParams { alpha, beta, gamma };
                let obj = fit_objective(tweets, &candidate)?;
                if obj < best_obj {
                    best_obj = obj;
                    best = candidate;
                }
            }
        }
    }

    let mut step = config.refine_initial_step;
    let mut sweeps = 0;
    while step >= config.refine_min_step && sweeps < config.max_refine_sweeps {
        sweeps += 1;
        let mut improved = false;
        for coord in 0..3 {
            for dir in [1.0, -1.0] {
                let mut candidate = best;
                let slot = match coord {
                    0 => &mut candidate.alpha,
                    1 => &mut candidate.beta,
                    _ => &mut candidate.gamma,
                };
                *slot += dir * step;
                let obj = fit_objective(tweets, &candidate)?;
                if obj < best_obj {
                    best_obj = obj;
                    best = candidate;
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    Ok((best, best_obj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dist(p: [f64; 5]) -> SentimentDistribution {
        SentimentDistribution::new(p).unwrap()
    }

    #[test]
    fn polarity_cases() {
        assert_eq!(polarity(&SentimentDistribution::uniform()), 0.0);
        assert_eq!(polarity(&SentimentDistribution::point_mass(0).unwrap()), 10.0);
        assert_eq!(polarity(&SentimentDistribution::point_mass(4).unwrap()), 10.0);
        let v = polarity(&dist([0.1, 0.2, 0.2, 0.3, 0.2]));
        assert_abs_diff_eq!(v, 1.1, epsilon = 1e-12);
    }

    #[test]
    fn weight_cases() {
        let params0 = AggregationParams::zero();
        let pred = SentencePrediction::new(SentimentDistribution::uniform(), 0.3, 4).unwrap();
        assert_eq!(weight(&pred, &params0), 2.0);

        // f=1, l=2, pol=0, alpha=1, beta=1, gamma=5 -> 2*2*1 + 1 = 5.
        let pred = SentencePrediction::new(SentimentDistribution::uniform(), 1.0, 2).unwrap();
        let params = AggregationParams { alpha: 1.0, beta: 1.0, gamma: 5.0 };
        assert_abs_diff_eq!(weight(&pred, &params), 5.0, epsilon = 1e-12);

        let pred = SentencePrediction::new(SentimentDistribution::uniform(), 0.0, 1).unwrap();
        let params = AggregationParams { alpha: -1.5, beta: 2.0, gamma: 0.25 };
        assert_eq!(weight(&pred, &params), 2.0);
    }

    #[test]
    fn prediction_invariants_enforced() {
        assert!(SentencePrediction::new(SentimentDistribution::uniform(), 1.1, 3).is_err());
        assert!(SentencePrediction::new(SentimentDistribution::uniform(), 0.5, 0).is_err());
    }

    #[test]
    fn aggregate_single_sentence_is_identity() {
        let d = dist([0.1, 0.2, 0.2, 0.3, 0.2]);
        let pred = SentencePrediction::new(d.clone(), 0.7, 3).unwrap();
        let params = AggregationParams { alpha: 2.0, beta: -1.0, gamma: 0.5 };
        let out = aggregate_tweet(&[pred], &params).unwrap();
        for c in 0..5 {
            assert_abs_diff_eq!(out.prob(c), d.prob(c), epsilon = 1e-12);
        }
    }

    #[test]
    fn equal_weights_give_arithmetic_mean() {
        let d1 = dist([0.5, 0.5, 0.0, 0.0, 0.0]);
        let d2 = dist([0.0, 0.0, 0.0, 0.5, 0.5]);
        let out = aggregate_weighted(&[d1, d2], &[3.0, 3.0]).unwrap();
        assert_eq!(out.probs(), &[0.25, 0.25, 0.0, 0.25, 0.25]);
    }

    #[test]
    fn hand_computed_weighted_mean() {
        let d1 = dist([0.1, 0.2, 0.2, 0.3, 0.2]);
        let d2 = dist([0.4, 0.3, 0.1, 0.1, 0.1]);
        let out = aggregate_weighted(&[d1.clone(), d2.clone()], &[5.0, 2.0]).unwrap();
        for c in 0..5 {
            let expect = (5.0 * d1.prob(c) + 2.0 * d2.prob(c)) / 7.0;
            assert_abs_diff_eq!(out.prob(c), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_tweet_rejected() {
        assert_eq!(
            aggregate_tweet(&[], &AggregationParams::zero()).unwrap_err(),
            AggregateError::EmptyTweet
        );
    }

    #[test]
    fn flat_objective_returns_origin() {
        // Single-sentence tweets make the weights cancel, so every grid point
        // scores the same and the origin-first enumeration wins.
        let tweets: Vec<(Vec<SentencePrediction>, usize)> = (0..4)
            .map(|i| {
                let mut p = [0.05; 5];
                p[i % 5] = 0.8;
                let pred = SentencePrediction::new(dist(p), 0.5, 3).unwrap();
                (vec![pred], i % 5)
            })
            .collect();
        let (params, _) = fit_params(&tweets, &FitConfig::default()).unwrap();
        assert_eq!(params, AggregationParams::zero());
    }

    #[test]
    fn single_point_grid_returns_that_point() {
        let pred = SentencePrediction::new(SentimentDistribution::uniform(), 0.5, 2).unwrap();
        let tweets = vec![(vec![pred], 2usize)];
        let config = FitConfig {
            grid: vec![1.5],
            refine_initial_step: 0.0,
            refine_min_step: 1.0,
            max_refine_sweeps: 0,
        };
        let (params, _) = fit_params(&tweets, &config).unwrap();
        assert_eq!(params, AggregationParams { alpha: 1.5, beta: 1.5, gamma: 1.5 });
    }

    #[test]
    fn fitted_objective_never_exceeds_grid_points() {
        let tweets = synthetic_length_signal(3);
        let config = FitConfig::default();
        let (_, best_obj) = fit_params(&tweets, &config).unwrap();
        for &a in &config.grid {
            for &b in &config.grid {
                for &g in &config.grid {
                    let obj =
                        fit_objective(&tweets, &AggregationParams { alpha: a, beta: b, gamma: g })
                            .unwrap();
                    assert!(best_obj <= obj + 1e-12);
                }
            }
        }
    }

    /// Tweets where the long sentence carries the gold label and short
    /// sentences carry noise, so up-weighting length helps.
    pub(crate) fn synthetic_length_signal(seed: u64) -> Vec<(Vec<SentencePrediction>, usize)> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut tweets = Vec::new();
        for _ in 0..40 {
            let gold = rng.gen_range(0..5usize);
            let mut main = [0.02; 5];
            main[gold] = 0.92;
            let long = SentencePrediction::new(dist(main), 0.9, 12).unwrap();
            let mut sentences = vec![long];
            for _ in 0..2 {
                let noise_class = rng.gen_range(0..5usize);
                let mut p = [0.05; 5];
                p[noise_class] = 0.8;
                sentences.push(SentencePrediction::new(dist(p), 0.9, 1).unwrap());
            }
            tweets.push((sentences, gold));
        }
        tweets
    }

    #[test]
    fn recovers_positive_length_exponent_on_synthetic_signal() {
        let tweets = synthetic_length_signal(3);
        let (params, _) = fit_params(&tweets, &FitConfig::default()).unwrap();
        assert!(params.beta > 0.0, "expected beta > 0, got {params:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn weight_always_exceeds_one(
                f in 0.0f64..=1.0,
                l in 1usize..40,
                a in -3.0f64..3.0,
                b in -3.0f64..3.0,
                g in -3.0f64..3.0,
            ) {
                let pred = SentencePrediction::new(SentimentDistribution::uniform(), f, l).unwrap();
                let params = AggregationParams { alpha: a, beta: b, gamma: g };
                prop_assert!(weight(&pred, &params) > 1.0);
            }

            #[test]
            fn aggregation_is_scale_invariant(
                ws in proptest::collection::vec(0.1f64..10.0, 1..6),
                scale in 0.01f64..100.0,
            ) {
                let dists: Vec<SentimentDistribution> = (0..ws.len())
                    .map(|i| SentimentDistribution::point_mass(i % 5).unwrap())
                    .collect();
                let base = aggregate_weighted(&dists, &ws).unwrap();
                let scaled: Vec<f64> = ws.iter().map(|w| w * scale).collect();
                let out = aggregate_weighted(&dists, &scaled).unwrap();
                for c in 0..5 {
                    prop_assert!((base.prob(c) - out.prob(c)).abs() < 1e-9);
                }
            }

            #[test]
            fn polarity_below_ten_off_vertices(w in proptest::array::uniform5(0.01f64..1.0)) {
                let d = SentimentDistribution::from_weights(&w).unwrap();
                let v = polarity(&d);
                prop_assert!(v >= 0.0);
                prop_assert!(v < 10.0);
            }

            #[test]
            fn aggregate_output_is_valid(
                ws in proptest::collection::vec(0.2f64..5.0, 1..5),
            ) {
                let dists: Vec<SentimentDistribution> = (0..ws.len())
                    .map(|i| SentimentDistribution::point_mass((i * 2) % 5).unwrap())
                    .collect();
                let out = aggregate_weighted(&dists, &ws).unwrap();
                let sum: f64 = out.probs().iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }
}
