//! Acceptance suite. Each test covers one numbered criterion, checks it
//! against an oracle implemented independently in this file where one is
//! called for, and prints a PASS line (run with `-- --nocapture` to see
//! them). Tolerances are pinned in the assertions.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sentitree::aggregate::{
    self, AggregationParams, FitConfig, SentencePrediction,
};
use sentitree::dist::{LabelScale, SentimentDistribution};
use sentitree::metrics;
use sentitree::neural::{
    self, compose, gradcheck, CategoryTable, Hyper, LossMode, TrainConfig, TreeLstmParams,
};
use sentitree::stack::{rfe_select, FeatureGroup, FeatureSchema, RfeConfig, RfeTarget};
use sentitree::tasks::{
    beta_posterior, entity_reweight, entity_reweight_raw, expected_distance_losses,
    min_expected_distance_label, EntityPrior,
};
use sentitree::treebank::Treebank;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn pass(criterion: usize, name: &str, detail: &str) {
    println!("acceptance {criterion} ({name}): PASS [{detail}]");
}

// ---------------------------------------------------------------------------
// 1. Gradient suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let report = gradcheck::suite(20260810, &[1, 2, 4], 100, 1e-5, 1e-4).unwrap();
    assert_eq!(
        report.violations, 0,
        "coordinates beyond tolerance: {report:?}"
    );
    // Every analytic/numeric pair agrees to well under a nano-unit in
    // absolute terms, far inside the oracle's own resolution.
    assert!(report.max_abs_err < 1e-9, "max abs err {}", report.max_abs_err);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "gradient suite took {elapsed:?}");
    pass(
        1,
        "gradient suite",
        &format!(
            "100 instances, {} coords, max abs err {:.2e}, {:?}",
            report.coords_checked, report.max_abs_err, elapsed
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Overfit gate
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_overfit_gate() {
    let start = Instant::now();
    let bank = Treebank::load(&data_dir().join("toy_treebank.txt")).unwrap();
    assert_eq!(bank.len(), 20);
    let config = TrainConfig {
        epochs: 200,
        batch_size: 4,
        learning_rate: 0.1,
        seed: 7,
        ..TrainConfig::default()
    };
    let report = neural::train(&bank, None, Hyper::new(8).unwrap(), &config, None).unwrap();
    let accuracy =
        neural::node_accuracy(&bank, &report.params, LossMode::AllLabeledNodes).unwrap();
    assert!(accuracy >= 0.95, "all-node accuracy {accuracy}");
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "overfit run took {elapsed:?}");
    pass(
        2,
        "overfit gate",
        &format!("accuracy {accuracy:.4} at d=8 seed 7, {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------
// 3. Compose oracle
// ---------------------------------------------------------------------------

/// Independent scalar evaluation of one gate computation, written as plain
/// triple loops over the tensor and the selected matrix.
fn scalar_compose(
    k: usize,
    s: &[f64],
    left_entity: bool,
    right_entity: bool,
    params: &TreeLstmParams,
) -> Vec<f64> {
    let pair = params.hyper.pair_dim();
    let d = params.hyper.d;
    let gate = &params.gates[k];
    let mut out = vec![0.0; d];
    for m in 0..d {
        let mut acc = 0.0;
        for a in 0..pair {
            for b in 0..pair {
                acc += s[a] * gate.tensor[[a, b, m]] * s[b];
            }
        }
        out[m] = acc;
    }
    let w = &gate.w[left_entity as usize][right_entity as usize];
    for m in 0..d {
        for a in 0..pair {
            out[m] += w[[m, a]] * s[a];
        }
    }
    out
}

#[test]
fn criterion_3_compose_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut max_gap = 0.0f64;
    for trial in 0..1000 {
        let d = [1usize, 2, 3, 4][trial % 4];
        let params = TreeLstmParams::init(
            Hyper::new(d).unwrap(),
            &BTreeSet::new(),
            CategoryTable::new(vec![]),
            rng.gen(),
            None,
        )
        .unwrap();
        let half = params.hyper.half_dim();
        let a: Array1<f64> =
            Array1::from((0..half).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let b: Array1<f64> =
            Array1::from((0..half).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let (li, ri) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
        let k = rng.gen_range(0..6);

        let fast = compose(k, a.view(), li, b.view(), ri, &params).unwrap();
        let mut s: Vec<f64> = a.to_vec();
        s.extend(b.iter());
        let slow = scalar_compose(k, &s, li, ri, &params);
        for (x, y) in fast.iter().zip(&slow) {
            max_gap = max_gap.max((x - y).abs());
        }
        assert!(max_gap <= 1e-12, "trial {trial}: gap {max_gap}");

        // Indicator exclusivity: zeroing the three unselected matrices
        // never changes the output.
        let mut stripped = params.clone();
        for i in 0..2 {
            for j in 0..2 {
                if (i, j) != (li as usize, ri as usize) {
                    stripped.gates[k].w[i][j].fill(0.0);
                }
            }
        }
        let again = compose(k, a.view(), li, b.view(), ri, &stripped).unwrap();
        assert_eq!(fast, again, "trial {trial}: unselected matrices leaked");
    }
    pass(3, "compose oracle", &format!("1000 trials, max gap {max_gap:.2e}"));
}

// ---------------------------------------------------------------------------
// 4. Metric oracles
// ---------------------------------------------------------------------------

/// Brute-force 1-D transport: repeatedly move mass from the leftmost surplus
/// bin to the leftmost deficit bin, accumulating mass times distance.
fn greedy_transport(a: &[f64], b: &[f64]) -> f64 {
    let mut surplus: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mut cost = 0.0;
    loop {
        let from = surplus.iter().position(|&v| v > 1e-15);
        let to = surplus.iter().position(|&v| v < -1e-15);
        let (Some(from), Some(to)) = (from, to) else { break };
        let moved = surplus[from].min(-surplus[to]);
        cost += moved * (from as f64 - to as f64).abs();
        surplus[from] -= moved;
        surplus[to] += moved;
    }
    cost
}

#[test]
fn criterion_4_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut random_dist = || {
        let w: Vec<f64> = (0..5).map(|_| rng.gen_range(0.001..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    let mut max_gap = 0.0f64;
    for _ in 0..1000 {
        let a = random_dist();
        let b = random_dist();
        let fast = metrics::emd_ordinal(&a, &b).unwrap();
        let slow = greedy_transport(&a, &b);
        max_gap = max_gap.max((fast - slow).abs());
    }
    assert!(max_gap <= 1e-12, "emd gap {max_gap}");

    // KLD closed-form cases.
    let p = [0.3, 0.1, 0.2, 0.25, 0.15];
    assert_eq!(metrics::kld(&p, &p, 1e-3).unwrap(), 0.0);
    let ln2 = metrics::kld(&[1.0, 0.0], &[0.5, 0.5], 0.0).unwrap();
    assert!((ln2 - std::f64::consts::LN_2).abs() <= 1e-12, "kld(1,0 || .5,.5) = {ln2}");

    // Hand-computed confusion cases.
    let conf = metrics::ConfusionTable::from_pairs(&[0, 0, 1, 1], &[0, 0, 1, 0], 2).unwrap();
    assert!((metrics::macro_recall(&conf).unwrap() - 0.75).abs() <= 1e-12);
    let conf = metrics::ConfusionTable::from_pairs(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
    assert_eq!(metrics::macro_recall(&conf).unwrap(), 1.0);

    let scale = LabelScale::default();
    let mae = metrics::macro_mae(&[2, 2, 2], &[1, 2, 3], &scale).unwrap();
    assert!((mae - 2.0 / 3.0).abs() <= 1e-12);
    let mae = metrics::macro_mae(&[0, 0, 3], &[1, 1, 3], &scale).unwrap();
    assert!((mae - 0.5).abs() <= 1e-12);
    assert_eq!(metrics::macro_mae(&[0, 3], &[0, 3], &scale).unwrap(), 0.0);

    pass(4, "metric oracles", &format!("1000 emd pairs, max gap {max_gap:.2e}"));
}

// ---------------------------------------------------------------------------
// 5. Reweighting and expected-distance identities
// ---------------------------------------------------------------------------

fn random_sentiment(rng: &mut ChaCha8Rng) -> SentimentDistribution {
    let w: Vec<f64> = (0..5).map(|_| rng.gen_range(0.01..1.0)).collect();
    SentimentDistribution::from_weights(&w).unwrap()
}

#[test]
fn criterion_5_reweight_and_distance_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);

    // Single-tweet identity: renormalized reweighting returns the entity
    // model's distribution exactly.
    for _ in 0..100 {
        let lr = random_sentiment(&mut rng);
        let tweet = random_sentiment(&mut rng);
        let out = entity_reweight(&[tweet], 0, &lr).unwrap();
        for c in 0..5 {
            assert!((out.prob(c) - lr.prob(c)).abs() <= 1e-12);
        }
    }

    // Single-tweet uniform losses are exactly (10, 7, 6, 7, 10) with the
    // neutral argmin.
    let scale = LabelScale::default();
    let uniform = [SentimentDistribution::uniform()];
    let losses = expected_distance_losses(&uniform, 0, &scale).unwrap();
    assert_eq!(losses, [10.0, 7.0, 6.0, 7.0, 10.0]);
    assert_eq!(min_expected_distance_label(&uniform, 0, &scale).unwrap(), 2);

    // Double-loop brute-force oracles over random multi-tweet pools.
    let mut max_gap = 0.0f64;
    for _ in 0..500 {
        let n = rng.gen_range(2..=8);
        let pool: Vec<SentimentDistribution> =
            (0..n).map(|_| random_sentiment(&mut rng)).collect();
        let lr = random_sentiment(&mut rng);
        let t0 = rng.gen_range(0..n);

        // Eq. 3 brute force: p_new(c0) = sum_c p(t0,c) * lr(c0) / colsum(c).
        let raw = entity_reweight_raw(&pool, t0, &lr).unwrap();
        for c0 in 0..5 {
            let mut expect = 0.0;
            for c in 0..5 {
                let colsum: f64 = pool.iter().map(|t| t.prob(c)).sum();
                expect += pool[t0].prob(c) * lr.prob(c0) / colsum;
            }
            max_gap = max_gap.max((raw[c0] - expect).abs());
        }

        // Eq. 4 brute force over all candidate labels.
        let losses = expected_distance_losses(&pool, t0, &scale).unwrap();
        let mut brute = [0.0f64; 5];
        for (c0, slot) in brute.iter_mut().enumerate() {
            for c in 0..5 {
                let colsum: f64 = pool.iter().map(|t| t.prob(c)).sum();
                *slot += (c as f64 - c0 as f64).abs() * pool[t0].prob(c) / colsum;
            }
        }
        for c0 in 0..5 {
            max_gap = max_gap.max((losses[c0] - brute[c0]).abs());
        }
        let label = min_expected_distance_label(&pool, t0, &scale).unwrap();
        let brute_best = (0..5).min_by(|&a, &b| brute[a].total_cmp(&brute[b])).unwrap();
        assert!((losses[label] - brute[brute_best]).abs() <= 1e-12);
    }
    assert!(max_gap <= 1e-12, "max gap {max_gap}");
    pass(5, "reweight/distance identities", &format!("500 pools, max gap {max_gap:.2e}"));
}

// ---------------------------------------------------------------------------
// 6. Beta-Binomial conjugacy
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_conjugacy() {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    for _ in 0..1000 {
        // Quarter-unit priors keep every sum exactly representable, so the
        // composition property holds bit for bit.
        let alpha = rng.gen_range(1..=40) as f64 / 4.0;
        let beta = rng.gen_range(1..=40) as f64 / 4.0;
        let prior = EntityPrior::new("e", alpha, beta).unwrap();
        let total_1 = rng.gen_range(0..=1_000_000u64);
        let pos_1 = rng.gen_range(0..=total_1);
        let total_2 = rng.gen_range(0..=1_000_000u64);
        let pos_2 = rng.gen_range(0..=total_2);

        let stepwise =
            beta_posterior(&beta_posterior(&prior, pos_1, total_1).unwrap(), pos_2, total_2)
                .unwrap();
        let joint = beta_posterior(&prior, pos_1 + pos_2, total_1 + total_2).unwrap();
        assert_eq!(stepwise.alpha.to_bits(), joint.alpha.to_bits());
        assert_eq!(stepwise.beta.to_bits(), joint.beta.to_bits());
    }

    let post = beta_posterior(&EntityPrior::new("e", 2.0, 2.0).unwrap(), 3, 4).unwrap();
    assert_eq!((post.alpha, post.beta), (5.0, 3.0));
    assert_eq!(post.mean(), 0.625);
    pass(6, "beta-binomial conjugacy", "1000 splits, bit-exact composition");
}

// ---------------------------------------------------------------------------
// 7. Aggregation
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_aggregation() {
    // Unit cases, exact.
    let pred = SentencePrediction::new(SentimentDistribution::uniform(), 0.4, 7).unwrap();
    assert_eq!(aggregate::weight(&pred, &AggregationParams::zero()), 2.0);
    assert_eq!(aggregate::polarity(&SentimentDistribution::uniform()), 0.0);
    assert_eq!(
        aggregate::polarity(&SentimentDistribution::point_mass(0).unwrap()),
        10.0
    );
    assert_eq!(
        aggregate::polarity(&SentimentDistribution::point_mass(4).unwrap()),
        10.0
    );

    // Long sentences carry the gold label, one-token sentences carry noise:
    // the fit must discover a positive length exponent.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tweets = Vec::new();
    for _ in 0..40 {
        let gold = rng.gen_range(0..5usize);
        let mut main = [0.02; 5];
        main[gold] = 0.92;
        let long = SentencePrediction::new(
            SentimentDistribution::new(main).unwrap(),
            0.9,
            12,
        )
        .unwrap();
        let mut sentences = vec![long];
        for _ in 0..2 {
            let noise = rng.gen_range(0..5usize);
            let mut p = [0.05; 5];
            p[noise] = 0.8;
            sentences.push(
                SentencePrediction::new(SentimentDistribution::new(p).unwrap(), 0.9, 1).unwrap(),
            );
        }
        tweets.push((sentences, gold));
    }
    let (params, objective) = aggregate::fit_params(&tweets, &FitConfig::default()).unwrap();
    assert!(params.beta > 0.0, "fitted {params:?}");
    pass(
        7,
        "aggregation",
        &format!("beta {:.3} > 0, objective {objective:.4}", params.beta),
    );
}

// ---------------------------------------------------------------------------
// 8. Pipeline determinism and RFE selectivity
// ---------------------------------------------------------------------------

fn run_cli(args: &[&str]) {
    let mut argv = vec!["sentitree"];
    argv.extend_from_slice(args);
    let code = sentitree::cli::main_with_args(argv);
    assert_eq!(code, 0, "command failed: {args:?}");
}

fn run_all_tasks(dir: &Path, synthetic: &Path) -> Vec<PathBuf> {
    let arg = |p: &Path| p.to_str().unwrap().to_string();
    let train = arg(&synthetic.join("train.tsv"));
    let train_d = arg(&synthetic.join("train_dists.tsv"));
    let test = arg(&synthetic.join("test.tsv"));
    let test_d = arg(&synthetic.join("test_dists.tsv"));
    let train_a = arg(&synthetic.join("train_a.tsv"));
    let train_ad = arg(&synthetic.join("train_a_dists.tsv"));
    let test_a = arg(&synthetic.join("test_a.tsv"));
    let test_ad = arg(&synthetic.join("test_a_dists.tsv"));

    let mut outputs = Vec::new();
    let specs: [(&str, &str, &str, &str, &str, &str); 5] = [
        ("task-a", "preds_a.tsv", &train_a, &train_ad, &test_a, &test_ad),
        ("task-b", "preds_b.tsv", &train, &train_d, &test, &test_d),
        ("task-c", "preds_c.tsv", &train, &train_d, &test, &test_d),
        ("task-d", "quant_d.tsv", &train, &train_d, &test, &test_d),
        ("task-e", "quant_e.tsv", &train, &train_d, &test, &test_d),
    ];
    for (cmd, file, tr, trd, te, ted) in specs {
        let out = dir.join(file);
        run_cli(&[
            cmd,
            "--train",
            tr,
            "--train-dists",
            trd,
            "--test",
            te,
            "--test-dists",
            ted,
            "--output",
            out.to_str().unwrap(),
            "--seed",
            "17",
        ]);
        outputs.push(out);
    }
    outputs
}

#[test]
fn criterion_8_pipeline_determinism_and_rfe() {
    let start = Instant::now();
    let synthetic = data_dir().join("synthetic");

    let dir_one = tempfile::tempdir().unwrap();
    let dir_two = tempfile::tempdir().unwrap();
    let first = run_all_tasks(dir_one.path(), &synthetic);
    let second = run_all_tasks(dir_two.path(), &synthetic);
    for (a, b) in first.iter().zip(&second) {
        let bytes_a = std::fs::read(a).unwrap();
        let bytes_b = std::fs::read(b).unwrap();
        assert!(!bytes_a.is_empty(), "{} is empty", a.display());
        assert_eq!(
            bytes_a,
            bytes_b,
            "outputs differ between runs: {}",
            a.file_name().unwrap().to_string_lossy()
        );
    }

    // RFE keeps exactly the two signal groups out of ten.
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let schema = FeatureSchema {
        groups: (0..10).map(|i| FeatureGroup::ModelDist(format!("model{i}"))).collect(),
    };
    let mut rows = Vec::new();
    for _ in 0..300 {
        let label = rng.gen_range(0..5usize);
        let mut values = Vec::with_capacity(50);
        for group in 0..10 {
            let mut block = [0.05f64; 5];
            let hot = if group == 3 || group == 6 { label } else { rng.gen_range(0..5) };
            block[hot] = 0.8;
            let sum: f64 = block.iter().sum();
            values.extend(block.iter().map(|v| v / sum));
        }
        rows.push((Array1::from(values), label as i64));
    }
    let selection = rfe_select(&rows, &schema, RfeTarget::Count(2), &RfeConfig::default()).unwrap();
    assert_eq!(selection.kept, vec![3, 6], "RFE kept {:?}", selection.kept);

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 300, "pipeline runs took {elapsed:?}");
    pass(
        8,
        "pipeline determinism + RFE",
        &format!("5 tasks byte-identical twice, RFE kept [3, 6], {elapsed:?}"),
    );
}
