//! Finite-difference verification of the analytic gradients. Central
//! differences with an explicit step, compared coordinate by coordinate with
//! relative error `|a-b| / max(1e-8, |a|+|b|)`.
//!
//! The central difference itself has finite resolution: the two loss
//! evaluations agree only to within a few ulps, so the quotient carries an
//! absolute error of roughly `eps * |loss| / step` (about 1e-10 at
//! unit-scale losses and step 1e-5). A coordinate passes when the relative
//! error is within tolerance or the absolute difference is below that
//! resolution; any gradient bug of consequence sits orders of magnitude
//! above both.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::treebank::ParseTree;

use super::backward::backward;
use super::forward::{forward, loss, LossMode};
use super::params::{CategoryTable, TreeLstmParams};
use super::{Hyper, NeuralError};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheckReport {
    /// Largest relative error over all coordinates, including those whose
    /// difference is below the oracle's resolution.
    pub max_rel_err: f64,
    /// Largest absolute analytic/numeric difference over all coordinates.
    pub max_abs_err: f64,
    /// Coordinates failing both the relative tolerance and the resolution
    /// bound.
    pub violations: usize,
    pub coords_checked: usize,
    pub instances: usize,
}

impl GradCheckReport {
    fn absorb(&mut self, other: &GradCheckReport) {
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.violations += other.violations;
        self.coords_checked += other.coords_checked;
        self.instances += other.instances;
    }
}

pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-8, a.abs() + b.abs())
}

/// Smallest difference the central-difference quotient can resolve given the
/// rounding of the two loss evaluations.
pub fn fd_resolution(up: f64, down: f64, step: f64) -> f64 {
    8.0 * f64::EPSILON * f64::max(1.0, f64::max(up.abs(), down.abs())) / (2.0 * step)
}

/// Checks every parameter coordinate of one (tree, params) instance against
/// the given relative tolerance.
pub fn check_instance(
    tree: &ParseTree,
    params: &TreeLstmParams,
    mode: LossMode,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NeuralError> {
    let annotated = forward(tree, params)?;
    let (_, grads) = backward(&annotated, params, mode)?;

    let mut work = params.clone();
    let mut report = GradCheckReport { instances: 1, ..Default::default() };
    report.coords_checked = params.coord_count();
    for idx in 0..report.coords_checked {
        let orig = work.coord_get(idx);
        work.coord_set(idx, orig + step);
        let up = loss(&forward(tree, &work)?, mode)?;
        work.coord_set(idx, orig - step);
        let down = loss(&forward(tree, &work)?, mode)?;
        work.coord_set(idx, orig);
        let numeric = (up - down) / (2.0 * step);
        let analytic = grads.coord_get(idx, params);
        let abs = (analytic - numeric).abs();
        let rel = rel_err(analytic, numeric);
        report.max_abs_err = report.max_abs_err.max(abs);
        report.max_rel_err = report.max_rel_err.max(rel);
        if rel >= tolerance && abs > fd_resolution(up, down, step) {
            report.violations += 1;
        }
    }
    Ok(report)
}

const CHECK_WORDS: [&str; 6] = ["a", "b", "c", "d", "e", "oov"];
const CHECK_CATEGORIES: [&str; 4] = ["NN", "VP", "S", "JJ"];

/// A random fully labeled tree with `leaves` leaves; internal entity flags
/// are the OR of their children so the tree always validates.
pub fn random_tree(rng: &mut ChaCha8Rng, leaves: usize) -> ParseTree {
    assert!(leaves >= 1);
    if leaves == 1 {
        let word = CHECK_WORDS[rng.gen_range(0..CHECK_WORDS.len())];
        let cat = CHECK_CATEGORIES[rng.gen_range(0..CHECK_CATEGORIES.len())];
        return ParseTree::leaf(Some(rng.gen_range(0..5)), cat, rng.gen_bool(0.3), word);
    }
    let left_leaves = rng.gen_range(1..leaves);
    let left = random_tree(rng, left_leaves);
    let right = random_tree(rng, leaves - left_leaves);
    let cat = CHECK_CATEGORIES[rng.gen_range(0..CHECK_CATEGORIES.len())];
    let entity = left.entity_flag || right.entity_flag;
    ParseTree::internal(Some(rng.gen_range(0..5)), cat, entity, left, right)
}

fn random_instance(
    rng: &mut ChaCha8Rng,
    d: usize,
) -> Result<(ParseTree, TreeLstmParams), NeuralError> {
    let leaves = rng.gen_range(2..=5);
    let tree = random_tree(rng, leaves);
    // The vocabulary deliberately omits "oov" so the unknown-word vector
    // gets exercised.
    let vocab = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
    let categories = CategoryTable::new(CHECK_CATEGORIES.iter().map(|s| s.to_string()).collect());
    let params = TreeLstmParams::init(Hyper::new(d)?, &vocab, categories, rng.gen(), None)?;
    Ok((tree, params))
}

/// Runs `instances` random checks spread over the given dimensions.
pub fn suite(
    seed: u64,
    dims: &[usize],
    instances: usize,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NeuralError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    for i in 0..instances {
        let d = dims[i % dims.len()];
        let (tree, params) = random_instance(&mut rng, d)?;
        let one = check_instance(&tree, &params, LossMode::AllLabeledNodes, step, tolerance)?;
        report.absorb(&one);
    }
    Ok(report)
}
