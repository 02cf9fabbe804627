//! The entity-aware tree-LSTM.
//!
//! Internal parse-tree nodes are combined by an LSTM-style cell whose six
//! pre-activations are bilinear forms over the concatenated child inputs,
//! with one of four weight matrices selected by the children's
//! entity-of-interest bits. Each node input is a `d`-dimensional content
//! vector plus a 7-dimensional metadata vector (6-bit syntactic-category
//! code and the entity bit), so the concatenated pair has dimension
//! `2d + 14`. Every node emits a softmax sentiment distribution through a
//! shared output matrix.

mod backward;
mod compose;
mod forward;
pub mod gradcheck;
mod params;
mod train;

pub use backward::{backward, Gradients};
pub use compose::compose;
pub use forward::{
    forward, loss, lstm_cell, AnnotatedNode, AnnotatedTree, CellCache, LossMode, NodeState,
};
pub use params::{
    load_embedding_file, load_model, save_model, CategoryTable, GateParams, TreeLstmParams,
    MODEL_VERSION, UNKNOWN_WORD,
};
pub use train::{
    bank_loss, init_from_bank, node_accuracy, train, EpochStats, OptimizerKind, TrainConfig,
    TrainReport,
};

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of the per-node metadata vector: 6 category bits plus the entity bit.
pub const META_DIM: usize = 7;
/// Bits available for the syntactic-category code.
pub const CATEGORY_BITS: usize = 6;
/// Number of gate computations in the cell (f, i, C', i'', C'', g).
pub const NUM_GATES: usize = 6;

/// Gate indices in declaration order.
pub const GATE_FORGET: usize = 0;
pub const GATE_INPUT: usize = 1;
pub const GATE_CANDIDATE: usize = 2;
pub const GATE_CROSS_INPUT: usize = 3;
pub const GATE_CROSS_CANDIDATE: usize = 4;
pub const GATE_OUTPUT: usize = 5;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch { what: &'static str, expected: usize, found: usize },
    #[error("no labeled nodes available for the requested supervision mode")]
    NoLabeledNodes,
    #[error("embedding dimension mismatch: model wants {expected}, file has {found}")]
    EmbeddingDimMismatch { expected: usize, found: usize },
    #[error("unsupported model file version {found} (this build reads {MODEL_VERSION})")]
    ModelVersionMismatch { found: u32 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid hyperparameters: {0}")]
    BadHyper(String),
    #[error("non-finite value during {0}")]
    NonFinite(&'static str),
    #[error("embedding file line {line}: {message}")]
    BadEmbeddingFile { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Model-level hyperparameters. The composed pair dimension is derived:
/// `2d + 14`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyper {
    pub d: usize,
}

impl Hyper {
    pub const CLASSES: usize = crate::dist::NUM_CLASSES;

    pub fn new(d: usize) -> Result<Self, NeuralError> {
        if d == 0 {
            return Err(NeuralError::BadHyper("embedding dimension must be >= 1".into()));
        }
        Ok(Self { d })
    }

    /// Width of one cell input half: content plus metadata.
    pub fn half_dim(&self) -> usize {
        self.d + META_DIM
    }

    /// Width of the concatenated pair fed to the bilinear forms.
    pub fn pair_dim(&self) -> usize {
        2 * self.d + 2 * META_DIM
    }
}

impl Default for Hyper {
    fn default() -> Self {
        Self { d: 25 }
    }
}

/// Encodes a node's 7-dimensional metadata: the 6-bit category code
/// (big-endian bit order, all zeros for unknown categories) followed by the
/// entity bit.
pub fn encode_metadata(category: &str, entity_flag: bool, table: &CategoryTable) -> Array1<f64> {
    let code = table.code(category);
    let mut meta = Array1::zeros(META_DIM);
    for bit in 0..CATEGORY_BITS {
        if (code >> (CATEGORY_BITS - 1 - bit)) & 1 == 1 {
            meta[bit] = 1.0;
        }
    }
    meta[CATEGORY_BITS] = if entity_flag { 1.0 } else { 0.0 };
    meta
}

/// Numerically stable softmax; output entries are strictly positive and sum
/// to 1 within 1e-9.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.mapv(|v| (v - max).exp());
    let sum = out.sum();
    out.mapv_inplace(|v| v / sum);
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
