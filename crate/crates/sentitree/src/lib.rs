//! Entity-aware tree-LSTM sentiment pipeline.
//!
//! The crate covers the full desk-scale workflow: parsing labeled binary
//! constituency treebanks, normalizing tweet text, training the per-node
//! tree-LSTM with entity-gated bilinear composition, aggregating sentence
//! predictions into tweet distributions, stacking model outputs with
//! logistic/feedforward meta-classifiers plus recursive feature elimination,
//! the five task workflows (3/2/5-class classification and 2/5-class
//! quantification), and the evaluation metrics used to score them.

pub mod aggregate;
pub mod cli;
pub mod dist;
pub mod metrics;
pub mod neural;
pub mod preprocess;
pub mod stack;
pub mod tasks;
pub mod treebank;
