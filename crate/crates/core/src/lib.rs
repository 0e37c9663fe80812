//! Weak-annotation distillation for query/ad relevance matching.

pub mod annotate;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod distill;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod gbdt;
pub mod models;
pub mod pipeline;
pub mod retrieval;
pub mod seed;
pub mod train;

pub use error::{Category, Error, Result};
