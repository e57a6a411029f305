//! Subset-expert learning for fine-grained classification.
//!
//! A baseline classifier's confusion matrix and class-name embeddings are
//! fused into a dissimilarity matrix, single-linkage clustering groups the
//! classes into subsets, and a multi-head network with one expert per subset
//! is trained jointly with two-way mutual learning between its original head
//! and an aggregation head.

pub mod data;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod gradsuite;
pub mod io;
pub mod losses;
pub mod model;
pub mod subsetting;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
