//! Likelihood-ratio similarity scoring for embedding-space retrieval.
//!
//! Pairs of embeddings are compared through their difference vector, which
//! is scored by the log-likelihood ratio between a "same object" and a
//! "different object" distribution (single Gaussians or Gaussian mixtures).
//! The crate covers estimation of those distributions, a pair loss for
//! training a small embedding network against them, fast re-estimation on
//! an unlabeled target domain via k-means pseudo-labels, and retrieval
//! evaluation.

pub mod cplfpa;
pub mod dataset;
pub mod embedder;
pub mod error;
pub mod glrt_gmm;
pub mod glrt_mg;
pub mod kmeans;
pub mod loss;
pub mod model;
pub mod numerics;
pub mod pairs;
pub mod retrieval;
pub mod trainer;

pub use error::{Error, Result};
