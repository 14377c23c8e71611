//! Proxy-based graph metric learning.
//!
//! The library trains an embedding space by relating samples to a set of
//! trainable class proxies through a directed similarity graph: cosine
//! similarities between samples and proxies are truncated to the strongest
//! k entries per sample (with same-class proxies favored for inclusion),
//! aggregated per class by reverse label propagation, and turned into
//! classification losses through a mask softmax. A regularizer over the dense
//! proxy-proxy graph keeps proxies of one class coherent. All gradients are
//! analytic and finite-difference checked; training, evaluation (Recall@n,
//! NMI), gradient checking, and an eight-row ablation are exposed both as
//! library calls and through the `proxygml` CLI.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
