//! Analogy-guided generalized category discovery on synthetic embeddings.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] — define-by-run `f64` tensor graph with reverse-mode
//!   differentiation, a finite-difference gradient checker, and a small
//!   binary container format for tensors on disk.
//! - [`rng`] — hierarchical deterministic randomness: every consumer derives
//!   its own named stream from `(seed, path)`, so adding or removing one
//!   consumer never perturbs the draws seen by another.
//! - [`synth`] — synthetic paired visual/text embedding benchmark with
//!   known/novel class splits and a labeling protocol.
//! - [`kb`] — textual knowledge base of class anchors with top-k cosine
//!   retrieval.
//! - [`atcg`] — the analogical textual concept generator: target-informed
//!   analogical attention, textual self-attention, stacked refinement, and
//!   the fusion head.
//! - [`objectives`] — representation and classification losses.
//! - [`train`] — two-stage trainer (generator alignment, then GCD) with
//!   SGD + momentum, cosine decay, and resumable checkpoints.
//! - [`eval`] — clustering accuracy with Hungarian matching, semi-supervised
//!   k-means, and the ablation grid.

pub mod atcg;
pub mod error;
pub mod eval;
pub mod kb;
pub mod objectives;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{BlobError, DataError, EvalError, ModelError, TensorError, TrainError};
pub use tensor::{Graph, Param, Tensor};
