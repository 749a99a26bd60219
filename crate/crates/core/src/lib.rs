//! Co-training for learning with noisy labels.
//!
//! Two co-trained models refurbish each other's labels using GMM-estimated
//! confidence, and align their embeddings through cross-view and cross-model
//! contrastive losses. The crate also carries diagnostics for how noisy
//! labels distort learned class relations: cross-model embedding agreement,
//! logit Wasserstein distance, class-variance entropy and taxonomy LCA
//! distance.

// `!(x > 0.0)` also rejects NaN, which is the point in config checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops read better than zipped iterators in the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod augment;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod refurbish;
pub mod seeds;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
