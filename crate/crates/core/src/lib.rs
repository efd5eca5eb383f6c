//! Contrastive token re-weighting for visually conditioned language models.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every algorithmic
//! piece of the workbench:
//!
//! - [`tensor`], [`ops`], [`tape`]: dense `f64` tensors with tape-based
//!   reverse-mode differentiation and a tape-free evaluation backend.
//! - [`adam`]: the optimizer.
//! - [`model`]: a small pre-norm decoder-only transformer that reads an
//!   optional visual prefix.
//! - [`cal`]: delta logits, clamping, window pooling and the re-weighted
//!   cross-entropy objective, plus the contrast-condition variants.
//! - [`data`]: the synthetic captioning corpus with per-token ground truth.
//! - [`train`]: training steps, evaluation and metrics.
//!
//! File formats, the experiment harness and the CLI live in `cal-harness`.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod adam;
pub mod cal;
pub mod data;
mod error;
pub mod gradcheck;
pub(crate) mod math;
pub mod model;
pub mod ops;
pub mod stats;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Eager, Graph, NodeId, Tape, Var};
pub use tensor::Tensor;

/// Deterministic generator used everywhere a seed is accepted.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
