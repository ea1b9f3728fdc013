//! Long-tail multi-label learning as a cooperative game.
//!
//! Several player heads own overlapping label subsets over a shared feature
//! map. Their posteriors are fused per label, scored by a rarity-weighted
//! logistic payoff, and each player additionally earns a curiosity bonus
//! (rarity-weighted log-likelihood plus disagreement with a frozen peer
//! average). Training is cyclic block ascent on the resulting potential.
//!
//! Module map:
//! - [`dataset`]: loading, synthesis, corruption and label statistics
//! - [`partition`]: the overlapping player label decomposition
//! - [`model`]: backbone, heads, fusion, clipping, thresholds, checkpoints
//! - [`objective`]: payoff, curiosity, potential and their block gradients
//! - [`trainer`]: cyclic best-response training with telemetry
//! - [`metrics`]: F1 family, mAP, P@k, the tail-F1 certificate and
//!   specialization diagnostics

pub mod dataset;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod partition;
pub mod trainer;

pub use error::{Error, ErrorCategory, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for an independent sub-stream of `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
