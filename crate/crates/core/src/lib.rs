//! TEMPEST laboratory: model extraction against tabular classifiers driven by
//! publicly available statistics.
//!
//! The crate simulates the full attack loop:
//!
//! 1. [`data`] ingests CSV datasets and splits them 1:3:1 into victim
//!    training, validation, and a public-statistics pool.
//! 2. [`stats`] condenses the public pool (or a hand-curated file) into
//!    per-feature mean/variance/min/max with availability flags.
//! 3. [`querygen`] synthesizes query batches from those statistics
//!    (Gaussian, uniform, or data-free), optionally mixed with initial
//!    samples or grown by Jacobian augmentation.
//! 4. [`victim`] hides a trained model behind a normalization boundary,
//!    reachable in-process or over HTTP.
//! 5. [`attack`] orchestrates generate → query → normalize → distill into a
//!    substitute model.
//! 6. [`metrics`] scores substitutes by accuracy, fidelity, and per-class
//!    recall; [`experiments`] sweeps budgets, strategies, and seeds into CSV.
//!
//! Everything is seeded and deterministic: identical inputs produce identical
//! models, batches, and result files.

pub mod attack;
pub mod data;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod nn;
pub mod querygen;
pub mod scaling;
pub mod stats;
pub mod victim;

pub use error::{Error, Result};
