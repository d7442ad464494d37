//! Core engine for progressive sparse video condensation.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] / [`rng`] — dense row-major tensors and a counter-based
//!   deterministic random stream.
//! - [`autograd`] — reverse-mode differentiation whose backward pass is
//!   itself graph construction, enabling second-order gradients through
//!   gradient-matching losses.
//! - [`models`] — small video classifiers used as matching lenses and
//!   evaluation probes.
//! - [`videogen`] — the procedural moving-shapes benchmark generator.
//! - [`condenser`] — sparse key-frame videos, the gradient-matching
//!   objective, and progressive frame insertion.
//! - [`baselines`] — coreset selection methods for comparison.
//! - [`eval`] — training-on-condensed evaluation, storage accounting and
//!   report generation.
//! - [`config`] / [`pipeline`] — run configuration and the end-to-end
//!   pipeline the CLI drives.

pub mod autograd;
pub mod baselines;
mod bytes;
pub mod condenser;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod models;
pub mod par;
pub mod pipeline;
mod optim;
pub mod rng;
pub mod tensor;
pub mod videogen;

pub use error::{Error, Result};
