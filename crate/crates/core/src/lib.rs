//! Entity-level differentially private relational learning.
//!
//! The crate is organised around the pipeline a private training run goes through:
//!
//! - [`graph`]: edge-list ingestion, degree capping and node removal.
//! - [`sampler`]: Poisson positive sampling coupled with negative sampling without replacement.
//! - [`clip`]: frequency-based adaptive clipping and standard per-tuple clipping.
//! - [`accountant`]: Rényi-DP bounds for the coupled sampler, composition and conversion to (ε, δ).
//! - [`trainer`]: encoders, contrastive losses and the DP-SGD loop.
//! - [`oracle`]: brute-force checkers used by tests and the `verify` command.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accountant;
pub mod clip;
pub mod error;
pub mod graph;
pub mod kv;
pub mod oracle;
pub mod sampler;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
