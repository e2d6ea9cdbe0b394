//! Simulation library for wireless speculative decoding with a CSI-aware
//! learned verifier.

// `!(x > 0.0)` style checks are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod compute;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod head;
pub mod labeler;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod wire;

pub use error::{Error, Result};
