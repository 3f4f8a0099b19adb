//! Laboratory for comparing sequence-pooling mechanisms.
//!
//! Six architectures share one encoder skeleton and differ only in how a
//! token aggregates information from the rest of the sequence: softmax
//! attention (`bert`, `mte`), normalized attention pooling (`nap`), raw-logit
//! attention (`non`), and sum or max reduce-broadcast (`sum`, `max`).
//! Everything runs on the small autodiff engine in [`gradcore`].

pub mod analysis;
pub mod archzoo;
pub mod error;
pub mod gradcore;
pub mod harness;
pub mod rng;
pub mod taskgen;
pub mod trainer;

pub use error::{Error, Result};
