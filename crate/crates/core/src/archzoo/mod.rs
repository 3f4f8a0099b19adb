//! The six encoder variants, their parameter layout, and the three heads.
//!
//! All variants share one skeleton: token (and optionally positional)
//! embedding followed by layer normalization, `L` encoder layers, and a
//! head. Layers differ in the pooling step ([`pool`]) and in where layer
//! normalization sits relative to the residual connections.

mod blocks;
pub mod checkpoint;
mod config;
mod model;

pub use blocks::{argmax_rows, attention_logits, forward, pool, transformer_block, Ctx};
pub use config::{ArchKind, ArchVariant, HeadKind, ModelConfig, Precision, LADDER};
pub use model::{Model, INIT_STD};
