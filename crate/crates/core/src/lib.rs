//! Word-level auto-completion for computer-aided translation.
//!
//! The crate covers the whole offline pipeline: parallel corpus handling and
//! BPE, example generation, a joint WLAC/MT transformer trained on a small
//! tensor engine, decoding, agreement-based inference and error analysis.

pub mod agreement;
pub mod analysis;
pub mod corpus;
pub mod datagen;
pub mod decoding;
pub mod error;
pub mod jsonl;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod training;

pub use error::{Error, Result};
