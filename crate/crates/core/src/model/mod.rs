//! Transformer backbones: the all-in-one encoder, its sub-word variant and the
//! MT decoder used for joint training.

mod checkpoint;
mod config;
mod input;
mod joint;
mod layers;

pub use checkpoint::{encode_checkpoint, file_hash, ModelBundle, MERGES_FILE, MODEL_FILE, PIECES_FILE, VOCAB_FILE};
pub use config::{Arch, ModelConfig};
pub use input::{encode_input, Codec, EncoderInput, InputSpans};
pub use joint::{DecoderHead, JointModel, LossBatch, LossNodes, Memory, Smoothing};
