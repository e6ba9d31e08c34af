use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Encoder only; the word is read off the `<mask>` position.
    Aioe,
    /// Encoder plus a sub-word decoder that spells the word.
    AioeBpe,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Aioe => "aioe",
            Arch::AioeBpe => "aioe_bpe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    /// Number of learned positions, shared by encoder and decoders.
    pub max_len: usize,
    /// The WLAC output layer and the MT output layer are one parameter.
    pub share_wlac_mt_projection: bool,
    /// Decoder input embeddings reuse a table over the same vocabulary: the
    /// encoder table for word-level MT, one piece table for both sub-word decoders.
    pub tie_embeddings: bool,
    /// Size of the joint word/char vocabulary (encoder input, word outputs).
    pub vocab_size: usize,
    /// Size of the sub-word vocabulary; zero when no decoder emits pieces.
    pub piece_vocab_size: usize,
}

impl ModelConfig {
    /// Large defaults: 6 layers, width 512, 8 heads, feed-forward 2048.
    pub fn base(arch: Arch, vocab_size: usize, piece_vocab_size: usize) -> Self {
        Self {
            arch,
            layers: 6,
            dim: 512,
            heads: 8,
            ffn_dim: 2048,
            dropout: 0.1,
            max_len: 256,
            share_wlac_mt_projection: true,
            tie_embeddings: true,
            vocab_size,
            piece_vocab_size,
        }
    }

    /// Preset sized for CPU experiments on the toy task.
    pub fn desk_scale(arch: Arch, vocab_size: usize, piece_vocab_size: usize) -> Self {
        Self {
            layers: 2,
            dim: 64,
            heads: 4,
            ffn_dim: 128,
            dropout: 0.1,
            max_len: 64,
            ..Self::base(arch, vocab_size, piece_vocab_size)
        }
    }

    /// One-layer model small enough for finite-difference checks.
    pub fn micro(arch: Arch, vocab_size: usize, piece_vocab_size: usize) -> Self {
        Self {
            layers: 1,
            dim: 8,
            heads: 2,
            ffn_dim: 16,
            dropout: 0.0,
            max_len: 32,
            ..Self::base(arch, vocab_size, piece_vocab_size)
        }
    }

    /// Vocabulary of the MT decoder's output: words for `aioe`, pieces for `aioe_bpe`.
    pub fn mt_vocab_size(&self) -> usize {
        match self.arch {
            Arch::Aioe => self.vocab_size,
            Arch::AioeBpe => self.piece_vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return fail(format!("dim {} is not divisible by heads {}", self.dim, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_len < 4 {
            return fail("max_len must be at least 4".into());
        }
        if self.vocab_size <= crate::corpus::Vocabulary::NUM_SPECIALS {
            return fail("vocabulary holds no words".into());
        }
        if self.arch == Arch::AioeBpe && self.piece_vocab_size <= crate::corpus::Vocabulary::NUM_SPECIALS {
            return fail("aioe_bpe needs a sub-word vocabulary".into());
        }
        Ok(())
    }
}
