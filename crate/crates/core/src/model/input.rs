use std::ops::Range;

use crate::corpus::{BpeModel, Vocabulary};
use crate::datagen::WlacExample;
use crate::error::{Error, Result};

use super::config::Arch;

/// Where each block of the input landed, for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSpans {
    pub source: Range<usize>,
    pub left: Range<usize>,
    pub typed: Range<usize>,
    pub right: Range<usize>,
}

/// `s <sep> c_l <tip> t <mask> c_r`, with `t` spelled in char entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderInput {
    pub ids: Vec<usize>,
    pub mask_position: usize,
    pub spans: InputSpans,
    /// Tokens before any right padding.
    pub valid_len: usize,
}

impl EncoderInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Appends `extra` `<pad>` tokens; padded slots are never attended.
    pub fn with_padding(mut self, extra: usize) -> Self {
        self.ids.extend(std::iter::repeat_n(Vocabulary::PAD, extra));
        self
    }
}

/// Builds the encoder input. When too long, source tokens are dropped from the
/// left first, then context tokens from the far end of the longer context.
pub fn encode_input(ex: &WlacExample, vocab: &Vocabulary, max_len: usize) -> Result<EncoderInput> {
    let typed: Vec<usize> = ex.typed.chars().map(|c| vocab.char_id(c)).collect();
    let fixed = typed.len() + 3;
    if fixed > max_len {
        return Err(Error::Encoding(format!(
            "typed sequence of {} characters does not fit in {max_len} positions",
            typed.len()
        )));
    }
    let budget = max_len - fixed;
    let mut source = &ex.source[..];
    let mut left = &ex.left_context[..];
    let mut right = &ex.right_context[..];
    while source.len() + left.len() + right.len() > budget {
        if !source.is_empty() {
            source = &source[1..];
        } else if left.len() >= right.len() {
            left = &left[1..];
        } else {
            right = &right[..right.len() - 1];
        }
    }

    let mut ids = Vec::with_capacity(fixed + budget);
    let push = |ids: &mut Vec<usize>, tokens: &[String]| {
        let start = ids.len();
        ids.extend(tokens.iter().map(|t| vocab.id_of(t)));
        start..ids.len()
    };
    let source_span = push(&mut ids, source);
    ids.push(Vocabulary::SEP);
    let left_span = push(&mut ids, left);
    ids.push(Vocabulary::TIP);
    let typed_start = ids.len();
    ids.extend(&typed);
    let typed_span = typed_start..ids.len();
    let mask_position = ids.len();
    ids.push(Vocabulary::MASK);
    let right_span = push(&mut ids, right);
    let valid_len = ids.len();
    Ok(EncoderInput {
        ids,
        mask_position,
        spans: InputSpans {
            source: source_span,
            left: left_span,
            typed: typed_span,
            right: right_span,
        },
        valid_len,
    })
}

/// Vocabularies needed to turn examples into model inputs and targets.
#[derive(Debug, Clone)]
pub struct Codec {
    pub vocab: Vocabulary,
    pub bpe: Option<BpeModel>,
}

impl Codec {
    pub fn new(vocab: Vocabulary, bpe: Option<BpeModel>) -> Self {
        Self { vocab, bpe }
    }

    pub fn encode(&self, ex: &WlacExample, max_len: usize) -> Result<EncoderInput> {
        encode_input(ex, &self.vocab, max_len)
    }

    pub fn word_label(&self, ex: &WlacExample) -> usize {
        self.vocab.id_of(&ex.label)
    }

    fn require_bpe(&self) -> Result<&BpeModel> {
        self.bpe
            .as_ref()
            .ok_or_else(|| Error::Config("sub-word model required but not loaded".into()))
    }

    /// Label pieces followed by `<eos>`.
    pub fn piece_label(&self, ex: &WlacExample) -> Result<Vec<usize>> {
        let mut ids = self.require_bpe()?.encode_ids(&ex.label);
        ids.push(Vocabulary::EOS);
        Ok(ids)
    }

    /// Output tokens of the MT decoder followed by `<eos>`, clipped so that
    /// `<bos>` plus the targets fit in `max_len` positions.
    pub fn mt_target(&self, arch: Arch, target: &[String], max_len: usize) -> Result<Vec<usize>> {
        let mut ids = match arch {
            Arch::Aioe => self.vocab.encode(target),
            Arch::AioeBpe => {
                let bpe = self.require_bpe()?;
                target.iter().flat_map(|w| bpe.encode_ids(w)).collect()
            }
        };
        ids.truncate(max_len - 2);
        ids.push(Vocabulary::EOS);
        Ok(ids)
    }

    /// Word strings for a decoded MT output sequence.
    pub fn mt_words(&self, arch: Arch, ids: &[usize]) -> Vec<String> {
        match (arch, &self.bpe) {
            (Arch::AioeBpe, Some(bpe)) => bpe.ids_to_words(ids),
            _ => ids
                .iter()
                .filter(|&&id| self.vocab.is_word(id))
                .filter_map(|&id| self.vocab.token_of(id).map(str::to_owned))
                .collect(),
        }
    }
}
