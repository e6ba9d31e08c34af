use rand::seq::SliceRandom;

use crate::datagen::WlacExample;
use crate::error::Result;
use crate::model::{Codec, EncoderInput, LossBatch, ModelConfig};
use crate::seed;

/// Model-ready tensors of one example.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub input: EncoderInput,
    pub word_label: usize,
    pub piece_label: Vec<usize>,
    pub mt_target: Vec<usize>,
}

impl Encoded {
    pub fn tokens(&self, with_mt: bool) -> usize {
        self.input.len() + self.piece_label.len() + if with_mt { self.mt_target.len() } else { 0 }
    }
}

pub fn encode_examples(codec: &Codec, config: &ModelConfig, examples: &[WlacExample]) -> Result<Vec<Encoded>> {
    examples
        .iter()
        .map(|ex| {
            let b = LossBatch::from_examples(codec, config, &[ex])?;
            Ok(Encoded {
                input: b.inputs.into_iter().next().expect("one input"),
                word_label: b.word_labels.first().copied().unwrap_or_default(),
                piece_label: b.piece_labels.into_iter().next().unwrap_or_default(),
                mt_target: b.mt_targets.into_iter().next().expect("one target"),
            })
        })
        .collect()
}

pub fn assemble(items: &[&Encoded]) -> LossBatch {
    let mut batch = LossBatch::default();
    for e in items {
        batch.inputs.push(e.input.clone());
        batch.word_labels.push(e.word_label);
        if !e.piece_label.is_empty() {
            batch.piece_labels.push(e.piece_label.clone());
        }
        batch.mt_targets.push(e.mt_target.clone());
    }
    batch
}

/// Index batches for one epoch. Examples are shuffled, grouped into pools,
/// sorted by length inside each pool, cut at the token budget, and the
/// resulting batches are shuffled again. Fully determined by `seed` and `epoch`.
pub fn epoch_batches(lengths: &[usize], budget: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    const POOL_BATCHES: usize = 16;
    let mut rng = seed::rng(seed::mix(&[seed, epoch, 0xba7c]));
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut rng);
    let mean = (lengths.iter().sum::<usize>() / lengths.len().max(1)).max(1);
    let pool = (budget / mean).max(1) * POOL_BATCHES;
    let mut batches = Vec::new();
    for chunk in order.chunks(pool) {
        let mut chunk = chunk.to_vec();
        chunk.sort_by_key(|&i| (lengths[i], i));
        let mut current = Vec::new();
        let mut tokens = 0;
        for i in chunk {
            if !current.is_empty() && tokens + lengths[i] > budget {
                batches.push(std::mem::take(&mut current));
                tokens = 0;
            }
            tokens += lengths[i];
            current.push(i);
        }
        if !current.is_empty() {
            batches.push(current);
        }
    }
    batches.shuffle(&mut rng);
    batches
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_every_example_once_within_budget() {
        let lengths: Vec<usize> = (0..300).map(|i| 5 + (i * 7) % 23).collect();
        let batches = epoch_batches(&lengths, 120, 4, 0);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort();
        assert_eq!(seen, (0..300).collect::<Vec<_>>());
        for b in &batches {
            assert!(b.len() == 1 || b.iter().map(|&i| lengths[i]).sum::<usize>() <= 120);
        }
        assert_eq!(batches, epoch_batches(&lengths, 120, 4, 0));
        assert_ne!(batches, epoch_batches(&lengths, 120, 4, 1));
    }
}
