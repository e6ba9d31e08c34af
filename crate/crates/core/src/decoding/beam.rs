use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::Result;
use crate::model::{DecoderHead, JointModel, Memory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamHypothesis {
    /// Generated ids without `<bos>`; finished ones end in `<eos>`.
    pub pieces: Vec<usize>,
    /// Cumulative log-probability divided by the number of pieces.
    pub score: f64,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamOutput {
    /// Descending score.
    pub hypotheses: Vec<BeamHypothesis>,
    /// Set when nothing reached `<eos>` and the best unfinished beams were returned.
    pub unfinished: bool,
}

/// Log-softmax of `logits` restricted to `allowed`, in `allowed` order.
pub fn masked_log_softmax(logits: &[f64], allowed: &[usize]) -> Vec<f64> {
    let max = allowed.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = allowed.iter().map(|&i| (logits[i] - max).exp()).sum();
    let log_z = max + sum.ln();
    allowed.iter().map(|&i| logits[i] - log_z).collect()
}

/// Maps `<bos>`-started prefixes to next-token logits.
pub type Scorer<'a> = dyn FnMut(&[Vec<usize>]) -> Result<Vec<Vec<f64>>> + 'a;

#[derive(Clone)]
struct Partial {
    pieces: Vec<usize>,
    sum: f64,
}

fn by_score(a: &(f64, &[usize]), b: &(f64, &[usize])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Beam search over any next-token scorer. `scorer` receives prefixes that
/// start with `<bos>` and returns full logit vectors; expansions are limited
/// to `allowed`, which should contain `<eos>`.
///
/// Each step keeps the `width` best expansions of all live beams; those ending
/// in `<eos>` are set aside. Decoding stops once `width` hypotheses finished,
/// no beam is live, or `max_pieces` tokens were generated.
pub fn beam_search_with(
    scorer: &mut Scorer,
    width: usize,
    max_pieces: usize,
    allowed: &[usize],
) -> Result<BeamOutput> {
    assert!(width >= 1, "beam width must be positive");
    let mut live = vec![Partial {
        pieces: Vec::new(),
        sum: 0.0,
    }];
    let mut finished: Vec<Partial> = Vec::new();
    for _ in 0..max_pieces {
        let prefixes: Vec<Vec<usize>> = live
            .iter()
            .map(|p| std::iter::once(Vocabulary::BOS).chain(p.pieces.iter().copied()).collect())
            .collect();
        let logits = scorer(&prefixes)?;
        let mut expansions: Vec<Partial> = Vec::with_capacity(live.len() * allowed.len());
        for (beam, logits) in live.iter().zip(&logits) {
            for (&id, lp) in allowed.iter().zip(masked_log_softmax(logits, allowed)) {
                let mut pieces = beam.pieces.clone();
                pieces.push(id);
                expansions.push(Partial {
                    pieces,
                    sum: beam.sum + lp,
                });
            }
        }
        expansions.sort_by(|a, b| by_score(&(a.sum, &a.pieces), &(b.sum, &b.pieces)));
        expansions.truncate(width);
        live.clear();
        for e in expansions {
            if e.pieces.last() == Some(&Vocabulary::EOS) {
                finished.push(e);
            } else {
                live.push(e);
            }
        }
        if finished.len() >= width || live.is_empty() {
            break;
        }
    }
    let unfinished = finished.is_empty();
    let pool = if unfinished { live } else { finished };
    let mut hypotheses: Vec<BeamHypothesis> = pool
        .into_iter()
        .map(|p| BeamHypothesis {
            score: p.sum / p.pieces.len().max(1) as f64,
            finished: !unfinished,
            pieces: p.pieces,
        })
        .collect();
    hypotheses.sort_by(|a, b| by_score(&(a.score, &a.pieces), &(b.score, &b.pieces)));
    hypotheses.truncate(width);
    if unfinished {
        log::warn!("beam search produced no finished hypothesis within {max_pieces} pieces");
    }
    Ok(BeamOutput { hypotheses, unfinished })
}

/// Beam search through one of the model's decoders.
pub fn beam_search(
    model: &JointModel,
    memory: &Memory,
    head: DecoderHead,
    width: usize,
    max_pieces: usize,
    allowed: &[usize],
) -> Result<BeamOutput> {
    let max_pieces = max_pieces.min(model.config().max_len - 1);
    let mut scorer = |prefixes: &[Vec<usize>]| {
        let items: Vec<(&Memory, &[usize])> = prefixes.iter().map(|p| (memory, p.as_slice())).collect();
        model.step_batch(head, &items)
    };
    beam_search_with(&mut scorer, width, max_pieces, allowed)
}

/// Teacher-forced score of a complete sequence under the same normalisation.
pub fn sequence_score(
    scorer: &mut Scorer,
    pieces: &[usize],
    allowed: &[usize],
) -> Result<f64> {
    let mut prefix = vec![Vocabulary::BOS];
    let mut sum = 0.0;
    for &p in pieces {
        let logits = scorer(std::slice::from_ref(&prefix))?.remove(0);
        let lp = masked_log_softmax(&logits, allowed);
        let at = allowed.iter().position(|&a| a == p).expect("piece is allowed");
        sum += lp[at];
        prefix.push(p);
    }
    Ok(sum / pieces.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Deterministic pseudo-model over ids 0..8 whose logits depend on the whole prefix.
    fn toy(prefixes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        Ok(prefixes
            .iter()
            .map(|p| {
                let h = p.iter().fold(17u64, |h, &x| h.wrapping_mul(31).wrapping_add(x as u64 + 1));
                (0..9).map(|i| (((h >> (i % 13)) ^ (i as u64 * 7)) % 11) as f64 * 0.37).collect()
            })
            .collect())
    }

    #[test]
    fn width_one_is_greedy() {
        let allowed = [Vocabulary::EOS, 7, 8];
        let out = beam_search_with(&mut toy, 1, 6, &allowed).unwrap();
        let mut prefix = vec![Vocabulary::BOS];
        let mut greedy = Vec::new();
        for _ in 0..6 {
            let lp = masked_log_softmax(&toy(std::slice::from_ref(&prefix)).unwrap()[0], &allowed);
            let best = (0..allowed.len()).max_by(|&a, &b| lp[a].total_cmp(&lp[b]).then(b.cmp(&a))).unwrap();
            greedy.push(allowed[best]);
            prefix.push(allowed[best]);
            if allowed[best] == Vocabulary::EOS {
                break;
            }
        }
        assert_eq!(out.hypotheses[0].pieces, greedy);
    }

    #[test]
    fn scores_are_non_increasing_and_match_rescoring() {
        let allowed = [Vocabulary::EOS, 7, 8];
        let out = beam_search_with(&mut toy, 4, 5, &allowed).unwrap();
        for w in out.hypotheses.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for h in &out.hypotheses {
            let s = sequence_score(&mut toy, &h.pieces, &allowed).unwrap();
            assert!((s - h.score).abs() < 1e-12);
        }
    }

    #[test]
    fn no_eos_returns_unfinished() {
        let out = beam_search_with(&mut toy, 2, 3, &[7, 8]).unwrap();
        assert!(out.unfinished);
        assert_eq!(out.hypotheses.len(), 2);
        assert!(out.hypotheses.iter().all(|h| h.pieces.len() == 3 && !h.finished));
    }
}
