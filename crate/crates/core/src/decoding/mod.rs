//! Inference: typed-prefix constrained word prediction, sub-word beam search
//! and Context MT hypotheses.

mod beam;

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::datagen::{typing_form, RomanizationTable, WlacExample};
use crate::error::{Error, Result};
use crate::model::{Arch, Codec, DecoderHead, EncoderInput, JointModel};

pub use beam::{beam_search, beam_search_with, masked_log_softmax, sequence_score, BeamHypothesis, BeamOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub word: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    /// Descending score, ties by word.
    pub candidates: Vec<Candidate>,
    pub k: usize,
    /// No vocabulary word (or no beam) matched the typed prefix.
    pub empty: bool,
    /// Sub-word decoding found no prefix-consistent beam and returned the best
    /// unfiltered one instead.
    pub fallback: bool,
}

impl PredictionSet {
    pub fn top(&self) -> Option<&str> {
        self.candidates.first().map(|c| c.word.as_str())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.word.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    pub score: f64,
}

/// Top machine translations and the case-folded union of their tokens.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HypothesisSet {
    pub hypotheses: Vec<Hypothesis>,
    pub word_set: BTreeSet<String>,
}

impl HypothesisSet {
    pub fn new(hypotheses: Vec<Hypothesis>) -> Self {
        let word_set = hypotheses
            .iter()
            .flat_map(|h| h.tokens.iter().map(|t| t.to_lowercase()))
            .collect();
        Self { hypotheses, word_set }
    }

    /// Builds a set from plain sentences with descending placeholder scores.
    pub fn from_sentences<S: AsRef<str>>(sentences: &[S]) -> Self {
        Self::new(
            sentences
                .iter()
                .enumerate()
                .map(|(i, s)| Hypothesis {
                    tokens: crate::corpus::tokenize(s.as_ref()),
                    score: -(i as f64),
                })
                .collect(),
        )
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_set.contains(&word.to_lowercase())
    }
}

/// Vocabulary words sorted by typing form, for prefix lookups.
#[derive(Debug, Clone)]
pub struct WordIndex {
    entries: Vec<(String, usize)>,
}

impl WordIndex {
    pub fn new(vocab: &Vocabulary, table: Option<&RomanizationTable>) -> Self {
        let mut entries: Vec<(String, usize)> = vocab
            .words()
            .filter_map(|(id, w)| typing_form(w, table).map(|f| (f, id)))
            .collect();
        entries.sort();
        Self { entries }
    }

    /// Ids of words whose typing form starts with `typed`, ordered by form.
    pub fn matching(&self, typed: &str) -> Vec<usize> {
        let start = self.entries.partition_point(|(f, _)| f.as_str() < typed);
        self.entries[start..]
            .iter()
            .take_while(|(f, _)| f.starts_with(typed))
            .map(|&(_, id)| id)
            .collect()
    }
}

/// Model, vocabularies and prefix index bundled for repeated prediction.
pub struct Predictor<'a> {
    pub model: &'a JointModel,
    pub codec: &'a Codec,
    pub index: Cow<'a, WordIndex>,
    pub table: Option<&'a RomanizationTable>,
    /// Beam width for sub-word prediction; at least `k` is used.
    pub beam_width: usize,
}

impl<'a> Predictor<'a> {
    pub fn new(model: &'a JointModel, codec: &'a Codec, table: Option<&'a RomanizationTable>) -> Self {
        Self {
            model,
            codec,
            index: Cow::Owned(WordIndex::new(&codec.vocab, table)),
            table,
            beam_width: 8,
        }
    }

    /// Reuses an index built once for `codec.vocab`.
    pub fn with_index(
        model: &'a JointModel,
        codec: &'a Codec,
        index: &'a WordIndex,
        table: Option<&'a RomanizationTable>,
    ) -> Self {
        Self {
            model,
            codec,
            index: Cow::Borrowed(index),
            table,
            beam_width: 8,
        }
    }

    fn encode(&self, ex: &WlacExample) -> Result<EncoderInput> {
        self.codec.encode(ex, self.model.config().max_len)
    }

    pub fn predict(&self, ex: &WlacExample, k: usize) -> Result<PredictionSet> {
        Ok(self.predict_batch(std::slice::from_ref(ex), k)?.remove(0))
    }

    /// Predictions for many examples; word-level forwards are batched.
    pub fn predict_batch(&self, examples: &[WlacExample], k: usize) -> Result<Vec<PredictionSet>> {
        if k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        if let Some(ex) = examples.iter().find(|e| e.typed.is_empty()) {
            return Err(Error::Invalid(format!("example {} has an empty typed sequence", ex.pair_id)));
        }
        match self.model.config().arch {
            Arch::Aioe => {
                let inputs = examples.iter().map(|e| self.encode(e)).collect::<Result<Vec<_>>>()?;
                let logits = self.model.forward_wlac_batch(&inputs);
                Ok(examples
                    .iter()
                    .zip(&logits)
                    .map(|(ex, logits)| self.rank_words(logits, &ex.typed, k))
                    .collect())
            }
            Arch::AioeBpe => examples.iter().map(|ex| self.predict_pieces(ex, k)).collect(),
        }
    }

    fn rank_words(&self, logits: &[f64], typed: &str, k: usize) -> PredictionSet {
        let allowed = self.index.matching(typed);
        if allowed.is_empty() {
            return PredictionSet {
                candidates: Vec::new(),
                k,
                empty: true,
                fallback: false,
            };
        }
        let scores = masked_log_softmax(logits, &allowed);
        let mut ranked: Vec<Candidate> = allowed
            .iter()
            .zip(scores)
            .map(|(&id, score)| Candidate {
                word: self.codec.vocab.token_of(id).expect("indexed id").to_owned(),
                score,
            })
            .collect();
        sort_candidates(&mut ranked);
        ranked.truncate(k);
        PredictionSet {
            candidates: ranked,
            k,
            empty: false,
            fallback: false,
        }
    }

    fn predict_pieces(&self, ex: &WlacExample, k: usize) -> Result<PredictionSet> {
        let bpe = self
            .codec
            .bpe
            .as_ref()
            .ok_or_else(|| Error::Config("sub-word model required but not loaded".into()))?;
        let memory = self.model.encode(&self.encode(ex)?);
        let allowed = piece_ids(bpe.vocab());
        let width = self.beam_width.max(k);
        let out = beam_search(self.model, &memory, DecoderHead::Pieces, width, 16, &allowed)?;
        let mut best: BTreeMap<String, f64> = BTreeMap::new();
        let mut first: Option<(String, f64)> = None;
        for h in &out.hypotheses {
            let word: String = bpe.ids_to_words(&h.pieces).concat();
            if word.is_empty() {
                continue;
            }
            if first.is_none() {
                first = Some((word.clone(), h.score));
            }
            let matches = typing_form(&word, self.table).is_some_and(|f| f.starts_with(&ex.typed));
            if matches {
                let e = best.entry(word).or_insert(f64::NEG_INFINITY);
                *e = e.max(h.score);
            }
        }
        let mut ranked: Vec<Candidate> = best.into_iter().map(|(word, score)| Candidate { word, score }).collect();
        sort_candidates(&mut ranked);
        ranked.truncate(k);
        let fallback = ranked.is_empty() && first.is_some();
        if let (true, Some((word, score))) = (fallback, first) {
            ranked.push(Candidate { word, score });
        }
        Ok(PredictionSet {
            empty: ranked.is_empty(),
            candidates: ranked,
            k,
            fallback,
        })
    }
}

fn sort_candidates(c: &mut [Candidate]) {
    c.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.word.cmp(&b.word)));
}

/// Non-special ids of a vocabulary plus `<eos>`.
fn piece_ids(vocab: &Vocabulary) -> Vec<usize> {
    std::iter::once(Vocabulary::EOS).chain(Vocabulary::NUM_SPECIALS..vocab.len()).collect()
}

pub fn predict_topk(
    model: &JointModel,
    codec: &Codec,
    ex: &WlacExample,
    k: usize,
    table: Option<&RomanizationTable>,
) -> Result<PredictionSet> {
    Predictor::new(model, codec, table).predict(ex, k)
}

/// Ids the MT decoder may emit.
pub fn mt_output_ids(model: &JointModel, codec: &Codec) -> Result<Vec<usize>> {
    match model.config().arch {
        Arch::Aioe => Ok(std::iter::once(Vocabulary::EOS).chain(codec.vocab.word_ids()).collect()),
        Arch::AioeBpe => {
            let bpe = codec
                .bpe
                .as_ref()
                .ok_or_else(|| Error::Config("sub-word model required but not loaded".into()))?;
            Ok(piece_ids(bpe.vocab()))
        }
    }
}

/// Context MT: beam-decodes full target sentences from the WLAC input.
pub fn translate(model: &JointModel, codec: &Codec, ex: &WlacExample, beams: usize) -> Result<HypothesisSet> {
    if !model.has_mt() {
        return Err(Error::Capability("model was stripped of its MT decoder".into()));
    }
    let input = codec.encode(ex, model.config().max_len)?;
    let memory = model.encode(&input);
    let allowed = mt_output_ids(model, codec)?;
    let max = model.config().max_len - 1;
    let out = beam_search(model, &memory, DecoderHead::Mt, beams, max, &allowed)?;
    let arch = model.config().arch;
    Ok(HypothesisSet::new(
        out.hypotheses
            .into_iter()
            .map(|h| Hypothesis {
                tokens: codec.mt_words(arch, &h.pieces),
                score: h.score,
            })
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn setup() -> (JointModel, Codec) {
        let vocab = Vocabulary::new(["sa", "sb", "step", "small", "tea", "x"], "abelmpstx".chars());
        let model = JointModel::new(ModelConfig::micro(Arch::Aioe, vocab.len(), 0), 9, true).unwrap();
        (model, Codec::new(vocab, None))
    }

    fn example(typed: &str) -> WlacExample {
        WlacExample {
            source: vec!["x".into(), "tea".into()],
            left_context: vec!["sa".into()],
            right_context: vec![],
            typed: typed.into(),
            label: "step".into(),
            full_target: vec!["sa".into(), "step".into()],
            pair_id: "1".into(),
        }
    }

    #[test]
    fn word_index_prefix_lookup() {
        let (_, codec) = setup();
        let idx = WordIndex::new(&codec.vocab, None);
        let words: Vec<&str> = idx.matching("s").iter().map(|&i| codec.vocab.token_of(i).unwrap()).collect();
        assert_eq!(words, ["sa", "sb", "small", "step"]);
        assert!(idx.matching("q").is_empty());
        assert_eq!(idx.matching("st").len(), 1);
    }

    #[test]
    fn constrained_topk_equals_brute_force_sort() {
        let (model, codec) = setup();
        let ex = example("s");
        let preds = predict_topk(&model, &codec, &ex, 3, None).unwrap();
        assert!(preds.words().all(|w| w.starts_with('s')));
        let logits = model.forward_wlac(&codec.encode(&ex, 32).unwrap());
        let mut brute: Vec<(f64, &str)> = codec
            .vocab
            .words()
            .filter(|(_, w)| w.starts_with('s'))
            .map(|(id, w)| (logits[id], w))
            .collect();
        brute.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let expect: Vec<&str> = brute.iter().take(3).map(|b| b.1).collect();
        assert_eq!(preds.words().collect::<Vec<_>>(), expect);
        let top1 = predict_topk(&model, &codec, &ex, 1, None).unwrap();
        assert_eq!(top1.candidates.len(), 1);
        assert_eq!(top1.top(), Some(expect[0]));
    }

    #[test]
    fn unmatched_prefix_gives_empty_flag() {
        let (model, codec) = setup();
        let preds = predict_topk(&model, &codec, &example("q"), 5, None).unwrap();
        assert!(preds.empty && preds.candidates.is_empty());
        assert!(predict_topk(&model, &codec, &example("s"), 0, None).is_err());
    }

    #[test]
    fn translate_hypotheses_and_word_set() {
        let (model, codec) = setup();
        let hyps = translate(&model, &codec, &example("s"), 5).unwrap();
        assert!(!hyps.hypotheses.is_empty() && hyps.hypotheses.len() <= 5);
        for h in &hyps.hypotheses {
            for t in &h.tokens {
                assert!(hyps.contains(t));
            }
        }
        for w in hyps.hypotheses.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        let stripped = model.strip_decoder();
        assert!(matches!(translate(&stripped, &codec, &example("s"), 5), Err(Error::Capability(_))));
    }

    #[test]
    fn word_set_is_case_folded() {
        let h = HypothesisSet::from_sentences(&["That's one small Step"]);
        assert!(h.contains("step") && h.contains("STEP") && h.contains("that's"));
        assert!(!h.contains("man"));
    }
}
