//! Glue shared by the command line and the experiment suites: vocabulary
//! construction, the toy task and batch evaluation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::agreement::{
    aggregate_report, joint_inference, prefix_match, translation_upper_bound, AgreementRecord, AgreementReport,
};
use crate::analysis::accuracy;
use crate::corpus::{build_vocab, count_words, learn_bpe, ParallelPair, Side};
use crate::datagen::{generate_dataset, make_toy_corpus, typing_form, GenConfig, RomanizationTable, WlacExample};
use crate::decoding::{translate, HypothesisSet, PredictionSet, Predictor};
use crate::error::{Error, Result};
use crate::model::{Arch, Codec, JointModel, ModelConfig};
use crate::training::{train, TrainConfig, TrainHistory};

/// Joint word vocabulary with char entries for every typing-form character;
/// sub-word merges are learned on target words for `aioe_bpe`.
pub fn build_codec(
    pairs: &[ParallelPair],
    arch: Arch,
    max_vocab: usize,
    bpe_merges: usize,
    table: Option<&RomanizationTable>,
) -> Result<Codec> {
    let chars: BTreeSet<char> = pairs
        .iter()
        .flat_map(|p| &p.target)
        .filter_map(|w| typing_form(w, table))
        .flat_map(|f| f.chars().collect::<Vec<_>>())
        .collect();
    let vocab = build_vocab(pairs, Side::Joint, max_vocab, 1)?.with_chars(chars);
    let bpe = (arch == Arch::AioeBpe).then(|| learn_bpe(&count_words(pairs.iter().flat_map(|p| &p.target)), bpe_merges));
    Ok(Codec::new(vocab, bpe))
}

/// The distinct sentence pairs a dataset was cut from, in first-seen order.
pub fn pairs_from_examples(examples: &[WlacExample]) -> Vec<ParallelPair> {
    let mut seen = BTreeSet::new();
    examples
        .iter()
        .filter(|e| seen.insert(e.pair_id.as_str()))
        .map(|e| ParallelPair {
            id: e.pair_id.clone(),
            source: e.source.clone(),
            target: e.full_target.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    pub size: usize,
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
    /// Trailing pairs held out for testing.
    pub test_pairs: usize,
    pub per_pair: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            size: 5000,
            vocab: 100,
            min_len: 5,
            max_len: 12,
            seed: 7,
            test_pairs: 500,
            per_pair: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyTask {
    pub train_pairs: Vec<ParallelPair>,
    pub test_pairs: Vec<ParallelPair>,
    pub train: Vec<WlacExample>,
    pub test: Vec<WlacExample>,
}

impl ToySpec {
    pub fn build(&self) -> Result<ToyTask> {
        let mut pairs = make_toy_corpus(self.size, self.vocab, self.min_len, self.max_len, self.seed)?;
        let test_pairs = pairs.split_off(pairs.len().saturating_sub(self.test_pairs));
        let cfg = GenConfig {
            seed: self.seed,
            ..GenConfig::default()
        };
        let train = generate_dataset(&pairs, self.per_pair, &cfg, None)?.examples;
        let test = if test_pairs.is_empty() {
            Vec::new()
        } else {
            generate_dataset(&test_pairs, self.per_pair, &cfg, None)?.examples
        };
        Ok(ToyTask {
            train_pairs: pairs,
            test_pairs,
            train,
            test,
        })
    }
}

/// Desk-scale model for the toy task. The toy data is noise-free, so dropout
/// is off.
pub fn toy_model_config(arch: Arch, codec: &Codec) -> ModelConfig {
    ModelConfig {
        dropout: 0.0,
        ..ModelConfig::desk_scale(arch, codec.vocab.len(), codec.bpe.as_ref().map_or(0, |b| b.vocab().len()))
    }
}

/// Desk-scale schedule halved in steps at the same token budget per run
/// (1500 steps of 1200 tokens), which keeps six toy runs on one core within
/// a quarter hour.
pub fn toy_train_config(alpha: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        alpha,
        seed,
        max_steps: 1500,
        eval_every: 1500,
        checkpoint_every: 0,
        ..TrainConfig::desk_scale()
    }
}

/// Trains one toy model; keeps the MT decoder when `alpha < 1`.
pub fn train_toy(task: &ToyTask, codec: &Codec, arch: Arch, alpha: f64, seed: u64) -> Result<(JointModel, TrainHistory)> {
    let mut model = JointModel::new(toy_model_config(arch, codec), seed, alpha < 1.0)?;
    let history = train(&mut model, codec, &task.train, &toy_train_config(alpha, seed), &mut |_| Ok(()))?;
    Ok((model, history))
}

/// Context MT hypotheses for every example.
pub fn translate_all(model: &JointModel, codec: &Codec, examples: &[WlacExample], beams: usize) -> Result<Vec<HypothesisSet>> {
    examples.iter().map(|ex| translate(model, codec, ex, beams)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub predictions: Vec<PredictionSet>,
    /// Word scored for each example (top-1, or the joint-inference choice).
    pub chosen: Vec<String>,
    pub accuracy: f64,
    pub records: Vec<AgreementRecord>,
    pub report: Option<AgreementReport>,
}

/// Predicts every example; with hypotheses, builds agreement records and,
/// when `joint` is set, picks words by joint inference.
pub fn evaluate(
    predictor: &Predictor,
    examples: &[WlacExample],
    k: usize,
    hyps: Option<&[HypothesisSet]>,
    joint: bool,
) -> Result<Evaluation> {
    const CHUNK: usize = 64;
    let mut predictions = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(CHUNK) {
        predictions.extend(predictor.predict_batch(chunk, k)?);
    }
    let chosen: Vec<String> = predictions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let pick = match (joint, hyps) {
                (true, Some(h)) => joint_inference(p, &h[i]),
                _ => p.top(),
            };
            pick.unwrap_or_default().to_owned()
        })
        .collect();
    let labels: Vec<&str> = examples.iter().map(|e| e.label.as_str()).collect();
    let acc = accuracy(&chosen, &labels)?;
    let records: Vec<AgreementRecord> = match hyps {
        Some(h) => examples
            .iter()
            .zip(&chosen)
            .zip(h)
            .map(|((ex, w), h)| AgreementRecord::new(ex.pair_id.clone(), w, &ex.label, h))
            .collect(),
        None => Vec::new(),
    };
    let report = if records.is_empty() { None } else { Some(aggregate_report(&records)?) };
    Ok(Evaluation {
        predictions,
        chosen,
        accuracy: acc,
        records,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineRates {
    /// Accuracy of picking the most frequent prefix-consistent hypothesis token.
    pub prefix_match: f64,
    /// Share of examples whose label occurs in the hypotheses.
    pub upper_bound: f64,
}

/// Translation-only baselines over a labelled set.
pub fn baseline_rates(
    examples: &[WlacExample],
    hyps: &[HypothesisSet],
    table: Option<&RomanizationTable>,
) -> Result<BaselineRates> {
    if examples.is_empty() || examples.len() != hyps.len() {
        return Err(Error::Invalid(format!(
            "{} examples for {} hypothesis sets",
            examples.len(),
            hyps.len()
        )));
    }
    let picks: Vec<String> = examples
        .iter()
        .zip(hyps)
        .map(|(e, h)| prefix_match(&e.typed, h, table).unwrap_or_default())
        .collect();
    let labels: Vec<&str> = examples.iter().map(|e| e.label.as_str()).collect();
    let covered = examples.iter().zip(hyps).filter(|(e, h)| translation_upper_bound(&e.label, h)).count();
    Ok(BaselineRates {
        prefix_match: accuracy(&picks, &labels)?,
        upper_bound: covered as f64 / examples.len() as f64,
    })
}
