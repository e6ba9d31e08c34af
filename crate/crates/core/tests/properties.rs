use std::sync::OnceLock;

use proptest::prelude::*;

use wlac::agreement::{aggregate_report, check_agreement, joint_inference, AgreementRecord};
use wlac::corpus::{count_words, learn_bpe, tokenize, ParallelPair, Vocabulary};
use wlac::datagen::{generate_dataset, typing_form, GenConfig, TypedLenPolicy, WlacExample};
use wlac::decoding::{Candidate, Hypothesis, HypothesisSet, PredictionSet, Predictor};
use wlac::model::{Arch, Codec, JointModel, ModelConfig};
use wlac::pipeline::build_codec;

fn word() -> impl Strategy<Value = String> {
    "[a-f]{1,6}"
}

fn sentence(min: usize, max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(word(), min..=max)
}

fn pair() -> impl Strategy<Value = ParallelPair> {
    (sentence(1, 10), sentence(1, 12)).prop_map(|(source, target)| ParallelPair {
        id: format!("p{}", source.join("_")),
        source,
        target,
    })
}

fn gen_config() -> impl Strategy<Value = GenConfig> {
    (any::<u64>(), 0usize..6, prop::option::of(1usize..5), any::<bool>()).prop_map(|(seed, max_ctx, fixed, adj)| {
        GenConfig {
            seed,
            max_context_len: max_ctx,
            typed_len_policy: fixed.map_or(TypedLenPolicy::Uniform, TypedLenPolicy::Fixed),
            context_adjacency: adj,
        }
    })
}

fn position_of(hay: &[String], needle: &[String]) -> Option<usize> {
    (0..=hay.len().checked_sub(needle.len())?).find(|&s| hay[s..s + needle.len()] == *needle)
}

proptest! {
    #[test]
    fn vocabulary_is_a_bijection(ws in prop::collection::vec(word(), 1..40)) {
        let vocab = Vocabulary::new(&ws, "abcdef".chars());
        for w in &ws {
            let id = vocab.id_of(w);
            prop_assert_eq!(vocab.token_of(id), Some(w.as_str()));
        }
        prop_assert_eq!(vocab.id_of("not-in-vocab"), Vocabulary::UNK);
    }

    #[test]
    fn tokenization_is_whitespace_free(line in "[a-c ,.\t]{0,40}") {
        let toks = tokenize(&line);
        prop_assert!(toks.iter().all(|t| !t.is_empty() && !t.contains(char::is_whitespace)));
        prop_assert_eq!(toks, tokenize(&line));
    }

    #[test]
    fn bpe_round_trips_and_is_deterministic(
        corpus in prop::collection::vec(word(), 1..60),
        probes in prop::collection::vec("[a-f]{1,12}", 1..20),
        merges in 0usize..40,
    ) {
        let counts = count_words(&corpus);
        let model = learn_bpe(&counts, merges);
        prop_assert_eq!(&model, &learn_bpe(&counts, merges));
        for w in probes.iter().chain(&corpus) {
            let pieces = model.encode(w);
            prop_assert!(!pieces.is_empty() && pieces.len() <= w.chars().count());
            prop_assert_eq!(model.decode(&pieces), w.clone());
        }
        for w in &corpus {
            prop_assert!(model.encode_ids(w).iter().all(|&id| id != Vocabulary::UNK));
        }
    }

    #[test]
    fn generated_examples_satisfy_invariants(pairs in prop::collection::vec(pair(), 1..8), cfg in gen_config(), per_pair in 1usize..4) {
        let data = generate_dataset(&pairs, per_pair, &cfg, None).unwrap();
        prop_assert_eq!(data.examples.len(), pairs.len() * per_pair);
        prop_assert_eq!(&data.examples, &generate_dataset(&pairs, per_pair, &cfg, None).unwrap().examples);
        for ex in &data.examples {
            let form = typing_form(&ex.label, None).unwrap();
            prop_assert!(!ex.typed.is_empty() && form.starts_with(&ex.typed));
            if let TypedLenPolicy::Fixed(n) = cfg.typed_len_policy {
                prop_assert_eq!(ex.typed.chars().count(), n.min(form.chars().count()));
            }
            prop_assert!(ex.left_context.len() <= cfg.max_context_len && ex.right_context.len() <= cfg.max_context_len);
            let t = &ex.full_target;
            let bracketed = t.iter().enumerate().filter(|(_, w)| **w == ex.label).any(|(i, _)| {
                let (before, after) = (&t[..i], &t[i + 1..]);
                let left_ok = if cfg.context_adjacency {
                    before.ends_with(&ex.left_context)
                } else {
                    ex.left_context.is_empty() || position_of(before, &ex.left_context).is_some()
                };
                let right_ok = if cfg.context_adjacency {
                    after.starts_with(&ex.right_context)
                } else {
                    ex.right_context.is_empty() || position_of(after, &ex.right_context).is_some()
                };
                left_ok && right_ok
            });
            prop_assert!(bracketed, "contexts do not bracket the label: {:?}", ex);
        }
    }
}

fn preds(words: &[String]) -> PredictionSet {
    PredictionSet {
        candidates: words
            .iter()
            .enumerate()
            .map(|(i, w)| Candidate {
                word: w.clone(),
                score: -(i as f64),
            })
            .collect(),
        k: words.len().max(1),
        empty: words.is_empty(),
        fallback: false,
    }
}

fn hyp_set(sentences: &[Vec<String>]) -> HypothesisSet {
    HypothesisSet::new(
        sentences
            .iter()
            .map(|t| Hypothesis {
                tokens: t.clone(),
                score: 0.0,
            })
            .collect(),
    )
}

fn mixed_case_word() -> impl Strategy<Value = String> {
    "[a-dA-D]{1,3}"
}

proptest! {
    #[test]
    fn joint_inference_is_closed_world_and_never_regresses(
        cands in prop::collection::vec(mixed_case_word(), 0..6),
        hyps in prop::collection::vec(prop::collection::vec(mixed_case_word(), 0..6), 0..5),
    ) {
        let p = preds(&cands);
        let h = hyp_set(&hyps);
        let pick = joint_inference(&p, &h);
        prop_assert_eq!(pick.is_none(), cands.is_empty());
        if let Some(w) = pick {
            prop_assert!(cands.iter().any(|c| c == w));
        }
        if let Some(top) = p.top() {
            if h.contains(top) {
                prop_assert_eq!(pick, Some(top));
            }
        }
    }

    #[test]
    fn word_set_is_the_folded_token_union_and_order_free(
        hyps in prop::collection::vec(prop::collection::vec(mixed_case_word(), 0..6), 0..5),
        probe in mixed_case_word(),
    ) {
        let h = hyp_set(&hyps);
        let union: std::collections::BTreeSet<String> = hyps.iter().flatten().map(|t| t.to_lowercase()).collect();
        prop_assert_eq!(&h.word_set, &union);
        let mut reversed = hyps.clone();
        reversed.reverse();
        prop_assert_eq!(check_agreement(&probe, &h), check_agreement(&probe, &hyp_set(&reversed)));
    }

    #[test]
    fn agreement_report_decomposes(records in prop::collection::vec((mixed_case_word(), mixed_case_word(), prop::collection::vec(mixed_case_word(), 0..4)), 1..40)) {
        let recs: Vec<AgreementRecord> = records
            .iter()
            .enumerate()
            .map(|(i, (p, l, h))| AgreementRecord::new(i.to_string(), p, l, &hyp_set(std::slice::from_ref(h))))
            .collect();
        let r = aggregate_report(&recs).unwrap();
        let rebuilt = r.agreement_rate * r.agr_acc.unwrap_or(0.0) + (1.0 - r.agreement_rate) * r.disagr_acc.unwrap_or(0.0);
        prop_assert!((r.accuracy - rebuilt).abs() <= 1e-12);
        for (rec, (p, l, h)) in recs.iter().zip(&records) {
            prop_assert_eq!(rec.agrees, h.iter().any(|t| t.to_lowercase() == p.to_lowercase()));
            prop_assert_eq!(rec.correct, p.to_lowercase() == l.to_lowercase());
        }
    }
}

/// Untrained micro models over a fixed toy vocabulary, shared by the
/// model-level properties.
struct Fixture {
    words: Vec<String>,
    codec: Codec,
    model: JointModel,
    bpe_codec: Codec,
    bpe_model: JointModel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let words: Vec<String> = ["cab", "cabin", "cat", "dab", "dace", "bead", "bad", "face", "fade", "deaf"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let pairs: Vec<ParallelPair> = words
            .windows(3)
            .enumerate()
            .map(|(i, w)| ParallelPair {
                id: i.to_string(),
                source: w.to_vec(),
                target: w.iter().rev().cloned().collect(),
            })
            .collect();
        let codec = build_codec(&pairs, Arch::Aioe, 1000, 0, None).unwrap();
        let model = JointModel::new(ModelConfig::micro(Arch::Aioe, codec.vocab.len(), 0), 9, true).unwrap();
        let bpe_codec = build_codec(&pairs, Arch::AioeBpe, 1000, 12, None).unwrap();
        let pieces = bpe_codec.bpe.as_ref().unwrap().vocab().len();
        let bpe_model = JointModel::new(ModelConfig::micro(Arch::AioeBpe, bpe_codec.vocab.len(), pieces), 9, true).unwrap();
        Fixture {
            words,
            codec,
            model,
            bpe_codec,
            bpe_model,
        }
    })
}

fn example() -> impl Strategy<Value = WlacExample> {
    let f = fixture();
    let w = prop::sample::select(f.words.clone());
    (
        prop::collection::vec(w.clone(), 1..8),
        prop::collection::vec(w.clone(), 0..4),
        prop::collection::vec(w.clone(), 0..4),
        w,
        1usize..4,
    )
        .prop_map(|(source, left, right, label, n)| WlacExample {
            typed: label.chars().take(n).collect(),
            full_target: left.iter().chain(std::iter::once(&label)).chain(&right).cloned().collect(),
            source,
            left_context: left,
            right_context: right,
            label,
            pair_id: "prop".into(),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn predictions_are_prefix_sound_and_sorted(ex in example(), k in 1usize..6) {
        let f = fixture();
        for (model, codec) in [(&f.model, &f.codec), (&f.bpe_model, &f.bpe_codec)] {
            let p = Predictor::new(model, codec, None).predict(&ex, k).unwrap();
            prop_assert!(p.candidates.len() <= k);
            prop_assert!(p.candidates.windows(2).all(|w| w[0].score > w[1].score
                || (w[0].score == w[1].score && w[0].word < w[1].word)));
            if !p.fallback {
                prop_assert!(p.words().all(|w| w.starts_with(&ex.typed)), "{:?} for {:?}", p, ex.typed);
            }
            prop_assert_eq!(&p, &Predictor::new(model, codec, None).predict(&ex, k).unwrap());
        }
    }

    #[test]
    fn right_padding_leaves_mask_logits_unchanged(ex in example(), extra in 1usize..10) {
        let f = fixture();
        for (model, codec) in [(&f.model, &f.codec), (&f.bpe_model, &f.bpe_codec)] {
            let input = codec.encode(&ex, model.config().max_len).unwrap();
            let plain = model.forward_wlac(&input);
            let padded = model.forward_wlac(&input.clone().with_padding(extra));
            prop_assert_eq!(plain.len(), padded.len());
            for (a, b) in plain.iter().zip(&padded) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn encoder_input_keeps_the_mask_slot(ex in example()) {
        let f = fixture();
        let input = f.codec.encode(&ex, f.model.config().max_len).unwrap();
        prop_assert_eq!(input.ids[input.mask_position], Vocabulary::MASK);
        prop_assert!(input.len() <= f.model.config().max_len);
    }
}
