//! Agreement between WLAC predictions and MT hypotheses, joint inference and
//! the translation-only baselines.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::metric_equal;
use crate::datagen::{typing_form, RomanizationTable};
use crate::decoding::{HypothesisSet, PredictionSet};
use crate::error::{Error, Result};

/// Whether the prediction occurs, case-folded, in any hypothesis.
pub fn check_agreement(prediction: &str, hyps: &HypothesisSet) -> bool {
    hyps.contains(prediction)
}

/// First candidate found in the hypotheses, else the top candidate. `None`
/// only for an empty prediction set.
pub fn joint_inference<'p>(preds: &'p PredictionSet, hyps: &HypothesisSet) -> Option<&'p str> {
    preds
        .words()
        .find(|w| hyps.contains(w))
        .or_else(|| preds.top())
}

/// Whether the label occurs in the hypotheses.
pub fn translation_upper_bound(label: &str, hyps: &HypothesisSet) -> bool {
    hyps.contains(label)
}

/// Most frequent hypothesis token whose typing form starts with `typed`,
/// counted over every occurrence in every hypothesis; ties go to the
/// lexicographically smallest token.
pub fn prefix_match(typed: &str, hyps: &HypothesisSet, table: Option<&RomanizationTable>) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for token in hyps.hypotheses.iter().flat_map(|h| &h.tokens) {
        if typing_form(token, table).is_some_and(|f| f.starts_with(typed)) {
            *counts.entry(token).or_default() += 1;
        }
    }
    let mut best: Option<(&str, usize)> = None;
    for (token, n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((token, n));
        }
    }
    best.map(|(t, _)| t.to_owned())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementRecord {
    pub id: String,
    pub prediction: String,
    pub label: String,
    pub agrees: bool,
    pub correct: bool,
}

impl AgreementRecord {
    pub fn new(id: impl Into<String>, prediction: &str, label: &str, hyps: &HypothesisSet) -> Self {
        Self {
            id: id.into(),
            prediction: prediction.to_owned(),
            label: label.to_owned(),
            agrees: check_agreement(prediction, hyps),
            correct: metric_equal(prediction, label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n: usize,
    pub accuracy: f64,
    pub agreement_rate: f64,
    /// Accuracy over agreeing records; absent when none agree.
    pub agr_acc: Option<f64>,
    /// Accuracy over disagreeing records; absent when all agree.
    pub disagr_acc: Option<f64>,
    pub gap: Option<f64>,
}

pub fn aggregate_report(records: &[AgreementRecord]) -> Result<AgreementReport> {
    if records.is_empty() {
        return Err(Error::Invalid("no agreement records to aggregate".into()));
    }
    let n = records.len();
    let agree = records.iter().filter(|r| r.agrees).count();
    let correct = records.iter().filter(|r| r.correct).count();
    let agree_correct = records.iter().filter(|r| r.agrees && r.correct).count();
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    let agr_acc = ratio(agree_correct, agree);
    let disagr_acc = ratio(correct - agree_correct, n - agree);
    Ok(AgreementReport {
        n,
        accuracy: correct as f64 / n as f64,
        agreement_rate: agree as f64 / n as f64,
        agr_acc,
        disagr_acc,
        gap: agr_acc.zip(disagr_acc).map(|(a, d)| a - d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::Candidate;

    fn preds(words: &[&str]) -> PredictionSet {
        PredictionSet {
            candidates: words
                .iter()
                .enumerate()
                .map(|(i, w)| Candidate {
                    word: (*w).into(),
                    score: -(i as f64),
                })
                .collect(),
            k: words.len(),
            empty: words.is_empty(),
            fallback: false,
        }
    }

    #[test]
    fn agreement_with_figure_one_translation() {
        let h = HypothesisSet::from_sentences(&["that's one small step for man"]);
        assert!(check_agreement("step", &h));
        assert!(!check_agreement("stop", &h));
    }

    #[test]
    fn joint_inference_first_match_and_fallback() {
        let h = HypothesisSet::from_sentences(&["a small step"]);
        assert_eq!(joint_inference(&preds(&["the", "step", "of"]), &h), Some("step"));
        assert_eq!(joint_inference(&preds(&["the", "of"]), &h), Some("the"));
        assert_eq!(joint_inference(&preds(&[]), &h), None);
    }

    #[test]
    fn prefix_match_counts_and_ties() {
        let h = HypothesisSet::from_sentences(&["one small step", "a small step"]);
        assert_eq!(prefix_match("s", &h, None).as_deref(), Some("small"));
        assert_eq!(prefix_match("q", &h, None), None);
        assert_eq!(prefix_match("o", &h, None).as_deref(), Some("one"));
        let h = HypothesisSet::from_sentences(&["step step small"]);
        assert_eq!(prefix_match("s", &h, None).as_deref(), Some("step"));
    }

    #[test]
    fn report_rates_and_absent_branches() {
        let h = HypothesisSet::from_sentences(&["x y"]);
        let r = aggregate_report(&[AgreementRecord::new("1", "x", "x", &h), AgreementRecord::new("2", "z", "q", &h)]).unwrap();
        assert_eq!((r.agreement_rate, r.agr_acc, r.disagr_acc), (0.5, Some(1.0), Some(0.0)));
        let all = aggregate_report(&[AgreementRecord::new("1", "x", "y", &h)]).unwrap();
        assert_eq!(all.disagr_acc, None);
        assert_eq!(all.gap, None);
        assert!(aggregate_report(&[]).is_err());
    }
}
