//! Accuracy and diagnostic groupings of WLAC predictions against MT hypotheses.

mod stemmer;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::decoding::HypothesisSet;
use crate::error::{Error, Result};

pub use stemmer::stem;

/// How predictions are compared with labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricPolicy {
    #[default]
    CaseFolded,
    CaseSensitive,
}

impl MetricPolicy {
    pub fn equal(self, a: &str, b: &str) -> bool {
        match self {
            MetricPolicy::CaseFolded => a.to_lowercase() == b.to_lowercase(),
            MetricPolicy::CaseSensitive => a == b,
        }
    }
}

pub fn metric_equal(a: &str, b: &str) -> bool {
    MetricPolicy::default().equal(a, b)
}

pub fn accuracy<S: AsRef<str>, T: AsRef<str>>(predictions: &[S], labels: &[T]) -> Result<f64> {
    accuracy_with(MetricPolicy::default(), predictions, labels)
}

pub fn accuracy_with<S: AsRef<str>, T: AsRef<str>>(policy: MetricPolicy, predictions: &[S], labels: &[T]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Invalid("accuracy of an empty list".into()));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| policy.equal(p.as_ref(), l.as_ref()))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisCase {
    pub id: String,
    /// Backbone prediction.
    pub w_e: String,
    /// Joint-model prediction.
    pub w_m: String,
    /// Label.
    pub w: String,
    pub hyps: HypothesisSet,
    pub context_len: usize,
    pub zero_context: bool,
}

impl AnalysisCase {
    pub fn new(id: impl Into<String>, w_e: &str, w_m: &str, w: &str, hyps: HypothesisSet, context_len: usize) -> Self {
        Self {
            id: id.into(),
            w_e: w_e.to_owned(),
            w_m: w_m.to_owned(),
            w: w.to_owned(),
            hyps,
            context_len,
            zero_context: context_len == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub name: String,
    pub count: usize,
    pub percentage: f64,
    pub avg_context: Option<f64>,
    pub zero_context_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    /// Cases left after the report's filter.
    pub total: usize,
    pub empty: bool,
    pub groups: Vec<GroupStats>,
}

impl GroupReport {
    pub fn group(&self, name: &str) -> Option<&GroupStats> {
        self.groups.iter().find(|g| g.name == name)
    }
}

pub const AIOE_AGREE: &str = "AIOE-Agree";
pub const ONLY_JOINT: &str = "Only-Joint";
pub const NO_AGREE: &str = "No-Agree";
pub const ALL_ERRORS: &str = "Err.";
pub const AIOE_ERROR: &str = "AIOE-Err.";
pub const MT_ERROR: &str = "MT-Err.";

fn stats(name: &str, members: &[&AnalysisCase], total: usize) -> GroupStats {
    let count = members.len();
    let (avg_context, zero_context_pct) = if count == 0 {
        (None, None)
    } else {
        let sum: usize = members.iter().map(|c| c.context_len).sum();
        let zeros = members.iter().filter(|c| c.zero_context).count();
        (Some(sum as f64 / count as f64), Some(100.0 * zeros as f64 / count as f64))
    };
    GroupStats {
        name: name.to_owned(),
        count,
        percentage: if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 },
        avg_context,
        zero_context_pct,
    }
}

fn partition<'a>(cases: &[&'a AnalysisCase], names: &[&str], classify: impl Fn(&AnalysisCase) -> usize) -> Vec<GroupStats> {
    let mut buckets: Vec<Vec<&'a AnalysisCase>> = vec![Vec::new(); names.len()];
    for c in cases {
        buckets[classify(c)].push(c);
    }
    names
        .iter()
        .zip(&buckets)
        .map(|(n, members)| stats(n, members, cases.len()))
        .collect()
}

/// Cases the joint model fixed (`w_e != w_m`, `w_m == w`), split by which of
/// the two predictions the hypotheses contain.
pub fn improvement_groups(cases: &[AnalysisCase]) -> GroupReport {
    let fixed: Vec<&AnalysisCase> = cases
        .iter()
        .filter(|c| !metric_equal(&c.w_e, &c.w_m) && metric_equal(&c.w_m, &c.w))
        .collect();
    let groups = partition(&fixed, &[AIOE_AGREE, ONLY_JOINT, NO_AGREE], |c| {
        if c.hyps.contains(&c.w_e) {
            0
        } else if c.hyps.contains(&c.w_m) {
            1
        } else {
            2
        }
    });
    GroupReport {
        total: fixed.len(),
        empty: fixed.is_empty(),
        groups,
    }
}

/// Joint-model errors, split by whether the label appears in the hypotheses;
/// the first group covers all errors.
pub fn error_groups(cases: &[AnalysisCase]) -> GroupReport {
    let errors: Vec<&AnalysisCase> = cases.iter().filter(|c| !metric_equal(&c.w_m, &c.w)).collect();
    let mut groups = vec![stats(ALL_ERRORS, &errors, errors.len())];
    groups.extend(partition(&errors, &[AIOE_ERROR, MT_ERROR], |c| {
        if c.hyps.contains(&c.w) {
            0
        } else {
            1
        }
    }));
    GroupReport {
        total: errors.len(),
        empty: errors.is_empty(),
        groups,
    }
}

pub fn same_stem(a: &str, b: &str) -> bool {
    stem(a) == stem(b)
}

/// Whether the backbone chose the more frequent word. Unseen words count 0.
pub fn frequency_misleading(w_e: &str, w_m: &str, freq: &HashMap<String, u64>) -> bool {
    let f = |w: &str| freq.get(w).copied().unwrap_or(0);
    f(w_e) > f(w_m)
}

/// Error types among the cases the joint model fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Typology {
    pub fixed: usize,
    /// Backbone prediction shares the label's stem (a tense or number slip).
    pub tense: usize,
    /// Backbone prediction is more frequent in training targets than the label.
    pub frequency: usize,
}

pub fn typology(cases: &[AnalysisCase], freq: &HashMap<String, u64>) -> Typology {
    let fixed: Vec<&AnalysisCase> = cases
        .iter()
        .filter(|c| !metric_equal(&c.w_e, &c.w_m) && metric_equal(&c.w_m, &c.w))
        .collect();
    Typology {
        fixed: fixed.len(),
        tense: fixed.iter().filter(|c| same_stem(&c.w_e.to_lowercase(), &c.w.to_lowercase())).count(),
        frequency: fixed.iter().filter(|c| frequency_misleading(&c.w_e, &c.w_m, freq)).count(),
    }
}

/// Target-side token counts.
pub fn target_frequencies<'a>(targets: impl IntoIterator<Item = &'a [String]>) -> HashMap<String, u64> {
    let mut freq = HashMap::new();
    for t in targets {
        for w in t {
            *freq.entry(w.clone()).or_default() += 1;
        }
    }
    freq
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(w_e: &str, w_m: &str, w: &str, hyp: &str, ctx: usize) -> AnalysisCase {
        AnalysisCase::new("c", w_e, w_m, w, HypothesisSet::from_sentences(&[hyp]), ctx)
    }

    #[test]
    fn accuracy_policies() {
        assert_eq!(accuracy(&["a", "b"], &["a", "b"]).unwrap(), 1.0);
        assert_eq!(accuracy(&["Step"], &["step"]).unwrap(), 1.0);
        assert_eq!(accuracy_with(MetricPolicy::CaseSensitive, &["Step"], &["step"]).unwrap(), 0.0);
        assert!(accuracy(&["a"], &["a", "b"]).is_err());
    }

    #[test]
    fn improvement_group_definitions() {
        let cases = [
            case("the", "step", "step", "a step", 2),
            case("stop", "step", "step", "stop step", 0),
            case("the", "step", "step", "nothing here", 1),
            case("step", "step", "step", "x", 1),
            case("a", "b", "c", "x", 1),
        ];
        let r = improvement_groups(&cases);
        assert_eq!(r.total, 3);
        assert_eq!(r.group(ONLY_JOINT).unwrap().count, 1);
        assert_eq!(r.group(AIOE_AGREE).unwrap().count, 1);
        assert_eq!(r.group(NO_AGREE).unwrap().count, 1);
        let sum: f64 = r.groups.iter().map(|g| g.percentage).sum();
        assert!((sum - 100.0).abs() < 1e-9);
        assert!(improvement_groups(&[]).empty);
    }

    #[test]
    fn error_group_context_stats() {
        let cases = [
            case("a", "x", "step", "a step", 4),
            case("a", "x", "step", "a step", 0),
            case("a", "x", "step", "nope", 3),
            case("a", "step", "step", "nope", 9),
        ];
        let r = error_groups(&cases);
        assert_eq!(r.total, 3);
        let all = r.group(ALL_ERRORS).unwrap();
        assert_eq!(all.avg_context, Some(7.0 / 3.0));
        let aioe = r.group(AIOE_ERROR).unwrap();
        assert_eq!((aioe.count, aioe.avg_context, aioe.zero_context_pct), (2, Some(2.0), Some(50.0)));
        let mt = r.group(MT_ERROR).unwrap();
        assert_eq!((mt.count, mt.avg_context, mt.zero_context_pct), (1, Some(3.0), Some(0.0)));
    }

    #[test]
    fn stems_and_frequency() {
        assert!(same_stem("walked", "walking"));
        assert!(same_stem("walk", "walk"));
        assert!(!same_stem("walk", "run"));
        let freq: HashMap<String, u64> = [("the".to_string(), 100), ("step".to_string(), 5)].into();
        assert!(frequency_misleading("the", "step", &freq));
        assert!(!frequency_misleading("step", "step", &freq));
        assert!(frequency_misleading("step", "unseen", &freq));
    }
}
