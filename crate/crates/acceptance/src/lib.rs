//! Reference implementations for the acceptance suite.
//!
//! Each one is written for obviousness rather than speed and shares no code
//! with the library it checks.

use std::collections::BTreeMap;

use wlac::datagen::WlacExample;

/// Greedy BPE over a list of word occurrences: count every adjacent pair of
/// every occurrence, merge the most frequent one (ties to the smallest pair)
/// left to right, repeat.
pub fn reference_bpe(words: &[String], num_merges: usize) -> Vec<(String, String)> {
    let mut segs: Vec<Vec<String>> = words
        .iter()
        .filter(|w| !w.is_empty())
        .map(|w| w.chars().map(|c| c.to_string()).collect())
        .collect();
    let mut merges = Vec::new();
    for _ in 0..num_merges {
        let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for s in &segs {
            for i in 1..s.len() {
                *counts.entry((s[i - 1].clone(), s[i].clone())).or_insert(0) += 1;
            }
        }
        let Some(max) = counts.values().copied().max() else { break };
        // BTreeMap iterates in pair order, so the first hit is the smallest.
        let best = counts.into_iter().find(|(_, n)| *n == max).map(|(p, _)| p).expect("max exists");
        for s in &mut segs {
            let mut out = Vec::with_capacity(s.len());
            let mut i = 0;
            while i < s.len() {
                if i + 1 < s.len() && s[i] == best.0 && s[i + 1] == best.1 {
                    out.push(format!("{}{}", best.0, best.1));
                    i += 2;
                } else {
                    out.push(s[i].clone());
                    i += 1;
                }
            }
            *s = out;
        }
        merges.push(best);
    }
    merges
}

fn fold_eq(a: &str, b: &str) -> bool {
    a.to_lowercase() == b.to_lowercase()
}

/// First candidate that occurs (case-folded) in some hypothesis, else the
/// first candidate.
pub fn reference_joint_inference(candidates: &[String], hypotheses: &[Vec<String>]) -> Option<String> {
    for c in candidates {
        for h in hypotheses {
            if h.iter().any(|t| fold_eq(t, c)) {
                return Some(c.clone());
            }
        }
    }
    candidates.first().cloned()
}

/// Most frequent token whose typing form starts with `typed`; ties to the
/// smallest token.
pub fn reference_prefix_match(
    typed: &str,
    hypotheses: &[Vec<String>],
    form: impl Fn(&str) -> Option<String>,
) -> Option<String> {
    let matching: Vec<&String> = hypotheses
        .iter()
        .flatten()
        .filter(|t| form(t).is_some_and(|f| f.starts_with(typed)))
        .collect();
    let mut best: Option<(&String, usize)> = None;
    for t in &matching {
        let n = matching.iter().filter(|u| u == &t).count();
        let better = match best {
            None => true,
            Some((b, m)) => n > m || (n == m && *t < b),
        };
        if better {
            best = Some((t, n));
        }
    }
    best.map(|(t, _)| t.clone())
}

pub fn reference_upper_bound(label: &str, hypotheses: &[Vec<String>]) -> bool {
    hypotheses.iter().flatten().any(|t| fold_eq(t, label))
}

/// Log-softmax over the `allowed` entries of `logits`, keyed by id.
pub fn log_softmax_over(logits: &[f64], allowed: &[usize]) -> BTreeMap<usize, f64> {
    let m = allowed.iter().map(|&i| logits[i]).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = allowed.iter().map(|&i| (logits[i] - m).exp()).sum();
    allowed.iter().map(|&i| (i, logits[i] - (m + z.ln()))).collect()
}

/// Cumulative log-probability of every sequence of at most `max_pieces`
/// allowed ids in which `eos` can only come last. `next` returns logits for
/// the generated prefix (without any start symbol).
pub fn enumerate_sequences(
    next: &mut dyn FnMut(&[usize]) -> Vec<f64>,
    allowed: &[usize],
    eos: usize,
    max_pieces: usize,
) -> BTreeMap<Vec<usize>, f64> {
    let mut table = BTreeMap::new();
    let mut stack: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((prefix, sum)) = stack.pop() {
        if prefix.len() == max_pieces || prefix.last() == Some(&eos) {
            continue;
        }
        let lp = log_softmax_over(&next(&prefix), allowed);
        for (&id, &l) in &lp {
            let mut seq = prefix.clone();
            seq.push(id);
            table.insert(seq.clone(), sum + l);
            stack.push((seq, sum + l));
        }
    }
    table
}

/// What width-limited beam selection must return given the full score table:
/// per step keep the `width` best expansions (ties to the smaller sequence),
/// set finished ones aside, stop when `width` finished or none live; rank the
/// finished (else the live) ones by score per piece.
pub fn replay_beam(
    table: &BTreeMap<Vec<usize>, f64>,
    allowed: &[usize],
    eos: usize,
    width: usize,
    max_pieces: usize,
) -> (Vec<(Vec<usize>, f64)>, bool) {
    let mut live: Vec<Vec<usize>> = vec![Vec::new()];
    let mut finished: Vec<Vec<usize>> = Vec::new();
    for _ in 0..max_pieces {
        let mut next: Vec<(Vec<usize>, f64)> = Vec::new();
        for beam in &live {
            for &id in allowed {
                let mut seq = beam.clone();
                seq.push(id);
                let s = table[&seq];
                next.push((seq, s));
            }
        }
        next.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        next.truncate(width);
        live = Vec::new();
        for (seq, _) in next {
            if seq.last() == Some(&eos) {
                finished.push(seq);
            } else {
                live.push(seq);
            }
        }
        if finished.len() >= width || live.is_empty() {
            break;
        }
    }
    let unfinished = finished.is_empty();
    let pool = if unfinished { live } else { finished };
    let mut out: Vec<(Vec<usize>, f64)> = pool
        .into_iter()
        .map(|s| {
            let score = table[&s] / s.len() as f64;
            (s, score)
        })
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    out.truncate(width);
    (out, unfinished)
}

fn contains_span(hay: &[String], needle: &[String], lo: usize, hi: usize) -> bool {
    needle.is_empty() || (lo..hi).any(|s| s + needle.len() <= hi && hay[s..s + needle.len()] == *needle)
}

/// Checks one generated example: label in the target, typed a nonempty
/// prefix of the label's typing form, both contexts contiguous target spans
/// strictly on their side of some occurrence of the label, and the context
/// type consistent with which contexts are empty.
pub fn check_example(ex: &WlacExample, form: impl Fn(&str) -> Option<String>) -> Result<(), String> {
    let t = &ex.full_target;
    let Some(f) = form(&ex.label) else {
        return Err(format!("label {:?} has no typing form", ex.label));
    };
    if ex.typed.is_empty() || !f.starts_with(&ex.typed) {
        return Err(format!("typed {:?} is not a nonempty prefix of {f:?}", ex.typed));
    }
    let placed = t.iter().enumerate().filter(|(_, w)| **w == ex.label).any(|(i, _)| {
        contains_span(t, &ex.left_context, 0, i) && contains_span(t, &ex.right_context, i + 1, t.len())
    });
    if !placed {
        return Err(format!("contexts do not bracket label {:?} in {:?}", ex.label, t));
    }
    use wlac::datagen::ContextType::*;
    let expected = match (ex.left_context.is_empty(), ex.right_context.is_empty()) {
        (true, true) => Zero,
        (false, true) => Prefix,
        (true, false) => Suffix,
        (false, false) => Bi,
    };
    if ex.context_type() != expected {
        return Err("context type disagrees with context emptiness".into());
    }
    Ok(())
}

/// Nearest-rank percentile of `values` (`p` in 0..=100).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn bpe_reference_on_a_tiny_corpus() {
        let m = reference_bpe(&s(&["aaa", "ab", "ab"]), 2);
        // (a,a) occurs twice in "aaa" (overlapping) and (a,b) twice: tie to (a,a).
        assert_eq!(m[0], ("a".into(), "a".into()));
        assert_eq!(m[1], ("a".into(), "b".into()));
    }

    #[test]
    fn joint_inference_reference() {
        let hyps = vec![s(&["The", "cat"])];
        assert_eq!(reference_joint_inference(&s(&["dog", "the"]), &hyps).as_deref(), Some("the"));
        assert_eq!(reference_joint_inference(&s(&["dog"]), &hyps).as_deref(), Some("dog"));
        assert_eq!(reference_joint_inference(&[], &hyps), None);
    }

    #[test]
    fn prefix_match_reference_breaks_ties_lexicographically() {
        let hyps = vec![s(&["cab", "car"]), s(&["dog"])];
        let pick = reference_prefix_match("ca", &hyps, |w| Some(w.to_string()));
        assert_eq!(pick.as_deref(), Some("cab"));
    }

    #[test]
    fn replay_with_width_one_is_greedy() {
        let mut t = BTreeMap::new();
        t.insert(vec![1], -0.1);
        t.insert(vec![2], -2.0);
        t.insert(vec![1, 1], -0.5);
        t.insert(vec![1, 2], -1.0);
        let (out, unfinished) = replay_beam(&t, &[1, 2], 1, 1, 2);
        assert!(!unfinished);
        assert_eq!(out, vec![(vec![1], -0.1)]);
    }

    #[test]
    fn example_checker_rejects_misplaced_context() {
        let ex = WlacExample {
            source: s(&["x"]),
            left_context: s(&["c"]),
            right_context: Vec::new(),
            typed: "b".into(),
            label: "b".into(),
            full_target: s(&["a", "b", "c"]),
            pair_id: "p".into(),
        };
        assert!(check_example(&ex, |w| Some(w.to_string())).is_err());
        let ok = WlacExample {
            left_context: s(&["a"]),
            ..ex
        };
        assert!(check_example(&ok, |w| Some(w.to_string())).is_ok());
    }

    #[test]
    fn nearest_rank_percentile() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 95.0), 95.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
    }
}
