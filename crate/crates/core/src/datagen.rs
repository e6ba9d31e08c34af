//! Synthesis of word-level auto-completion examples from parallel pairs, and a
//! deterministic toy translation task for desk-scale experiments.
//!
//! For each draw a target word is chosen uniformly among the typeable tokens of
//! the target sentence, context spans are sampled from the tokens strictly to
//! its left and right, and a nonempty prefix of the word's typing form becomes
//! the typed sequence.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::corpus::ParallelPair;
use crate::error::{Error, Result};
use crate::seed;

/// One task instance: source `s`, contexts `c_l`/`c_r`, typed characters `t`
/// and the label word `w`, plus the golden target it was cut from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WlacExample {
    pub source: Vec<String>,
    pub left_context: Vec<String>,
    pub right_context: Vec<String>,
    pub typed: String,
    pub label: String,
    pub full_target: Vec<String>,
    pub pair_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextType {
    Zero,
    Prefix,
    Suffix,
    Bi,
}

impl WlacExample {
    pub fn context_type(&self) -> ContextType {
        match (self.left_context.is_empty(), self.right_context.is_empty()) {
            (true, true) => ContextType::Zero,
            (false, true) => ContextType::Prefix,
            (true, false) => ContextType::Suffix,
            (false, false) => ContextType::Bi,
        }
    }

    pub fn context_len(&self) -> usize {
        self.left_context.len() + self.right_context.len()
    }
}

/// Character to romanization mapping for scripts that are not typed directly.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RomanizationTable {
    map: HashMap<char, String>,
}

impl RomanizationTable {
    pub fn new(entries: impl IntoIterator<Item = (char, String)>) -> Result<Self> {
        let mut map = HashMap::new();
        for (c, roman) in entries {
            if roman.is_empty() || !roman.chars().all(|r| r.is_ascii_lowercase()) {
                return Err(Error::Invalid(format!(
                    "romanization of {c:?} must be nonempty lowercase ASCII, got {roman:?}"
                )));
            }
            map.insert(c, roman);
        }
        Ok(Self { map })
    }

    /// Parses `character<TAB>roman` lines.
    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: &str| Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: message.to_owned(),
            };
            let (c, roman) = line.split_once('\t').ok_or_else(|| err("expected `character<TAB>roman`"))?;
            let mut chars = c.chars();
            let (Some(c), None) = (chars.next(), chars.next()) else {
                return Err(err("first column must be a single character"));
            };
            entries.push((c, roman.trim().to_owned()));
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, path)
    }

    pub fn get(&self, c: char) -> Option<&str> {
        self.map.get(&c).map(String::as_str)
    }
}

/// Characters from scripts that are entered through a romanization.
pub fn needs_romanization(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF       // kana
        | 0x3400..=0x4DBF     // CJK extension A
        | 0x4E00..=0x9FFF     // CJK unified
        | 0xAC00..=0xD7AF     // hangul
        | 0xF900..=0xFAFF     // CJK compatibility
        | 0x20000..=0x2FA1F)
}

/// The string a user types for `word`: the word itself for directly typed
/// scripts, otherwise the concatenated per-character romanization. `None` when
/// some character cannot be typed.
pub fn typing_form(word: &str, table: Option<&RomanizationTable>) -> Option<String> {
    let mut out = String::with_capacity(word.len());
    for c in word.chars() {
        match table.and_then(|t| t.get(c)) {
            Some(roman) => out.push_str(roman),
            None if needs_romanization(c) => return None,
            None => out.push(c),
        }
    }
    (!out.is_empty()).then_some(out)
}

pub fn requires_romanization(pairs: &[ParallelPair]) -> bool {
    pairs
        .iter()
        .flat_map(|p| &p.target)
        .any(|w| w.chars().any(needs_romanization))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "len")]
pub enum TypedLenPolicy {
    /// Uniform over all nonempty prefixes, the full word included.
    Uniform,
    /// A fixed number of characters, clipped to the typing-form length.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub max_context_len: usize,
    pub typed_len_policy: TypedLenPolicy,
    /// Force context spans to touch the label position.
    pub context_adjacency: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_context_len: 8,
            typed_len_policy: TypedLenPolicy::Uniform,
            context_adjacency: false,
        }
    }
}

/// The sampled choices behind one example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Draw {
    pub label_index: usize,
    pub left: Range<usize>,
    pub right: Range<usize>,
    pub typed_len: usize,
}

/// Assembles an example from explicit choices, validating them.
pub fn build_example(pair: &ParallelPair, draw: &Draw, table: Option<&RomanizationTable>) -> Result<WlacExample> {
    let fail = |reason: String| Error::Generation {
        pair_id: pair.id.clone(),
        reason,
    };
    let n = pair.target.len();
    let idx = draw.label_index;
    if idx >= n {
        return Err(fail(format!("label index {idx} out of range")));
    }
    if !draw.left.is_empty() && draw.left.end > idx {
        return Err(fail("left span must lie strictly left of the label".into()));
    }
    if !draw.right.is_empty() && (draw.right.start <= idx || draw.right.end > n) {
        return Err(fail("right span must lie strictly right of the label".into()));
    }
    let label = &pair.target[idx];
    let form = typing_form(label, table).ok_or_else(|| fail(format!("{label:?} has no typing form")))?;
    let form_len = form.chars().count();
    if draw.typed_len == 0 || draw.typed_len > form_len {
        return Err(fail(format!("typed length {} outside 1..={form_len}", draw.typed_len)));
    }
    let span = |r: &Range<usize>| if r.is_empty() { Vec::new() } else { pair.target[r.clone()].to_vec() };
    Ok(WlacExample {
        source: pair.source.clone(),
        left_context: span(&draw.left),
        right_context: span(&draw.right),
        typed: form.chars().take(draw.typed_len).collect(),
        label: label.clone(),
        full_target: pair.target.clone(),
        pair_id: pair.id.clone(),
    })
}

fn sample_span(rng: &mut ChaCha8Rng, lo: usize, hi: usize, max_len: usize, anchor_at_hi: Option<bool>) -> Range<usize> {
    let avail = hi - lo;
    let len = rng.random_range(0..=avail.min(max_len));
    if len == 0 {
        return lo..lo;
    }
    let start = match anchor_at_hi {
        Some(true) => hi - len,
        Some(false) => lo,
        None => rng.random_range(lo..=hi - len),
    };
    start..start + len
}

/// Draws the choices for one example; deterministic in `(cfg.seed, pair.id, draw_index)`.
pub fn sample_draw(
    pair: &ParallelPair,
    cfg: &GenConfig,
    table: Option<&RomanizationTable>,
    draw_index: u64,
) -> Result<Draw> {
    let mut rng = seed::rng(seed::mix(&[cfg.seed, seed::fnv1a(pair.id.as_bytes()), draw_index]));
    let typeable: Vec<(usize, usize)> = pair
        .target
        .iter()
        .enumerate()
        .filter_map(|(i, w)| typing_form(w, table).map(|f| (i, f.chars().count())))
        .collect();
    if typeable.is_empty() {
        return Err(Error::Generation {
            pair_id: pair.id.clone(),
            reason: "no target word has a typing form".into(),
        });
    }
    let (idx, form_len) = typeable[rng.random_range(0..typeable.len())];
    let adj = cfg.context_adjacency;
    let left = sample_span(&mut rng, 0, idx, cfg.max_context_len, adj.then_some(true));
    let right = sample_span(&mut rng, idx + 1, pair.target.len(), cfg.max_context_len, adj.then_some(false));
    let typed_len = match cfg.typed_len_policy {
        TypedLenPolicy::Uniform => rng.random_range(1..=form_len),
        TypedLenPolicy::Fixed(n) => n.clamp(1, form_len),
    };
    Ok(Draw {
        label_index: idx,
        left,
        right,
        typed_len,
    })
}

pub fn generate_example(
    pair: &ParallelPair,
    cfg: &GenConfig,
    table: Option<&RomanizationTable>,
    draw_index: u64,
) -> Result<WlacExample> {
    let draw = sample_draw(pair, cfg, table, draw_index)?;
    build_example(pair, &draw, table)
}

#[derive(Debug, Clone, Default)]
pub struct GeneratedDataset {
    pub examples: Vec<WlacExample>,
    pub skipped_pairs: usize,
}

/// `per_pair` examples for each usable pair, in pair order.
pub fn generate_dataset(
    pairs: &[ParallelPair],
    per_pair: usize,
    cfg: &GenConfig,
    table: Option<&RomanizationTable>,
) -> Result<GeneratedDataset> {
    if per_pair == 0 {
        return Err(Error::Config("per_pair must be at least 1".into()));
    }
    let mut out = GeneratedDataset::default();
    for pair in pairs {
        let drawn: Result<Vec<_>> = (0..per_pair as u64)
            .map(|d| generate_example(pair, cfg, table, d))
            .collect();
        match drawn {
            Ok(examples) => out.examples.extend(examples),
            Err(e) => {
                log::debug!("skipping pair: {e}");
                out.skipped_pairs += 1;
            }
        }
    }
    if out.examples.is_empty() {
        return Err(Error::EmptyDataset {
            skipped: out.skipped_pairs,
        });
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, examples: &[WlacExample]) -> Result<()> {
    crate::jsonl::write_jsonl(path, examples)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<WlacExample>> {
    let path = path.as_ref();
    let examples: Vec<WlacExample> = crate::jsonl::read_jsonl(path)?;
    if examples.is_empty() {
        return Err(Error::EmptyDataset { skipped: 0 });
    }
    Ok(examples)
}

/// Swaps positions `(2i, 2i+1)`; an odd trailing element stays put.
pub fn swap_adjacent<T: Clone>(tokens: &[T]) -> Vec<T> {
    let mut out = tokens.to_vec();
    for pair in out.chunks_mut(2) {
        pair.reverse();
    }
    out
}

const TARGET_CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const SOURCE_CONSONANTS: &[u8] = b"chjqwxy";
const VOWELS: &[u8] = b"aeiou";
/// Inflections attached to each target stem, giving families of words that
/// share a typed prefix and a stem.
const SUFFIXES: [&str; 4] = ["", "s", "ed", "ing"];

/// A synthetic language pair: a word dictionary plus a local reordering rule.
#[derive(Debug, Clone)]
pub struct ToyLanguage {
    /// `dictionary[i]` translates `source_words[i]`.
    pub source_words: Vec<String>,
    pub dictionary: Vec<String>,
    /// Source index for each Zipf rank (rank 0 most frequent).
    rank_to_source: Vec<usize>,
}

fn random_words(rng: &mut ChaCha8Rng, consonants: &[u8], count: usize) -> Vec<String> {
    let mut syllables = 2;
    while (consonants.len() * VOWELS.len()).pow(syllables as u32) < count * 2 {
        syllables += 1;
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let word: String = (0..syllables)
            .flat_map(|_| {
                let c = consonants[rng.random_range(0..consonants.len())] as char;
                let v = VOWELS[rng.random_range(0..VOWELS.len())] as char;
                [c, v]
            })
            .collect();
        if seen.insert(word.clone()) {
            out.push(word);
        }
    }
    out
}

impl ToyLanguage {
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed::mix(&[seed, 1]));
        let stems = random_words(&mut rng, TARGET_CONSONANTS, vocab_size.div_ceil(SUFFIXES.len()));
        let mut targets: Vec<String> = stems
            .iter()
            .flat_map(|s| SUFFIXES.iter().map(move |suf| format!("{s}{suf}")))
            .take(vocab_size)
            .collect();
        targets.shuffle(&mut rng);
        let source_words = random_words(&mut rng, SOURCE_CONSONANTS, vocab_size);
        let mut rank_to_source: Vec<usize> = (0..vocab_size).collect();
        rank_to_source.shuffle(&mut rng);
        Self {
            source_words,
            dictionary: targets,
            rank_to_source,
        }
    }

    pub fn translate(&self, source: &[String]) -> Vec<String> {
        let index: HashMap<&str, usize> = self
            .source_words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i))
            .collect();
        let mapped: Vec<String> = source
            .iter()
            .map(|w| index.get(w.as_str()).map_or_else(|| w.clone(), |&i| self.dictionary[i].clone()))
            .collect();
        swap_adjacent(&mapped)
    }
}

/// Deterministic synthetic corpus. Source tokens follow a Zipf law over the
/// source vocabulary; targets are the word-by-word dictionary translation with
/// each adjacent position pair swapped. The first `n` pairs do not depend on
/// `size`, so larger corpora extend smaller ones.
pub fn make_toy_corpus(size: usize, vocab_size: usize, min_len: usize, max_len: usize, seed: u64) -> Result<Vec<ParallelPair>> {
    if vocab_size < 10 {
        return Err(Error::Config("toy vocabulary needs at least 10 words".into()));
    }
    if min_len == 0 || min_len > max_len {
        return Err(Error::Config(format!("invalid length range {min_len}..={max_len}")));
    }
    let lang = ToyLanguage::new(vocab_size, seed);
    let zipf = Zipf::new(vocab_size as f64, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = seed::rng(seed::mix(&[seed, 2]));
    let pairs = (0..size)
        .map(|i| {
            let len = rng.random_range(min_len..=max_len);
            let source: Vec<String> = (0..len)
                .map(|_| {
                    let rank = (zipf.sample(&mut rng) as usize).clamp(1, vocab_size) - 1;
                    lang.source_words[lang.rank_to_source[rank]].clone()
                })
                .collect();
            let target = lang.translate(&source);
            ParallelPair {
                id: format!("toy-{i}"),
                source,
                target,
            }
        })
        .collect();
    Ok(pairs)
}
