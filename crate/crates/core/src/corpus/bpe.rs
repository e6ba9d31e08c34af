//! Byte-pair encoding over word characters.
//!
//! Merges are learned on plain character sequences by repeatedly joining the
//! most frequent adjacent pair (ties go to the lexicographically smallest
//! pair). Encoding replays merges in learned priority order and then marks the
//! final piece with [`END_MARKER`], so every symbol exists in two forms in the
//! piece vocabulary: word-internal and word-final.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::vocab::Vocabulary;
use crate::error::{Error, Result};

pub const END_MARKER: &str = "</w>";

pub type WordCounts = BTreeMap<String, u64>;

pub fn count_words<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> WordCounts {
    let mut counts = WordCounts::new();
    for w in words {
        let w = w.as_ref();
        if !w.is_empty() {
            *counts.entry(w.to_owned()).or_default() += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    vocab: Vocabulary,
}

/// Greedy most-frequent-pair merging; stops early once no pair remains.
pub fn learn_bpe(words: &WordCounts, num_merges: usize) -> BpeModel {
    let mut segmented: Vec<(Vec<String>, u64)> = words
        .iter()
        .map(|(w, &n)| (w.chars().map(String::from).collect(), n))
        .collect();
    let mut merges = Vec::with_capacity(num_merges);
    for _ in 0..num_merges {
        let mut counts: HashMap<(&str, &str), u64> = HashMap::new();
        for (symbols, n) in &segmented {
            for pair in symbols.windows(2) {
                *counts.entry((pair[0].as_str(), pair[1].as_str())).or_default() += n;
            }
        }
        let best = counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|((l, r), _)| (l.to_owned(), r.to_owned()));
        let Some(best) = best else { break };
        for (symbols, _) in &mut segmented {
            apply_merge(symbols, &best);
        }
        merges.push(best);
    }
    let alphabet: Vec<char> = {
        let mut chars: Vec<char> = words.keys().flat_map(|w| w.chars()).collect();
        chars.sort_unstable();
        chars.dedup();
        chars
    };
    BpeModel::from_merges(merges, alphabet)
}

fn apply_merge(symbols: &mut Vec<String>, (left, right): &(String, String)) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == *left && symbols[i + 1] == *right {
            let joined = format!("{}{}", symbols[i], symbols[i + 1]);
            symbols[i] = joined;
            symbols.remove(i + 1);
        }
        i += 1;
    }
}

impl BpeModel {
    /// Builds the model and its piece vocabulary from merges plus the base alphabet.
    pub fn from_merges(merges: Vec<(String, String)>, alphabet: impl IntoIterator<Item = char>) -> Self {
        let mut symbols: Vec<String> = alphabet.into_iter().map(String::from).collect();
        symbols.extend(merges.iter().map(|(l, r)| format!("{l}{r}")));
        let pieces = symbols
            .iter()
            .flat_map(|s| [s.clone(), format!("{s}{END_MARKER}")]);
        let vocab = Vocabulary::new(pieces, []);
        Self::with_vocab(merges, vocab)
    }

    fn with_vocab(merges: Vec<(String, String)>, vocab: Vocabulary) -> Self {
        let ranks = merges.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        Self { merges, ranks, vocab }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn end_marker(&self) -> &'static str {
        END_MARKER
    }

    /// Splits a word into pieces; the last piece carries the end marker.
    pub fn encode(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        if symbols.is_empty() {
            return symbols;
        }
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())).copied())
                .min();
            let Some(rank) = best else { break };
            apply_merge(&mut symbols, &self.merges[rank]);
        }
        if let Some(last) = symbols.last_mut() {
            last.push_str(END_MARKER);
        }
        symbols
    }

    pub fn encode_ids(&self, word: &str) -> Vec<usize> {
        self.vocab.encode(&self.encode(word))
    }

    pub fn decode<S: AsRef<str>>(&self, pieces: &[S]) -> String {
        decode_pieces(pieces)
    }

    /// Groups a piece-id stream into words at end markers. Specials are
    /// skipped; a trailing unterminated word is kept.
    pub fn ids_to_words(&self, ids: &[usize]) -> Vec<String> {
        let mut words = Vec::new();
        let mut current = String::new();
        for &id in ids {
            if id < Vocabulary::NUM_SPECIALS {
                continue;
            }
            let Some(piece) = self.vocab.token_of(id) else { continue };
            match piece.strip_suffix(END_MARKER) {
                Some(body) => {
                    current.push_str(body);
                    words.push(std::mem::take(&mut current));
                }
                None => current.push_str(piece),
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
        words
    }

    /// Merges file: one `left right` pair per line, in priority order.
    pub fn merges_text(&self) -> String {
        self.merges.iter().map(|(l, r)| format!("{l} {r}\n")).collect()
    }

    pub fn save(&self, merges_path: impl AsRef<Path>, vocab_path: impl AsRef<Path>) -> Result<()> {
        let merges_path = merges_path.as_ref();
        fs::write(merges_path, self.merges_text()).map_err(|e| Error::io(merges_path, e))?;
        self.vocab.save(vocab_path)
    }

    pub fn load(merges_path: impl AsRef<Path>, vocab_path: impl AsRef<Path>) -> Result<Self> {
        let merges_path = merges_path.as_ref();
        let text = fs::read_to_string(merges_path).map_err(|e| Error::io(merges_path, e))?;
        let merges = parse_merges(&text, merges_path)?;
        Ok(Self::with_vocab(merges, Vocabulary::load(vocab_path)?))
    }

    pub fn from_texts(merges: &str, vocab: &str) -> Result<Self> {
        let merges = parse_merges(merges, Path::new("<merges>"))?;
        Ok(Self::with_vocab(merges, Vocabulary::from_text(vocab, Path::new("<bpe vocab>"))?))
    }
}

pub(crate) fn decode_pieces<S: AsRef<str>>(pieces: &[S]) -> String {
    pieces
        .iter()
        .map(|p| p.as_ref().strip_suffix(END_MARKER).unwrap_or(p.as_ref()))
        .collect()
}

fn parse_merges(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => Ok((l.to_owned(), r.to_owned())),
                _ => Err(Error::Parse {
                    path: path.to_owned(),
                    line: i + 1,
                    message: "expected `left right`".into(),
                }),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn marked(s: &str) -> String {
        format!("{s}{END_MARKER}")
    }

    #[test]
    fn first_merge_uses_lexicographic_tie_break() {
        // l-o and o-w both occur three times; ("l","o") sorts first.
        let model = learn_bpe(&count_words(["low", "lower", "lowest"]), 1);
        assert_eq!(model.merges(), [("l".to_string(), "o".to_string())]);
    }

    #[test]
    fn single_pair_corpus() {
        let model = learn_bpe(&count_words(["aa"]), 1);
        assert_eq!(model.merges(), [("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn zero_merges_is_character_level() {
        let model = learn_bpe(&count_words(["ab"]), 0);
        assert_eq!(model.encode("ab"), vec!["a".to_string(), marked("b")]);
    }

    #[test]
    fn stops_early_when_pairs_run_out() {
        let model = learn_bpe(&count_words(["ab"]), 10);
        assert_eq!(model.merges().len(), 1);
    }

    #[test]
    fn complete_merge() {
        let merges = vec![("l".into(), "o".into()), ("lo".into(), "w".into())];
        let model = BpeModel::from_merges(merges, "low".chars());
        assert_eq!(model.encode("low"), vec![marked("low")]);
        assert!(model.vocab().get(&marked("low")).is_some());
    }

    #[test]
    fn decode_strips_marker() {
        let model = learn_bpe(&count_words(["step"]), 0);
        assert_eq!(model.decode(&["st".to_string(), marked("ep")]), "step");
        assert_eq!(model.decode(&[marked("a")]), "a");
    }

    #[test]
    fn round_trip_known_words() {
        let model = learn_bpe(&count_words(["walking", "walked", "lowest", "talk"]), 8);
        for w in ["lowest", "walking", "talked"] {
            assert_eq!(model.decode(&model.encode(w)), w);
        }
    }

    #[test]
    fn unknown_characters_become_unk_ids() {
        let model = learn_bpe(&count_words(["ab"]), 1);
        let ids = model.encode_ids("az");
        assert_eq!(ids.len(), 2);
        assert_eq!(ids[1], Vocabulary::UNK);
    }

    #[test]
    fn ids_to_words_splits_on_marker() {
        let model = learn_bpe(&count_words(["step", "small"]), 3);
        let mut ids = model.encode_ids("small");
        ids.extend(model.encode_ids("step"));
        ids.push(Vocabulary::EOS);
        assert_eq!(model.ids_to_words(&ids), ["small", "step"]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = learn_bpe(&count_words(["lower", "lowest", "newer"]), 5);
        let (m, v) = (dir.path().join("bpe.merges"), dir.path().join("bpe.vocab"));
        model.save(&m, &v).unwrap();
        assert_eq!(BpeModel::load(&m, &v).unwrap(), model);
    }
}
