use std::collections::HashMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::ParallelPair;
use crate::error::{Error, Result};

/// Reserved tokens, in id order. Every vocabulary file starts with exactly these lines.
pub const SPECIALS: [&str; 7] = ["<pad>", "<unk>", "<sep>", "<tip>", "<mask>", "<bos>", "<eos>"];

/// Prefix used to spell character entries in vocabulary files.
const CHAR_PREFIX: &str = "<c>";

/// Bijective token/id map.
///
/// Ids `0..7` are the specials in [`SPECIALS`] order. Word entries follow, and
/// character entries (used to embed typed sequences one character at a time)
/// come last. Unknown tokens and characters map to `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    chars: HashMap<char, usize>,
    char_start: usize,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const SEP: usize = 2;
    pub const TIP: usize = 3;
    pub const MASK: usize = 4;
    pub const BOS: usize = 5;
    pub const EOS: usize = 6;
    pub const NUM_SPECIALS: usize = SPECIALS.len();

    /// Builds a vocabulary from word tokens (in id order) and character entries.
    /// Duplicates and tokens that shadow a special are dropped.
    pub fn new<S: AsRef<str>>(words: impl IntoIterator<Item = S>, chars: impl IntoIterator<Item = char>) -> Self {
        let mut vocab = Self::specials_only();
        for word in words {
            let word = word.as_ref();
            if !vocab.index.contains_key(word) {
                vocab.index.insert(word.to_owned(), vocab.tokens.len());
                vocab.tokens.push(word.to_owned());
            }
        }
        vocab.char_start = vocab.tokens.len();
        vocab.add_chars(chars);
        vocab
    }

    pub fn specials_only() -> Self {
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens,
            index,
            chars: HashMap::new(),
            char_start: Self::NUM_SPECIALS,
        }
    }

    /// Returns a copy extended with character entries for every new character.
    pub fn with_chars(mut self, chars: impl IntoIterator<Item = char>) -> Self {
        self.add_chars(chars);
        self
    }

    fn add_chars(&mut self, chars: impl IntoIterator<Item = char>) {
        let mut sorted: Vec<char> = chars.into_iter().filter(|c| !self.chars.contains_key(c)).collect();
        sorted.sort_unstable();
        sorted.dedup();
        for c in sorted {
            let spelled = format!("{CHAR_PREFIX}{c}");
            self.chars.insert(c, self.tokens.len());
            self.index.insert(spelled.clone(), self.tokens.len());
            self.tokens.push(spelled);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or `<unk>` when absent.
    pub fn id_of(&self, token: &str) -> usize {
        self.get(token).unwrap_or(Self::UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token_of(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn char_id(&self, c: char) -> usize {
        self.chars.get(&c).copied().unwrap_or(Self::UNK)
    }

    /// Ids of word entries (neither special nor character).
    pub fn word_ids(&self) -> Range<usize> {
        Self::NUM_SPECIALS..self.char_start
    }

    pub fn is_word(&self, id: usize) -> bool {
        self.word_ids().contains(&id)
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn words(&self) -> impl Iterator<Item = (usize, &str)> {
        self.word_ids().map(move |id| (id, self.tokens[id].as_str()))
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_of(t.as_ref())).collect()
    }

    /// File form: one token per line, specials first; line `n` holds id `n`.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.tokens.len() * 8);
        for token in &self.tokens {
            out.push_str(token);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        for (i, special) in SPECIALS.iter().enumerate() {
            if lines.get(i) != Some(special) {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: i + 1,
                    message: format!("expected special token {special}"),
                });
            }
        }
        let mut vocab = Self::specials_only();
        let mut seen_char = false;
        for (offset, line) in lines[SPECIALS.len()..].iter().enumerate() {
            let lineno = SPECIALS.len() + offset + 1;
            let parse_err = |message: &str| Error::Parse {
                path: path.to_owned(),
                line: lineno,
                message: message.to_owned(),
            };
            if line.is_empty() || line.chars().any(char::is_whitespace) {
                return Err(parse_err("tokens must be nonempty and contain no whitespace"));
            }
            if vocab.index.contains_key(*line) {
                return Err(parse_err("duplicate token"));
            }
            let id = vocab.tokens.len();
            match char_entry(line) {
                Some(c) => {
                    seen_char = true;
                    vocab.chars.insert(c, id);
                }
                None if seen_char => return Err(parse_err("word entry after character entries")),
                None => vocab.char_start = id + 1,
            }
            vocab.index.insert(line.to_string(), id);
            vocab.tokens.push(line.to_string());
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    /// SHA-256 of the file form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

fn char_entry(token: &str) -> Option<char> {
    let rest = token.strip_prefix(CHAR_PREFIX)?;
    let mut chars = rest.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
    Joint,
}

/// Frequency-ranked word vocabulary (ties broken lexicographically), capped at
/// `max_size` entries including the specials. Character entries are not added
/// here; see [`Vocabulary::with_chars`].
pub fn build_vocab(pairs: &[ParallelPair], side: Side, max_size: usize, min_freq: usize) -> Result<Vocabulary> {
    if max_size <= SPECIALS.len() {
        return Err(Error::Config(format!(
            "max vocabulary size {max_size} must exceed the {} special tokens",
            SPECIALS.len()
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for pair in pairs {
        let sides: [&[String]; 2] = match side {
            Side::Source => [&pair.source, &[]],
            Side::Target => [&pair.target, &[]],
            Side::Joint => [&pair.source, &pair.target],
        };
        for token in sides.into_iter().flatten() {
            *counts.entry(token.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, n)| n >= min_freq.max(1) && !SPECIALS.contains(&t))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - SPECIALS.len());
    Ok(Vocabulary::new(ranked.into_iter().map(|(t, _)| t), []))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(target: &[&str]) -> Vec<ParallelPair> {
        target
            .iter()
            .enumerate()
            .map(|(i, t)| ParallelPair::from_text(i.to_string(), "x", t).unwrap())
            .collect()
    }

    #[test]
    fn frequency_ranking_and_threshold() {
        let data = pairs(&["a a a", "b"]);
        let vocab = build_vocab(&data, Side::Target, SPECIALS.len() + 2, 1).unwrap();
        assert!(vocab.get("a").is_some() && vocab.get("b").is_some());
        assert!(vocab.get("a").unwrap() < vocab.get("b").unwrap());

        let vocab = build_vocab(&data, Side::Target, 100, 2).unwrap();
        assert_eq!(vocab.id_of("b"), Vocabulary::UNK);
    }

    #[test]
    fn ties_break_lexicographically() {
        // Enumerating the ranking rule by hand: both have count 2, "a" < "b".
        let data = pairs(&["b a", "a b"]);
        let vocab = build_vocab(&data, Side::Target, SPECIALS.len() + 1, 1).unwrap();
        assert!(vocab.get("a").is_some());
        assert!(vocab.get("b").is_none());
    }

    #[test]
    fn specials_have_lowest_ids() {
        let vocab = build_vocab(&[], Side::Joint, 50, 1).unwrap();
        assert_eq!(vocab.len(), SPECIALS.len());
        for (i, s) in SPECIALS.iter().enumerate() {
            assert_eq!(vocab.get(s), Some(i));
        }
        assert_eq!(vocab.id_of("<mask>"), Vocabulary::MASK);
    }

    #[test]
    fn too_small_max_size_is_rejected() {
        assert!(build_vocab(&[], Side::Joint, SPECIALS.len(), 1).is_err());
    }

    #[test]
    fn joint_side_counts_both_languages() {
        let data = vec![ParallelPair::from_text("1", "src", "tgt").unwrap()];
        let vocab = build_vocab(&data, Side::Joint, 20, 1).unwrap();
        assert!(vocab.get("src").is_some() && vocab.get("tgt").is_some());
        let vocab = build_vocab(&data, Side::Source, 20, 1).unwrap();
        assert!(vocab.get("tgt").is_none());
    }

    #[test]
    fn file_round_trip_with_chars() {
        let vocab = Vocabulary::new(["step", "small"], "stp".chars());
        let back = Vocabulary::from_text(&vocab.to_text(), Path::new("v")).unwrap();
        assert_eq!(back, vocab);
        assert_eq!(back.char_id('s'), vocab.char_id('s'));
        assert_eq!(back.char_id('z'), Vocabulary::UNK);
        assert!(back.is_word(back.id_of("step")));
        assert!(!back.is_word(back.char_id('t')));
        assert_eq!(back.hash(), vocab.hash());
    }

    #[test]
    fn malformed_header_is_rejected() {
        let err = Vocabulary::from_text("<unk>\n<pad>\n", Path::new("v")).unwrap_err();
        assert_eq!(err.category(), "parse");
    }

    #[test]
    fn bijection_holds() {
        let vocab = Vocabulary::new(["x", "y", "z"], "ab".chars());
        for id in 0..vocab.len() {
            let token = vocab.token_of(id).unwrap();
            assert_eq!(vocab.get(token), Some(id));
        }
    }
}
