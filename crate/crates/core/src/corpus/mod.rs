//! Parallel-corpus ingestion, vocabularies and the sub-word tokenizer.

mod bpe;
mod vocab;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bpe::{count_words, learn_bpe, BpeModel, WordCounts, END_MARKER};
pub use vocab::{build_vocab, Side, Vocabulary, SPECIALS};

/// One aligned sentence pair. Both sides are whitespace-tokenized and nonempty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub id: String,
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl ParallelPair {
    /// Builds a pair from raw text, returning `None` when either side has no tokens.
    pub fn from_text(id: impl Into<String>, source: &str, target: &str) -> Option<Self> {
        let source = tokenize(source);
        let target = tokenize(target);
        if source.is_empty() || target.is_empty() {
            return None;
        }
        Some(Self {
            id: id.into(),
            source,
            target,
        })
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone, Default)]
pub struct ParallelCorpus {
    pub pairs: Vec<ParallelPair>,
    /// Lines dropped because a side was empty or the tab separator was missing.
    pub skipped: usize,
}

/// Reads a `source<TAB>target` file. Pair ids are 1-based line numbers.
pub fn load_parallel(path: impl AsRef<Path>, limit: Option<usize>) -> Result<ParallelCorpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let corpus = parse_parallel(&text, limit);
    if corpus.skipped > 0 {
        log::warn!(
            "{}: skipped {} lines with an empty side",
            path.display(),
            corpus.skipped
        );
    }
    if corpus.pairs.is_empty() {
        return Err(Error::EmptyCorpus(path.to_owned()));
    }
    Ok(corpus)
}

pub fn parse_parallel(text: &str, limit: Option<usize>) -> ParallelCorpus {
    let mut corpus = ParallelCorpus::default();
    for (lineno, line) in text.lines().enumerate() {
        if limit.is_some_and(|n| corpus.pairs.len() >= n) {
            break;
        }
        let Some((src, tgt)) = line.split_once('\t') else {
            corpus.skipped += 1;
            continue;
        };
        match ParallelPair::from_text((lineno + 1).to_string(), src, tgt) {
            Some(pair) => corpus.pairs.push(pair),
            None => corpus.skipped += 1,
        }
    }
    corpus
}

pub fn write_parallel(path: impl AsRef<Path>, pairs: &[ParallelPair]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for pair in pairs {
        out.push_str(&pair.source.join(" "));
        out.push('\t');
        out.push_str(&pair.target.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tab_separated_line() {
        let corpus = parse_parallel("ab cd\txy zw\n", None);
        assert_eq!(corpus.pairs.len(), 1);
        assert_eq!(corpus.pairs[0].source, ["ab", "cd"]);
        assert_eq!(corpus.pairs[0].target, ["xy", "zw"]);
    }

    #[test]
    fn empty_side_is_skipped_and_counted() {
        let corpus = parse_parallel("\txy\na\tb\n", None);
        assert_eq!(corpus.skipped, 1);
        assert_eq!(corpus.pairs.len(), 1);
        assert_eq!(corpus.pairs[0].id, "2");
    }

    #[test]
    fn limit_caps_usable_pairs() {
        let corpus = parse_parallel("a\tA\nb\tB\nc\tC\n", Some(2));
        assert_eq!(corpus.pairs.len(), 2);
    }

    #[test]
    fn load_reports_missing_file_and_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.tsv");
        assert_eq!(load_parallel(&missing, None).unwrap_err().category(), "io");

        let empty = dir.path().join("empty.tsv");
        fs::write(&empty, "\tx\n \t \n").unwrap();
        assert_eq!(
            load_parallel(&empty, None).unwrap_err().category(),
            "empty_corpus"
        );
    }

    #[test]
    fn write_then_load_preserves_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        let pairs = vec![ParallelPair::from_text("1", "a b", "c d e").unwrap()];
        write_parallel(&path, &pairs).unwrap();
        assert_eq!(load_parallel(&path, None).unwrap().pairs, pairs);
    }
}
