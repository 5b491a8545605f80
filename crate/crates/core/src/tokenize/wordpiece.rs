use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::SubwordTokenizer;
use crate::encoding::{MARKER_MULTIWORD, MARKER_NORMAL};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
const CONTINUATION: &str = "##";

/// Lowercasing greedy longest-match word-piece tokenizer with `##`
/// continuation pieces. The pad, unknown and marker symbols are reserved and
/// always map to a single token.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "WordPieceRepr", into = "WordPieceRepr")]
pub struct WordPiece {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    max_len: usize,
    lowercase: bool,
}

#[derive(Serialize, Deserialize)]
struct WordPieceRepr {
    vocab: Vec<String>,
    max_len: usize,
    lowercase: bool,
}

impl From<WordPieceRepr> for WordPiece {
    fn from(r: WordPieceRepr) -> Self {
        WordPiece::from_vocab(r.vocab, r.max_len, r.lowercase)
    }
}

impl From<WordPiece> for WordPieceRepr {
    fn from(w: WordPiece) -> Self {
        WordPieceRepr {
            vocab: w.vocab,
            max_len: w.max_len,
            lowercase: w.lowercase,
        }
    }
}

pub const RESERVED: [&str; 4] = [PAD, UNK, MARKER_NORMAL, MARKER_MULTIWORD];

impl WordPiece {
    /// Build from an explicit vocabulary; reserved symbols missing from it
    /// are prepended.
    pub fn from_vocab<I, S>(vocab: I, max_len: usize, lowercase: bool) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let given: Vec<String> = vocab.into_iter().map(Into::into).collect();
        let mut all: Vec<String> = RESERVED
            .iter()
            .filter(|r| !given.iter().any(|g| g == *r))
            .map(|r| r.to_string())
            .collect();
        all.extend(given);
        let mut index = HashMap::with_capacity(all.len());
        let mut vocab = Vec::with_capacity(all.len());
        for tok in all {
            if !index.contains_key(&tok) {
                index.insert(tok.clone(), vocab.len() as u32);
                vocab.push(tok);
            }
        }
        WordPiece {
            vocab,
            index,
            max_len,
            lowercase,
        }
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn unk(&self) -> Vec<(String, u32)> {
        vec![(UNK.to_owned(), self.index[UNK])]
    }
}

impl SubwordTokenizer for WordPiece {
    fn tokenize_word(&self, word: &str) -> Vec<(String, u32)> {
        if let Some(&id) = RESERVED.contains(&word).then(|| &self.index[word]) {
            return vec![(word.to_owned(), id)];
        }
        let word = if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_owned()
        };
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        if chars.is_empty() || chars.len() > 100 {
            return self.unk();
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let from = chars[start].0;
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                let to = chars.get(end).map_or(word.len(), |c| c.0);
                let piece = if start == 0 {
                    word[from..to].to_owned()
                } else {
                    format!("{CONTINUATION}{}", &word[from..to])
                };
                if let Some(&id) = self.index.get(&piece) {
                    found = Some((piece, id, end));
                    break;
                }
            }
            match found {
                Some((piece, id, end)) => {
                    out.push((piece, id));
                    start = end;
                }
                None => return self.unk(),
            }
        }
        out
    }

    fn pad(&self) -> (&str, u32) {
        (PAD, self.index[PAD])
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn max_len(&self) -> usize {
        self.max_len
    }
}

/// Induces a [`WordPiece`] vocabulary from training words: the character
/// alphabet (initial and continuation forms), frequent whole words, and
/// frequent prefixes/continuation suffixes so rarer words split into pieces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WordPieceBuilder {
    pub min_word_count: usize,
    pub min_piece_count: usize,
    pub max_piece_chars: usize,
    pub max_len: usize,
    pub lowercase: bool,
}

impl Default for WordPieceBuilder {
    fn default() -> Self {
        WordPieceBuilder {
            min_word_count: 2,
            min_piece_count: 3,
            max_piece_chars: 4,
            max_len: 128,
            lowercase: true,
        }
    }
}

impl WordPieceBuilder {
    pub fn build<'a, I>(&self, words: I) -> WordPiece
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut word_counts: BTreeMap<String, usize> = BTreeMap::new();
        for w in words {
            if RESERVED.contains(&w) {
                continue;
            }
            let w = if self.lowercase { w.to_lowercase() } else { w.to_owned() };
            *word_counts.entry(w).or_default() += 1;
        }
        let mut pieces: BTreeSet<String> = BTreeSet::new();
        let mut piece_counts: BTreeMap<String, usize> = BTreeMap::new();
        for (w, &n) in &word_counts {
            let chars: Vec<char> = w.chars().collect();
            for c in &chars {
                pieces.insert(c.to_string());
                pieces.insert(format!("{CONTINUATION}{c}"));
            }
            if n >= self.min_word_count {
                pieces.insert(w.clone());
            }
            for k in 2..=self.max_piece_chars.min(chars.len().saturating_sub(1)) {
                let prefix: String = chars[..k].iter().collect();
                let suffix: String = chars[chars.len() - k..].iter().collect();
                *piece_counts.entry(prefix).or_default() += n;
                *piece_counts.entry(format!("{CONTINUATION}{suffix}")).or_default() += n;
            }
        }
        pieces.extend(
            piece_counts
                .into_iter()
                .filter(|(_, n)| *n >= self.min_piece_count)
                .map(|(p, _)| p),
        );
        WordPiece::from_vocab(pieces, self.max_len, self.lowercase)
    }
}
