//! Canonical sentence/cue/scope representation and the corpus readers.

mod canonical;
mod columns;
mod xml;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use canonical::{read_canonical, read_canonical_or, read_canonical_file, write_canonical, write_canonical_file};
pub use columns::{parse_column_format, parse_column_format_with_notes, ColumnLayout};
pub use xml::{parse_inline_xml, CueLink, XmlDialect};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CueKind {
    Speculation,
    Negation,
}

impl fmt::Display for CueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CueKind::Speculation => "speculation",
            CueKind::Negation => "negation",
        })
    }
}

impl FromStr for CueKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "speculation" | "hedge" => Ok(CueKind::Speculation),
            "negation" => Ok(CueKind::Negation),
            other => Err(Error::Input(format!("unknown cue kind '{other}'"))),
        }
    }
}

/// Dataset tag. Unknown names become `Custom`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CorpusName {
    BF,
    BA,
    SFU,
    Sherlock,
    Custom(String),
}

impl fmt::Display for CorpusName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusName::BF => f.write_str("BF"),
            CorpusName::BA => f.write_str("BA"),
            CorpusName::SFU => f.write_str("SFU"),
            CorpusName::Sherlock => f.write_str("Sherlock"),
            CorpusName::Custom(s) => write!(f, "custom:{s}"),
        }
    }
}

impl From<&str> for CorpusName {
    fn from(s: &str) -> Self {
        match s {
            "BF" => CorpusName::BF,
            "BA" => CorpusName::BA,
            "SFU" => CorpusName::SFU,
            "Sherlock" => CorpusName::Sherlock,
            other => CorpusName::Custom(other.strip_prefix("custom:").unwrap_or(other).to_owned()),
        }
    }
}

impl Serialize for CorpusName {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CorpusName {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(CorpusName::from(s.as_str()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueAnnotation {
    pub id: String,
    pub kind: CueKind,
    pub word_indices: Vec<usize>,
}

impl CueAnnotation {
    pub fn is_multiword(&self) -> bool {
        self.word_indices.len() > 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeAnnotation {
    pub cue_id: String,
    /// Sorted, duplicate-free. May be discontinuous or empty.
    pub word_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub sentence_id: String,
    pub words: Vec<String>,
    pub cues: Vec<CueAnnotation>,
    pub scopes: Vec<ScopeAnnotation>,
}

impl AnnotatedSentence {
    pub fn unannotated(sentence_id: impl Into<String>, words: Vec<String>) -> Self {
        AnnotatedSentence {
            sentence_id: sentence_id.into(),
            words,
            cues: Vec::new(),
            scopes: Vec::new(),
        }
    }

    pub fn cue(&self, id: &str) -> Option<&CueAnnotation> {
        self.cues.iter().find(|c| c.id == id)
    }

    pub fn scope_of(&self, cue_id: &str) -> Option<&ScopeAnnotation> {
        self.scopes.iter().find(|s| s.cue_id == cue_id)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.words.len();
        let sid = &self.sentence_id;
        if let Some(w) = self.words.iter().find(|w| w.is_empty() || w.chars().any(char::is_whitespace)) {
            return Err(Error::Invariant(format!(
                "sentence {sid}: word {w:?} is empty or contains whitespace"
            )));
        }
        let mut cue_ids = HashSet::new();
        for cue in &self.cues {
            if !cue_ids.insert(cue.id.as_str()) {
                return Err(Error::Invariant(format!("sentence {sid}: duplicate cue id {}", cue.id)));
            }
            if cue.word_indices.is_empty() {
                return Err(Error::Invariant(format!("sentence {sid}: cue {} has no words", cue.id)));
            }
            check_indices(sid, &format!("cue {}", cue.id), &cue.word_indices, n)?;
        }
        let mut scoped = HashSet::new();
        for scope in &self.scopes {
            if !cue_ids.contains(scope.cue_id.as_str()) {
                return Err(Error::Invariant(format!(
                    "sentence {sid}: scope refers to unknown cue {}",
                    scope.cue_id
                )));
            }
            if !scoped.insert(scope.cue_id.as_str()) {
                return Err(Error::Invariant(format!(
                    "sentence {sid}: cue {} has more than one scope",
                    scope.cue_id
                )));
            }
            check_indices(sid, &format!("scope of {}", scope.cue_id), &scope.word_indices, n)?;
        }
        Ok(())
    }
}

fn check_indices(sid: &str, what: &str, idx: &[usize], n: usize) -> Result<()> {
    if let Some(&i) = idx.iter().find(|&&i| i >= n) {
        return Err(Error::Invariant(format!(
            "sentence {sid}: {what} index {i} out of range (len {n})"
        )));
    }
    if idx.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invariant(format!(
            "sentence {sid}: {what} indices not strictly increasing"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub name: CorpusName,
    pub cue_kind: CueKind,
    pub sentences: Vec<AnnotatedSentence>,
}

impl Corpus {
    pub fn new(name: CorpusName, cue_kind: CueKind, sentences: Vec<AnnotatedSentence>) -> Result<Self> {
        let corpus = Corpus {
            name,
            cue_kind,
            sentences,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.sentences {
            if !seen.insert(s.sentence_id.as_str()) {
                return Err(Error::Invariant(format!("duplicate sentence id {}", s.sentence_id)));
            }
            s.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// On-disk corpus formats understood by [`load_corpus`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Canonical,
    Bioscope,
    Sfu,
    Columns,
    Sherlock,
}

impl fmt::Display for SourceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceFormat::Canonical => "canonical",
            SourceFormat::Bioscope => "bioscope",
            SourceFormat::Sfu => "sfu",
            SourceFormat::Columns => "columns",
            SourceFormat::Sherlock => "sherlock",
        })
    }
}

impl FromStr for SourceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "canonical" | "jsonl" => SourceFormat::Canonical,
            "bioscope" => SourceFormat::Bioscope,
            "sfu" => SourceFormat::Sfu,
            "columns" => SourceFormat::Columns,
            "sherlock" => SourceFormat::Sherlock,
            other => return Err(Error::Config(format!("unknown corpus format {other:?}"))),
        })
    }
}

/// Parse a corpus file. For the canonical format a name or cue kind in the
/// header wins over the arguments.
pub fn load_corpus(path: &std::path::Path, format: SourceFormat, cue_kind: CueKind, name: CorpusName) -> Result<Corpus> {
    let bytes = crate::io::read_file(path)?;
    match format {
        SourceFormat::Canonical => read_canonical_or(&bytes, name, cue_kind),
        SourceFormat::Bioscope => parse_inline_xml(&bytes, &XmlDialect::bioscope(), cue_kind, name),
        SourceFormat::Sfu => parse_inline_xml(&bytes, &XmlDialect::sfu(), cue_kind, name),
        SourceFormat::Columns => parse_column_format(&bytes, &ColumnLayout::default(), cue_kind, name),
        SourceFormat::Sherlock => parse_column_format(&bytes, &ColumnLayout::sherlock(), cue_kind, name),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentence_count: usize,
    pub cue_count: usize,
    pub multiword_cue_count: usize,
    pub scope_count: usize,
    /// cues-per-sentence → number of sentences
    pub cues_per_sentence: BTreeMap<usize, usize>,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut stats = CorpusStats {
        sentence_count: corpus.sentences.len(),
        ..Default::default()
    };
    for s in &corpus.sentences {
        stats.cue_count += s.cues.len();
        stats.multiword_cue_count += s.cues.iter().filter(|c| c.is_multiword()).count();
        stats.scope_count += s.scopes.len();
        *stats.cues_per_sentence.entry(s.cues.len()).or_default() += 1;
    }
    stats
}

/// Whitespace split with every punctuation character isolated as its own word.
/// Returns words with their byte ranges in `text`.
pub fn segment_words(text: &str) -> Vec<(String, Range<usize>)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let flush = |out: &mut Vec<(String, Range<usize>)>, start: &mut Option<usize>, end: usize| {
        if let Some(s) = start.take() {
            out.push((text[s..end].to_owned(), s..end));
        }
    };
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            flush(&mut out, &mut start, i);
        } else if is_punct(ch) {
            flush(&mut out, &mut start, i);
            out.push((ch.to_string(), i..i + ch.len_utf8()));
        } else if start.is_none() {
            start = Some(i);
        }
    }
    flush(&mut out, &mut start, text.len());
    out
}

fn is_punct(ch: char) -> bool {
    ch.is_ascii_punctuation()
        || matches!(ch, '\u{2010}'..='\u{2027}' | '\u{2030}'..='\u{205E}' | '«' | '»' | '¿' | '¡')
}
