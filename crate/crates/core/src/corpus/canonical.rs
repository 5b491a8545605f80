//! JSON Lines interchange: a header line, then one sentence object per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotatedSentence, Corpus, CorpusName, CueKind};
use crate::error::{Error, Result};

pub const SCHEMA: &str = "scopeworks-corpus";
pub const VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<CorpusName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cue_kind: Option<CueKind>,
}

pub fn write_canonical<W: Write>(corpus: &Corpus, mut sink: W) -> Result<()> {
    corpus.validate()?;
    let header = Header {
        schema: SCHEMA.into(),
        version: VERSION,
        name: Some(corpus.name.clone()),
        cue_kind: Some(corpus.cue_kind),
    };
    let io = |e| Error::io("<canonical sink>", e);
    serde_json::to_writer(&mut sink, &header)?;
    sink.write_all(b"\n").map_err(io)?;
    for s in &corpus.sentences {
        serde_json::to_writer(&mut sink, s)?;
        sink.write_all(b"\n").map_err(io)?;
    }
    sink.flush().map_err(io)
}

pub fn read_canonical(bytes: &[u8]) -> Result<Corpus> {
    read_canonical_or(bytes, CorpusName::Custom("unnamed".into()), CueKind::Speculation)
}

/// Like [`read_canonical`], with fallbacks for a header lacking name or cue kind.
pub fn read_canonical_or(bytes: &[u8], name: CorpusName, cue_kind: CueKind) -> Result<Corpus> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Schema(format!("canonical corpus is not UTF-8: {e}")))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Schema("empty file: missing header line".into()))?;
    let header: Header = serde_json::from_str(first).map_err(|e| Error::Schema(format!("bad header: {e}")))?;
    if header.schema != SCHEMA {
        return Err(Error::Schema(format!("expected schema '{SCHEMA}', found '{}'", header.schema)));
    }
    if header.version != VERSION {
        return Err(Error::Version {
            schema: SCHEMA.into(),
            found: header.version,
            expected: VERSION,
        });
    }
    let mut sentences = Vec::new();
    for (i, line) in lines {
        let s: AnnotatedSentence = serde_json::from_str(line).map_err(|e| Error::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        sentences.push(s);
    }
    Corpus::new(
        header.name.unwrap_or(name),
        header.cue_kind.unwrap_or(cue_kind),
        sentences,
    )
}

pub fn read_canonical_file(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_canonical(&bytes)
}

pub fn write_canonical_file(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_canonical(corpus, &mut buf)?;
    crate::io::write_atomic(path.as_ref(), &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CueAnnotation, ScopeAnnotation};
    use proptest::prelude::*;

    fn sample() -> Corpus {
        Corpus::new(
            CorpusName::Sherlock,
            CueKind::Negation,
            vec![AnnotatedSentence {
                sentence_id: "s0".into(),
                words: vec!["I".into(), "am".into(), "not".into(), "sure".into()],
                cues: vec![CueAnnotation {
                    id: "c0".into(),
                    kind: CueKind::Negation,
                    word_indices: vec![2],
                }],
                scopes: vec![ScopeAnnotation {
                    cue_id: "c0".into(),
                    word_indices: vec![0, 1, 3],
                }],
            }],
        )
        .unwrap()
    }

    #[test]
    fn header_is_first_line() {
        let mut buf = Vec::new();
        write_canonical(&sample(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with(r#"{"schema":"scopeworks-corpus","version":1"#), "{first}");
        let second: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        let keys: Vec<&str> = second.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys.len(), 4);
        for k in ["sentence_id", "words", "cues", "scopes"] {
            assert!(keys.contains(&k));
        }
    }

    #[test]
    fn discontinuous_scope_survives() {
        let mut buf = Vec::new();
        write_canonical(&sample(), &mut buf).unwrap();
        let back = read_canonical(&buf).unwrap();
        assert_eq!(back.sentences[0].scopes[0].word_indices, vec![0, 1, 3]);
        assert_eq!(back, sample());
    }

    #[test]
    fn out_of_range_index_rejected() {
        let text = "{\"schema\":\"scopeworks-corpus\",\"version\":1}\n\
            {\"sentence_id\":\"a\",\"words\":[\"x\"],\"cues\":[{\"id\":\"c\",\"kind\":\"negation\",\"word_indices\":[3]}],\"scopes\":[]}\n";
        assert!(matches!(read_canonical(text.as_bytes()), Err(Error::Invariant(_))));
    }

    #[test]
    fn version_mismatch() {
        let text = "{\"schema\":\"scopeworks-corpus\",\"version\":2}\n";
        assert!(matches!(
            read_canonical(text.as_bytes()),
            Err(Error::Version { found: 2, expected: 1, .. })
        ));
    }

    fn arb_sentence(i: usize) -> impl Strategy<Value = AnnotatedSentence> {
        prop::collection::vec("[a-zA-Z]{1,8}", 1..12).prop_flat_map(move |words| {
            let n = words.len();
            (
                Just(words),
                prop::collection::btree_set(0..n, 1..=n.min(3)),
                prop::collection::btree_set(0..n, 0..=n),
                any::<bool>(),
            )
                .prop_map(move |(words, cue, scope, has_scope)| AnnotatedSentence {
                    sentence_id: format!("s{i}"),
                    words,
                    cues: vec![CueAnnotation {
                        id: "c".into(),
                        kind: CueKind::Speculation,
                        word_indices: cue.into_iter().collect(),
                    }],
                    scopes: if has_scope {
                        vec![ScopeAnnotation {
                            cue_id: "c".into(),
                            word_indices: scope.into_iter().collect(),
                        }]
                    } else {
                        vec![]
                    },
                })
        })
    }

    proptest! {
        #[test]
        fn round_trip(a in arb_sentence(0), b in arb_sentence(1)) {
            let c = Corpus::new(CorpusName::Custom("p".into()), CueKind::Speculation, vec![a, b]).unwrap();
            let mut buf = Vec::new();
            write_canonical(&c, &mut buf).unwrap();
            prop_assert_eq!(read_canonical(&buf).unwrap(), c);
        }

        #[test]
        fn segmentation_is_stable(a in arb_sentence(0)) {
            let joined = a.words.join(" ");
            let resplit: Vec<&str> = joined.split_whitespace().collect();
            prop_assert_eq!(resplit, a.words.iter().map(String::as_str).collect::<Vec<_>>());
        }
    }
}
