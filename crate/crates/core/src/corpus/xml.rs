//! Inline-XML corpora (BioScope, SFU Review) where cue and scope elements
//! wrap the sentence text they annotate.

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use log::warn;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{segment_words, AnnotatedSentence, Corpus, CorpusName, CueAnnotation, CueKind, ScopeAnnotation};
use crate::error::{Error, Result};

/// How cue elements and scope elements point at each other.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CueLink {
    /// The cue names its scope: `<xcope id="X1"> … <cue ref="X1">`.
    CueRefersToScope {
        cue_ref_attr: String,
        scope_id_attr: String,
    },
    /// The cue has an id and the scope holds a child element naming it:
    /// `<cue ID="5">` … `<xcope><ref SRC="5"/> …`.
    ScopeRefersToCue {
        cue_id_attr: String,
        ref_tag: String,
        ref_attr: String,
    },
}

/// Element and attribute names for one XML corpus release.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct XmlDialect {
    pub document_tag: Option<String>,
    pub document_id_attr: Option<String>,
    pub sentence_tag: String,
    pub sentence_id_attr: Option<String>,
    pub cue_tag: String,
    pub cue_kind_attr: String,
    pub scope_tag: String,
    pub link: CueLink,
    /// Elements holding one pre-segmented word each. When empty, the raw
    /// sentence text is segmented with [`segment_words`].
    pub word_tags: Vec<String>,
}

impl XmlDialect {
    /// BioScope release layout: `Document`/`sentence`/`xcope id`/`cue type ref`.
    pub fn bioscope() -> Self {
        XmlDialect {
            document_tag: Some("Document".into()),
            document_id_attr: Some("id".into()),
            sentence_tag: "sentence".into(),
            sentence_id_attr: Some("id".into()),
            cue_tag: "cue".into(),
            cue_kind_attr: "type".into(),
            scope_tag: "xcope".into(),
            link: CueLink::CueRefersToScope {
                cue_ref_attr: "ref".into(),
                scope_id_attr: "id".into(),
            },
            word_tags: Vec::new(),
        }
    }

    /// SFU Review negation/speculation layout: `DOCUMENT`/`SENTENCE` with
    /// `W`/`C` word elements, `cue ID type` and `xcope` + `ref SRC`.
    pub fn sfu() -> Self {
        XmlDialect {
            document_tag: Some("DOCUMENT".into()),
            document_id_attr: None,
            sentence_tag: "SENTENCE".into(),
            sentence_id_attr: None,
            cue_tag: "cue".into(),
            cue_kind_attr: "type".into(),
            scope_tag: "xcope".into(),
            link: CueLink::ScopeRefersToCue {
                cue_id_attr: "ID".into(),
                ref_tag: "ref".into(),
                ref_attr: "SRC".into(),
            },
            word_tags: vec!["W".into(), "C".into()],
        }
    }
}

/// One sentence per sentence element; nested scopes become independent
/// annotations and cues of the other kind are dropped.
pub fn parse_inline_xml(
    bytes: &[u8],
    dialect: &XmlDialect,
    cue_kind: CueKind,
    name: CorpusName,
) -> Result<Corpus> {
    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().trim_text(false);
    reader.config_mut().check_end_names = true;

    let mut sentences = Vec::new();
    let mut doc_count = 0usize;
    let mut doc_id: Option<String> = None;
    let mut sent_in_doc = 0usize;
    let mut current: Option<SentenceBuilder> = None;
    let mut buf = Vec::new();

    let xml_err = |reader: &Reader<&[u8]>, e: quick_xml::Error| Error::Xml {
        offset: reader.error_position(),
        message: e.to_string(),
    };

    loop {
        let event = reader.read_event_into(&mut buf).map_err(|e| xml_err(&reader, e))?;
        match event {
            Event::Start(ref e) => {
                let tag = local_name(e);
                if let Some(b) = current.as_mut() {
                    b.open(e, &tag, dialect, &reader)?;
                } else if tag == dialect.sentence_tag {
                    let sid = sentence_id(e, dialect, doc_id.as_deref(), doc_count, sent_in_doc, &reader)?;
                    sent_in_doc += 1;
                    current = Some(SentenceBuilder::new(sid));
                } else if dialect.document_tag.as_deref() == Some(tag.as_str()) {
                    doc_count += 1;
                    sent_in_doc = 0;
                    doc_id = match &dialect.document_id_attr {
                        Some(a) => attr(e, a, &reader)?,
                        None => None,
                    }
                    .or_else(|| Some(format!("d{doc_count}")));
                }
            }
            Event::Empty(ref e) => {
                let tag = local_name(e);
                if let Some(b) = current.as_mut() {
                    b.empty(e, &tag, dialect, &reader)?;
                } else if tag == dialect.sentence_tag {
                    let sid = sentence_id(e, dialect, doc_id.as_deref(), doc_count, sent_in_doc, &reader)?;
                    sent_in_doc += 1;
                    sentences.push(AnnotatedSentence::unannotated(sid, Vec::new()));
                }
            }
            Event::End(ref e) => {
                let tag = String::from_utf8_lossy(e.local_name().as_ref()).into_owned();
                if current.is_some() {
                    if tag == dialect.sentence_tag && current.as_ref().is_some_and(|b| b.stack.is_empty()) {
                        let b = current.take().expect("checked");
                        sentences.push(b.finish(dialect, cue_kind)?);
                    } else if let Some(b) = current.as_mut() {
                        b.close();
                    }
                } else if dialect.document_tag.as_deref() == Some(tag.as_str()) {
                    doc_id = None;
                }
            }
            Event::Text(ref t) => {
                if let Some(b) = current.as_mut() {
                    let text = t.unescape().map_err(|e| xml_err(&reader, e))?;
                    b.text(&text, dialect);
                }
            }
            Event::CData(ref t) => {
                if let Some(b) = current.as_mut() {
                    b.text(&String::from_utf8_lossy(t), dialect);
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if let Some(b) = current {
        return Err(Error::Xml {
            offset: reader.buffer_position(),
            message: format!("unclosed sentence {}", b.id),
        });
    }
    Corpus::new(name, cue_kind, sentences)
}

fn local_name(e: &BytesStart<'_>) -> String {
    String::from_utf8_lossy(e.local_name().as_ref()).into_owned()
}

fn attr(e: &BytesStart<'_>, key: &str, reader: &Reader<&[u8]>) -> Result<Option<String>> {
    for a in e.attributes() {
        let a = a.map_err(|err| Error::Xml {
            offset: reader.buffer_position(),
            message: err.to_string(),
        })?;
        if a.key.local_name().as_ref() == key.as_bytes() {
            let v = a.unescape_value().map_err(|err| Error::Xml {
                offset: reader.buffer_position(),
                message: err.to_string(),
            })?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

fn sentence_id(
    e: &BytesStart<'_>,
    dialect: &XmlDialect,
    doc_id: Option<&str>,
    doc_count: usize,
    index: usize,
    reader: &Reader<&[u8]>,
) -> Result<String> {
    let own = match &dialect.sentence_id_attr {
        Some(a) => attr(e, a, reader)?,
        None => None,
    };
    Ok(match (doc_id, own) {
        (Some(d), Some(s)) => format!("{d}/{s}"),
        (None, Some(s)) => s,
        (Some(d), None) => format!("{d}/s{index}"),
        (None, None) => format!("d{doc_count}/s{index}"),
    })
}

enum Open {
    Cue(usize),
    Scope(usize),
    Word,
    Other,
}

struct CueSpan {
    key: String,
    kind: Option<CueKind>,
    range: Range<usize>,
}

struct ScopeSpan {
    target: Option<String>,
    range: Range<usize>,
}

struct SentenceBuilder {
    id: String,
    text: String,
    cues: Vec<CueSpan>,
    scopes: Vec<ScopeSpan>,
    stack: Vec<Open>,
    in_word: usize,
}

impl SentenceBuilder {
    fn new(id: String) -> Self {
        SentenceBuilder {
            id,
            text: String::new(),
            cues: Vec::new(),
            scopes: Vec::new(),
            stack: Vec::new(),
            in_word: 0,
        }
    }

    fn open(&mut self, e: &BytesStart<'_>, tag: &str, d: &XmlDialect, reader: &Reader<&[u8]>) -> Result<()> {
        let pos = self.text.len();
        let open = if tag == d.cue_tag {
            let key_attr = match &d.link {
                CueLink::CueRefersToScope { cue_ref_attr, .. } => cue_ref_attr,
                CueLink::ScopeRefersToCue { cue_id_attr, .. } => cue_id_attr,
            };
            let key = attr(e, key_attr, reader)?.ok_or_else(|| {
                Error::Structure(format!("cue in sentence {} lacks attribute '{key_attr}'", self.id))
            })?;
            let kind = attr(e, &d.cue_kind_attr, reader)?.and_then(|k| k.parse().ok());
            self.cues.push(CueSpan {
                key,
                kind,
                range: pos..pos,
            });
            Open::Cue(self.cues.len() - 1)
        } else if tag == d.scope_tag {
            let target = match &d.link {
                CueLink::CueRefersToScope { scope_id_attr, .. } => attr(e, scope_id_attr, reader)?,
                CueLink::ScopeRefersToCue { .. } => None,
            };
            self.scopes.push(ScopeSpan {
                target,
                range: pos..pos,
            });
            Open::Scope(self.scopes.len() - 1)
        } else if d.word_tags.iter().any(|w| w == tag) {
            self.in_word += 1;
            self.text.push(' ');
            Open::Word
        } else {
            self.link_ref(e, tag, d, reader)?;
            Open::Other
        };
        self.stack.push(open);
        Ok(())
    }

    fn empty(&mut self, e: &BytesStart<'_>, tag: &str, d: &XmlDialect, reader: &Reader<&[u8]>) -> Result<()> {
        self.link_ref(e, tag, d, reader)
    }

    fn link_ref(&mut self, e: &BytesStart<'_>, tag: &str, d: &XmlDialect, reader: &Reader<&[u8]>) -> Result<()> {
        if let CueLink::ScopeRefersToCue { ref_tag, ref_attr, .. } = &d.link {
            if tag == ref_tag {
                let target = attr(e, ref_attr, reader)?;
                let innermost = self.stack.iter().rev().find_map(|o| match o {
                    Open::Scope(i) => Some(*i),
                    _ => None,
                });
                match innermost {
                    Some(i) => self.scopes[i].target = target,
                    None => warn!("sentence {}: <{tag}> outside any scope element", self.id),
                }
            }
        }
        Ok(())
    }

    fn close(&mut self) {
        let pos = self.text.len();
        match self.stack.pop() {
            Some(Open::Cue(i)) => self.cues[i].range.end = pos,
            Some(Open::Scope(i)) => self.scopes[i].range.end = pos,
            Some(Open::Word) => {
                self.in_word -= 1;
                self.text.push(' ');
            }
            _ => {}
        }
    }

    fn text(&mut self, t: &str, d: &XmlDialect) {
        if d.word_tags.is_empty() || self.in_word > 0 {
            self.text.push_str(t);
        }
    }

    fn finish(self, d: &XmlDialect, cue_kind: CueKind) -> Result<AnnotatedSentence> {
        let words: Vec<(String, Range<usize>)> = if d.word_tags.is_empty() {
            segment_words(&self.text)
        } else {
            whitespace_words(&self.text)
        };
        let covered = |r: &Range<usize>| -> Vec<usize> {
            words
                .iter()
                .enumerate()
                .filter(|(_, (_, w))| w.start < r.end && w.end > r.start)
                .map(|(i, _)| i)
                .collect()
        };

        // Merge cue elements sharing a key (discontinuous / multiword cues).
        let mut order: Vec<String> = Vec::new();
        let mut cue_words: HashMap<String, (Option<CueKind>, Vec<usize>)> = HashMap::new();
        for span in &self.cues {
            let entry = cue_words.entry(span.key.clone()).or_insert_with(|| {
                order.push(span.key.clone());
                (span.kind, Vec::new())
            });
            if entry.0.is_none() {
                entry.0 = span.kind;
            }
            entry.1.extend(covered(&span.range));
        }
        let all_keys: HashSet<&str> = order.iter().map(String::as_str).collect();

        let mut scope_words: HashMap<String, Vec<usize>> = HashMap::new();
        for span in &self.scopes {
            let Some(target) = &span.target else {
                warn!("sentence {}: scope element without a link id ignored", self.id);
                continue;
            };
            if matches!(d.link, CueLink::ScopeRefersToCue { .. }) && !all_keys.contains(target.as_str()) {
                return Err(Error::Structure(format!(
                    "sentence {}: scope refers to missing cue {target}",
                    self.id
                )));
            }
            scope_words.entry(target.clone()).or_default().extend(covered(&span.range));
        }

        let mut cues = Vec::new();
        let mut scopes = Vec::new();
        for key in order {
            let (kind, mut idx) = cue_words.remove(&key).expect("key recorded");
            if kind != Some(cue_kind) {
                continue;
            }
            idx.sort_unstable();
            idx.dedup();
            if idx.is_empty() {
                warn!("sentence {}: cue {key} covers no words; dropped", self.id);
                continue;
            }
            let scope = scope_words.get(&key);
            if scope.is_none() && matches!(d.link, CueLink::CueRefersToScope { .. }) {
                return Err(Error::Structure(format!(
                    "sentence {}: cue {key} references missing scope",
                    self.id
                )));
            }
            if let Some(s) = scope {
                let mut s = s.clone();
                s.sort_unstable();
                s.dedup();
                scopes.push(ScopeAnnotation {
                    cue_id: key.clone(),
                    word_indices: s,
                });
            }
            cues.push(CueAnnotation {
                id: key,
                kind: cue_kind,
                word_indices: idx,
            });
        }
        Ok(AnnotatedSentence {
            sentence_id: self.id,
            words: words.into_iter().map(|(w, _)| w).collect(),
            cues,
            scopes,
        })
    }
}

fn whitespace_words(text: &str) -> Vec<(String, Range<usize>)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        match (ch.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push((text[s..i].to_owned(), s..i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((text[s..].to_owned(), s..text.len()));
    }
    out
}
