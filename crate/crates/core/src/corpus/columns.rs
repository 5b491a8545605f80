//! Column-per-token corpora (CD-SCO / Sherlock style): blank lines separate
//! sentences, one line per token, and a cue/scope column group per cue.

use log::info;

use super::{AnnotatedSentence, Corpus, CorpusName, CueAnnotation, CueKind, ScopeAnnotation};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnLayout {
    pub token_col: usize,
    /// Column where the first cue group starts.
    pub first_group_col: usize,
    pub group_width: usize,
    pub cue_offset: usize,
    pub scope_offset: usize,
    pub empty_cell: String,
    /// Cell value at `first_group_col` meaning "this sentence has no cues".
    pub no_cue_marker: Option<String>,
    /// Columns joined with '-' to form the sentence id; sequential ids otherwise.
    pub id_cols: Vec<usize>,
}

impl Default for ColumnLayout {
    /// Token column first, then (cue, scope) pairs.
    fn default() -> Self {
        ColumnLayout {
            token_col: 0,
            first_group_col: 1,
            group_width: 2,
            cue_offset: 0,
            scope_offset: 1,
            empty_cell: "_".into(),
            no_cue_marker: None,
            id_cols: Vec::new(),
        }
    }
}

impl ColumnLayout {
    /// *SEM 2012 Sherlock release: chapter, sentence, token, word, lemma, POS,
    /// syntax, then (cue, scope, event) triples or `***`.
    pub fn sherlock() -> Self {
        ColumnLayout {
            token_col: 3,
            first_group_col: 7,
            group_width: 3,
            cue_offset: 0,
            scope_offset: 1,
            empty_cell: "_".into(),
            no_cue_marker: Some("***".into()),
            id_cols: vec![0, 1],
        }
    }
}

pub fn parse_column_format(bytes: &[u8], layout: &ColumnLayout, cue_kind: CueKind, name: CorpusName) -> Result<Corpus> {
    parse_column_format_with_notes(bytes, layout, cue_kind, name).map(|(c, _)| c)
}

/// Like [`parse_column_format`], also returning provenance notes for affixal
/// cues that were widened to the whole word.
pub fn parse_column_format_with_notes(
    bytes: &[u8],
    layout: &ColumnLayout,
    cue_kind: CueKind,
    name: CorpusName,
) -> Result<(Corpus, Vec<String>)> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Format {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        message: "invalid UTF-8".into(),
    })?;
    let mut sentences = Vec::new();
    let mut notes = Vec::new();
    let mut block: Vec<(usize, Vec<&str>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !block.is_empty() {
                sentences.push(build_sentence(&block, layout, cue_kind, sentences.len(), &mut notes)?);
                block.clear();
            }
        } else {
            block.push((i + 1, line.split_whitespace().collect()));
        }
    }
    if !block.is_empty() {
        sentences.push(build_sentence(&block, layout, cue_kind, sentences.len(), &mut notes)?);
    }
    for n in &notes {
        info!("{n}");
    }
    Ok((Corpus::new(name, cue_kind, sentences)?, notes))
}

fn build_sentence(
    block: &[(usize, Vec<&str>)],
    layout: &ColumnLayout,
    cue_kind: CueKind,
    index: usize,
    notes: &mut Vec<String>,
) -> Result<AnnotatedSentence> {
    let (first_line, first) = &block[0];
    let width = first.len();
    for (line, cols) in block {
        if cols.len() != width {
            return Err(Error::Format {
                line: *line,
                message: format!("expected {width} columns, found {}", cols.len()),
            });
        }
    }
    if width <= layout.token_col {
        return Err(Error::Format {
            line: *first_line,
            message: format!("no token column (index {})", layout.token_col),
        });
    }
    let sentence_id = if layout.id_cols.is_empty() {
        format!("s{index}")
    } else {
        layout
            .id_cols
            .iter()
            .map(|&c| first.get(c).copied().unwrap_or("?"))
            .collect::<Vec<_>>()
            .join("-")
    };
    let words: Vec<String> = block.iter().map(|(_, c)| c[layout.token_col].to_owned()).collect();

    let no_cues = width <= layout.first_group_col
        || layout
            .no_cue_marker
            .as_deref()
            .is_some_and(|m| first[layout.first_group_col] == m);
    let mut cues = Vec::new();
    let mut scopes = Vec::new();
    if !no_cues {
        let extra = width - layout.first_group_col;
        if extra % layout.group_width != 0 {
            return Err(Error::Format {
                line: *first_line,
                message: format!(
                    "{extra} annotation columns is not a multiple of the group width {}",
                    layout.group_width
                ),
            });
        }
        for g in 0..extra / layout.group_width {
            let base = layout.first_group_col + g * layout.group_width;
            let cue_id = format!("c{g}");
            let mut cue_idx = Vec::new();
            let mut scope_idx = Vec::new();
            for (w, (line, cols)) in block.iter().enumerate() {
                let cue_cell = cols[base + layout.cue_offset];
                if cue_cell != layout.empty_cell {
                    if cue_cell != words[w] && words[w].contains(cue_cell) {
                        notes.push(format!(
                            "line {line}: sentence {sentence_id} cue {cue_id}: affix '{cue_cell}' of '{}' recorded as full-word cue",
                            words[w]
                        ));
                    }
                    cue_idx.push(w);
                }
                if cols[base + layout.scope_offset] != layout.empty_cell {
                    scope_idx.push(w);
                }
            }
            if cue_idx.is_empty() {
                notes.push(format!("sentence {sentence_id}: column group {g} has no cue tokens; skipped"));
                continue;
            }
            cues.push(CueAnnotation {
                id: cue_id.clone(),
                kind: cue_kind,
                word_indices: cue_idx,
            });
            scopes.push(ScopeAnnotation {
                cue_id,
                word_indices: scope_idx,
            });
        }
    }
    Ok(AnnotatedSentence {
        sentence_id,
        words,
        cues,
        scopes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<(Corpus, Vec<String>)> {
        parse_column_format_with_notes(s.as_bytes(), &ColumnLayout::default(), CueKind::Negation, CorpusName::Sherlock)
    }

    #[test]
    fn one_sentence_one_cue() {
        let (c, _) = parse("I _ _\ndid _ did\nnot not _\ngo _ go\n").unwrap();
        assert_eq!(c.sentences.len(), 1);
        let s = &c.sentences[0];
        assert_eq!(s.cues.len(), 1);
        assert_eq!(s.cues[0].word_indices, vec![2]);
        assert_eq!(s.scopes.len(), 1);
        assert_eq!(s.scopes[0].word_indices, vec![1, 3]);
    }

    #[test]
    fn empty_file() {
        let (c, _) = parse("").unwrap();
        assert!(c.is_empty());
        let (c, _) = parse("\n\n").unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn two_token_cue() {
        let (c, _) = parse("by _ _\nno no _\nmeans means _\nsure _ sure\n\nok _ _\n").unwrap();
        assert_eq!(c.sentences.len(), 2);
        assert_eq!(c.sentences[0].cues[0].word_indices, vec![1, 2]);
        assert!(c.sentences[1].cues.is_empty());
    }

    #[test]
    fn ragged_line_reports_line_number() {
        let err = parse("a _ _\nb _\n").unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err}");
    }

    #[test]
    fn affixal_cue_becomes_whole_word() {
        let (c, notes) = parse("an _ _\nunhappy un happy\nman _ man\n").unwrap();
        assert_eq!(c.sentences[0].cues[0].word_indices, vec![1]);
        assert_eq!(notes.len(), 1);
        assert!(notes[0].contains("unhappy"));
    }

    #[test]
    fn sherlock_layout() {
        let data = "\
baskervilles01\t0\t0\tI\tI\tPRP\t(S(NP*)\t_\tI\t_
baskervilles01\t0\t1\tam\tbe\tVBP\t(VP*\t_\tam\t_
baskervilles01\t0\t2\tnot\tnot\tRB\t*\tnot\t_\t_
baskervilles01\t0\t3\tsure\tsure\tJJ\t*)\t_\tsure\tsure

baskervilles01\t1\t0\tYes\tyes\tUH\t(S*)\t***
";
        let c = parse_column_format(data.as_bytes(), &ColumnLayout::sherlock(), CueKind::Negation, CorpusName::Sherlock)
            .unwrap();
        assert_eq!(c.sentences.len(), 2);
        assert_eq!(c.sentences[0].sentence_id, "baskervilles01-0");
        assert_eq!(c.sentences[0].words, ["I", "am", "not", "sure"]);
        assert_eq!(c.sentences[0].cues[0].word_indices, vec![2]);
        assert_eq!(c.sentences[0].scopes[0].word_indices, vec![0, 1, 3]);
        assert!(c.sentences[1].cues.is_empty());
    }
}
