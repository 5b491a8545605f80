//! Word-level task instances: per-word cue labels, and one scope instance per
//! cue with a cue-class marker word inserted before the cue.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, CueAnnotation, CueKind};
use crate::error::{Error, Result};

/// Cue label alphabet.
pub const NORMAL_CUE: u8 = 1;
pub const MULTIWORD_CUE: u8 = 2;
pub const NOT_A_CUE: u8 = 3;
/// Only appears on padding after tokenization.
pub const CUE_PAD: u8 = 4;

/// Scope label alphabet.
pub const OUT_OF_SCOPE: u8 = 0;
pub const IN_SCOPE: u8 = 1;

/// Reserved marker words, one per cue class.
pub const MARKER_NORMAL: &str = "<token[1]>";
pub const MARKER_MULTIWORD: &str = "<token[2]>";

pub fn marker_for(cue: &CueAnnotation) -> &'static str {
    if cue.is_multiword() {
        MARKER_MULTIWORD
    } else {
        MARKER_NORMAL
    }
}

pub fn is_marker(word: &str) -> bool {
    word == MARKER_NORMAL || word == MARKER_MULTIWORD
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Cue,
    Scope,
}

impl Task {
    /// Model class order: position i of a probability row is label `class_order()[i]`.
    pub fn class_order(self) -> &'static [u8] {
        match self {
            Task::Cue => &[NORMAL_CUE, MULTIWORD_CUE, NOT_A_CUE, CUE_PAD],
            Task::Scope => &[OUT_OF_SCOPE, IN_SCOPE],
        }
    }

    pub fn num_classes(self) -> usize {
        self.class_order().len()
    }

    pub fn pad_label(self) -> u8 {
        match self {
            Task::Cue => CUE_PAD,
            Task::Scope => OUT_OF_SCOPE,
        }
    }

    /// Labels a real word may carry.
    pub fn word_alphabet(self) -> &'static [u8] {
        match self {
            Task::Cue => &[NORMAL_CUE, MULTIWORD_CUE, NOT_A_CUE],
            Task::Scope => &[OUT_OF_SCOPE, IN_SCOPE],
        }
    }

    pub fn class_index(self, label: u8) -> Option<usize> {
        self.class_order().iter().position(|&l| l == label)
    }

    pub fn label_of(self, class_index: usize) -> u8 {
        self.class_order()[class_index]
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Cue => "cue",
            Task::Scope => "scope",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cue" => Ok(Task::Cue),
            "scope" => Ok(Task::Scope),
            o => Err(Error::Input(format!("unknown task '{o}' (expected cue|scope)"))),
        }
    }
}

/// One training/evaluation unit for either task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub instance_id: String,
    pub task: Task,
    pub words: Vec<String>,
    pub labels: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cue_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub marker_positions: Vec<usize>,
}

impl TaskInstance {
    pub fn sentence_id(&self) -> &str {
        match &self.cue_id {
            Some(c) => self
                .instance_id
                .strip_suffix(c.as_str())
                .and_then(|s| s.strip_suffix('#'))
                .unwrap_or(&self.instance_id),
            None => &self.instance_id,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.words.len() != self.labels.len() {
            return Err(Error::Invariant(format!(
                "instance {}: {} words but {} labels",
                self.instance_id,
                self.words.len(),
                self.labels.len()
            )));
        }
        let alphabet = self.task.word_alphabet();
        if let Some(l) = self.labels.iter().find(|l| !alphabet.contains(l)) {
            return Err(Error::Invariant(format!(
                "instance {}: label {l} outside the {} alphabet",
                self.instance_id, self.task
            )));
        }
        if let Some(&p) = self.marker_positions.iter().find(|&&p| p >= self.words.len()) {
            return Err(Error::Invariant(format!(
                "instance {}: marker position {p} out of range",
                self.instance_id
            )));
        }
        Ok(())
    }

    pub fn is_marker_position(&self, i: usize) -> bool {
        self.marker_positions.contains(&i)
    }

    /// Indices of real (non-marker) words.
    pub fn real_word_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.words.len()).filter(|i| !self.is_marker_position(*i))
    }

    /// Words and labels with marker positions removed.
    pub fn strip_markers(&self) -> (Vec<String>, Vec<u8>) {
        self.real_word_indices()
            .map(|i| (self.words[i].clone(), self.labels[i]))
            .unzip()
    }
}

pub fn encode_cue_task(sentence: &AnnotatedSentence) -> Result<TaskInstance> {
    let mut labels = vec![NOT_A_CUE; sentence.words.len()];
    let mut owner: HashMap<usize, &str> = HashMap::new();
    for cue in &sentence.cues {
        let label = if cue.is_multiword() { MULTIWORD_CUE } else { NORMAL_CUE };
        for &i in &cue.word_indices {
            if let Some(other) = owner.insert(i, &cue.id) {
                return Err(Error::Encoding(format!(
                    "sentence {}: cues {other} and {} share word {i}",
                    sentence.sentence_id, cue.id
                )));
            }
            labels[i] = label;
        }
    }
    Ok(TaskInstance {
        instance_id: sentence.sentence_id.clone(),
        task: Task::Cue,
        words: sentence.words.clone(),
        labels,
        cue_id: None,
        marker_positions: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeOptions {
    /// Emit an all-out-of-scope instance for cues lacking a scope annotation
    /// instead of failing.
    pub allow_empty_scope: bool,
}

pub fn encode_scope_task(sentence: &AnnotatedSentence, opts: ScopeOptions) -> Result<Vec<TaskInstance>> {
    sentence
        .cues
        .iter()
        .map(|cue| {
            let scope: &[usize] = match sentence.scope_of(&cue.id) {
                Some(s) => &s.word_indices,
                None if opts.allow_empty_scope => &[],
                None => {
                    return Err(Error::Encoding(format!(
                        "sentence {}: cue {} has no scope annotation",
                        sentence.sentence_id, cue.id
                    )))
                }
            };
            let mut gold = vec![OUT_OF_SCOPE; sentence.words.len()];
            for &i in scope {
                gold[i] = IN_SCOPE;
            }
            let at = cue.word_indices[0];
            let mut words = sentence.words.clone();
            words.insert(at, marker_for(cue).to_owned());
            let mut labels = gold.clone();
            // The marker copies the label of the cue word it precedes.
            labels.insert(at, gold[at]);
            Ok(TaskInstance {
                instance_id: format!("{}#{}", sentence.sentence_id, cue.id),
                task: Task::Scope,
                words,
                labels,
                cue_id: Some(cue.id.clone()),
                marker_positions: vec![at],
            })
        })
        .collect()
}

/// Encode every sentence of a corpus for `task`.
pub fn encode_corpus(sentences: &[AnnotatedSentence], task: Task, opts: ScopeOptions) -> Result<Vec<TaskInstance>> {
    match task {
        Task::Cue => sentences.iter().map(encode_cue_task).collect(),
        Task::Scope => {
            let mut out = Vec::new();
            for s in sentences {
                out.extend(encode_scope_task(s, opts)?);
            }
            Ok(out)
        }
    }
}

/// Runs of label 2 become one multiword cue each; every label-1 word is its
/// own cue. Ids are `p0`, `p1`, … in sentence order.
pub fn decode_cue_predictions(word_labels: &[u8], kind: CueKind) -> Vec<CueAnnotation> {
    let mut spans: Vec<Vec<usize>> = Vec::new();
    let mut run: Vec<usize> = Vec::new();
    for (i, &l) in word_labels.iter().enumerate() {
        if l == MULTIWORD_CUE {
            run.push(i);
            continue;
        }
        if !run.is_empty() {
            spans.push(std::mem::take(&mut run));
        }
        if l == NORMAL_CUE {
            spans.push(vec![i]);
        }
    }
    if !run.is_empty() {
        spans.push(run);
    }
    spans
        .into_iter()
        .enumerate()
        .map(|(k, word_indices)| CueAnnotation {
            id: format!("p{k}"),
            kind,
            word_indices,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ScopeAnnotation;
    use proptest::prelude::*;

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|w| w.to_string()).collect()
    }

    fn example() -> AnnotatedSentence {
        AnnotatedSentence {
            sentence_id: "s1".into(),
            words: words(&["It", "might", "rain", "tomorrow"]),
            cues: vec![CueAnnotation {
                id: "c1".into(),
                kind: CueKind::Speculation,
                word_indices: vec![1],
            }],
            scopes: vec![ScopeAnnotation {
                cue_id: "c1".into(),
                word_indices: vec![2, 3],
            }],
        }
    }

    #[test]
    fn cue_labels_running_example() {
        assert_eq!(encode_cue_task(&example()).unwrap().labels, vec![3, 1, 3, 3]);
    }

    #[test]
    fn no_cues_all_three() {
        let s = AnnotatedSentence::unannotated("x", words(&["a", "b"]));
        assert_eq!(encode_cue_task(&s).unwrap().labels, vec![3, 3]);
    }

    #[test]
    fn multiword_cue_labels() {
        let mut s = AnnotatedSentence::unannotated("x", words(&["a", "b", "c", "d", "e"]));
        s.cues.push(CueAnnotation {
            id: "m".into(),
            kind: CueKind::Speculation,
            word_indices: vec![1, 2],
        });
        assert_eq!(encode_cue_task(&s).unwrap().labels, vec![3, 2, 2, 3, 3]);
    }

    #[test]
    fn overlapping_cues_named() {
        let mut s = AnnotatedSentence::unannotated("x", words(&["a", "b", "c"]));
        for (id, idx) in [("p", vec![0, 1]), ("q", vec![1])] {
            s.cues.push(CueAnnotation {
                id: id.into(),
                kind: CueKind::Negation,
                word_indices: idx,
            });
        }
        match encode_cue_task(&s).unwrap_err() {
            Error::Encoding(m) => assert!(m.contains('p') && m.contains('q')),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn scope_running_example() {
        let inst = encode_scope_task(&example(), ScopeOptions::default()).unwrap();
        assert_eq!(inst.len(), 1);
        let i = &inst[0];
        assert_eq!(i.words, words(&["It", MARKER_NORMAL, "might", "rain", "tomorrow"]));
        assert_eq!(i.labels, vec![0, 0, 0, 1, 1]);
        assert_eq!(i.marker_positions, vec![1]);
        assert_eq!(i.instance_id, "s1#c1");
        assert_eq!(i.sentence_id(), "s1");
        let (w, l) = i.strip_markers();
        assert_eq!(w, example().words);
        assert_eq!(l, vec![0, 0, 1, 1]);
    }

    #[test]
    fn scope_to_end_of_sentence() {
        let mut s = example();
        s.scopes[0].word_indices = vec![2, 3];
        s.words.push("again".into());
        s.scopes[0].word_indices.push(4);
        let i = &encode_scope_task(&s, ScopeOptions::default()).unwrap()[0];
        assert_eq!(&i.labels[3..], &[1, 1, 1]);
    }

    #[test]
    fn two_cue_sentence_gives_two_instances() {
        let mut s = example();
        s.words = words(&["It", "might", "rain", "or", "possibly", "snow"]);
        s.cues.push(CueAnnotation {
            id: "c2".into(),
            kind: CueKind::Speculation,
            word_indices: vec![4],
        });
        s.scopes.push(ScopeAnnotation {
            cue_id: "c2".into(),
            word_indices: vec![5],
        });
        let inst = encode_scope_task(&s, ScopeOptions::default()).unwrap();
        assert_eq!(inst.len(), 2);
        for i in &inst {
            assert_eq!(i.marker_positions.len(), 1);
            assert_eq!(i.strip_markers().0, s.words);
        }
        assert_eq!(inst[1].words[4], MARKER_NORMAL);
    }

    #[test]
    fn multiword_marker_once_before_first_word() {
        let mut s = AnnotatedSentence::unannotated("x", words(&["a", "b", "c", "d"]));
        s.cues.push(CueAnnotation {
            id: "m".into(),
            kind: CueKind::Speculation,
            word_indices: vec![1, 2],
        });
        s.scopes.push(ScopeAnnotation {
            cue_id: "m".into(),
            word_indices: vec![1, 2, 3],
        });
        let i = &encode_scope_task(&s, ScopeOptions::default()).unwrap()[0];
        assert_eq!(i.words, words(&["a", MARKER_MULTIWORD, "b", "c", "d"]));
        // marker inherits the label of "b"
        assert_eq!(i.labels, vec![0, 1, 1, 1, 1]);
    }

    #[test]
    fn missing_scope_needs_flag() {
        let mut s = example();
        s.scopes.clear();
        assert!(encode_scope_task(&s, ScopeOptions::default()).is_err());
        let i = encode_scope_task(&s, ScopeOptions { allow_empty_scope: true }).unwrap();
        assert!(i[0].labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn decode_examples() {
        let d = decode_cue_predictions(&[3, 1, 3, 3], CueKind::Speculation);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].word_indices, vec![1]);
        assert!(decode_cue_predictions(&[3, 3, 3], CueKind::Speculation).is_empty());
        let d = decode_cue_predictions(&[2, 2, 3, 2, 2], CueKind::Speculation);
        let idx: Vec<_> = d.iter().map(|c| c.word_indices.clone()).collect();
        assert_eq!(idx, vec![vec![0, 1], vec![3, 4]]);
    }

    fn arb_sentence() -> impl Strategy<Value = AnnotatedSentence> {
        // Non-overlapping, non-adjacent contiguous cues plus arbitrary scopes.
        (3usize..20)
            .prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 1usize..3, any::<u64>()), 0..4)))
            .prop_map(|(n, raw)| {
                let mut taken = vec![false; n];
                let mut s = AnnotatedSentence::unannotated("s", (0..n).map(|i| format!("w{i}")).collect());
                for (k, (start, len, bits)) in raw.into_iter().enumerate() {
                    let end = (start + len).min(n);
                    let lo = start.saturating_sub(1);
                    let hi = (end + 1).min(n);
                    if taken[lo..hi].iter().any(|&t| t) {
                        continue;
                    }
                    taken[start..end].iter_mut().for_each(|t| *t = true);
                    let id = format!("c{k}");
                    s.cues.push(CueAnnotation {
                        id: id.clone(),
                        kind: CueKind::Speculation,
                        word_indices: (start..end).collect(),
                    });
                    s.scopes.push(ScopeAnnotation {
                        cue_id: id,
                        word_indices: (0..n).filter(|i| bits >> (i % 64) & 1 == 1).collect(),
                    });
                }
                s.cues.sort_by_key(|c| c.word_indices[0]);
                s
            })
    }

    proptest! {
        #[test]
        fn encode_decode_consistent(s in arb_sentence()) {
            let labels = encode_cue_task(&s).unwrap().labels;
            prop_assert!(labels.iter().all(|l| [1, 2, 3].contains(l)));
            let decoded: Vec<Vec<usize>> = decode_cue_predictions(&labels, CueKind::Speculation)
                .into_iter().map(|c| c.word_indices).collect();
            let gold: Vec<Vec<usize>> = s.cues.iter().map(|c| c.word_indices.clone()).collect();
            prop_assert_eq!(decoded, gold);
        }

        #[test]
        fn marker_strip_recovers_gold(s in arb_sentence()) {
            let inst = encode_scope_task(&s, ScopeOptions::default()).unwrap();
            prop_assert_eq!(inst.len(), s.cues.len());
            for i in inst {
                prop_assert!(i.labels.iter().all(|&l| l <= 1));
                let (w, l) = i.strip_markers();
                prop_assert_eq!(&w, &s.words);
                let scope = s.scope_of(i.cue_id.as_deref().unwrap()).unwrap();
                let gold: Vec<u8> = (0..s.words.len()).map(|k| scope.word_indices.contains(&k) as u8).collect();
                prop_assert_eq!(l, gold);
            }
        }
    }
}
