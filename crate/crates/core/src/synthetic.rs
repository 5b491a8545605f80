//! Rule-generated corpora for smoke tests and benchmarks.
//!
//! Cues come from a fixed lexicon. A cue's scope is the cue itself plus
//! every following word up to (not including) the next punctuation mark.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnnotatedSentence, Corpus, CorpusName, CueAnnotation, CueKind, ScopeAnnotation};
use crate::error::Result;

const FILLER: &[&str] = &[
    "the", "protein", "cells", "expression", "level", "gene", "binding", "patients", "results", "data",
    "activity", "receptor", "signal", "response", "factor", "tumor", "increase", "region", "pathway", "growth",
    "was", "were", "is", "are", "shows", "induces", "blocks", "in", "of", "with", "after", "during", "and",
    "human", "mouse", "high", "low", "early", "late", "strong",
];

const SPECULATION_CUES: &[&[&str]] = &[
    &["may"],
    &["might"],
    &["possibly"],
    &["suggest"],
    &["likely"],
    &["whether"],
    &["indicate", "that"],
    &["raises", "the", "possibility"],
];

const NEGATION_CUES: &[&[&str]] = &[
    &["not"],
    &["no"],
    &["never"],
    &["without"],
    &["absence"],
    &["rather", "than"],
    &["neither", "nor"],
];

pub fn cue_lexicon(kind: CueKind) -> &'static [&'static [&'static str]] {
    match kind {
        CueKind::Speculation => SPECULATION_CUES,
        CueKind::Negation => NEGATION_CUES,
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub sentences: usize,
    pub seed: u64,
    pub cue_kind: CueKind,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            sentences: 500,
            seed: 0,
            cue_kind: CueKind::Speculation,
        }
    }
}

/// One clause: filler, optionally a cue, more filler, then a punctuation mark.
fn clause(rng: &mut ChaCha8Rng, s: &mut AnnotatedSentence, cue: Option<(&[&str], CueKind)>, end: &str) {
    let fill = |rng: &mut ChaCha8Rng, s: &mut AnnotatedSentence, n: usize| {
        for _ in 0..n {
            s.words.push(FILLER.choose(rng).unwrap().to_string());
        }
    };
    let lead = rng.gen_range(1..=4);
    fill(rng, s, lead);
    if let Some((cue_words, kind)) = cue {
        let start = s.words.len();
        s.words.extend(cue_words.iter().map(|w| w.to_string()));
        let cue_end = s.words.len();
        let tail = rng.gen_range(1..=5);
        fill(rng, s, tail);
        let id = format!("c{}", s.cues.len() + 1);
        s.cues.push(CueAnnotation {
            id: id.clone(),
            kind,
            word_indices: (start..cue_end).collect(),
        });
        s.scopes.push(ScopeAnnotation {
            cue_id: id,
            word_indices: (start..s.words.len()).collect(),
        });
    } else {
        let tail = rng.gen_range(1..=5);
        fill(rng, s, tail);
    }
    s.words.push(end.to_string());
}

/// Deterministic corpus: about 30% of sentences carry no cue, 20% carry two
/// (in separate clauses), the rest one.
pub fn synthetic_corpus(spec: &SyntheticSpec) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lexicon = cue_lexicon(spec.cue_kind);
    let mut sentences = Vec::with_capacity(spec.sentences);
    for i in 0..spec.sentences {
        let mut s = AnnotatedSentence::unannotated(format!("syn{i}"), Vec::new());
        let roll: f64 = rng.gen();
        let clauses = rng.gen_range(1..=3usize);
        let cued: Vec<bool> = match roll {
            r if r < 0.3 => vec![false; clauses],
            r if r < 0.5 => {
                let mut v = vec![true, true];
                v.resize(clauses.max(2), false);
                v.shuffle(&mut rng);
                v
            }
            _ => {
                let mut v = vec![false; clauses];
                v[rng.gen_range(0..clauses)] = true;
                v
            }
        };
        let n = cued.len();
        for (k, has_cue) in cued.into_iter().enumerate() {
            let cue = has_cue.then(|| (*lexicon.choose(&mut rng).unwrap(), spec.cue_kind));
            clause(&mut rng, &mut s, cue, if k + 1 == n { "." } else { "," });
        }
        sentences.push(s);
    }
    Corpus::new(CorpusName::Custom("synthetic".into()), spec.cue_kind, sentences)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let spec = SyntheticSpec::default();
        let a = synthetic_corpus(&spec).unwrap();
        let b = synthetic_corpus(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
        a.validate().unwrap();
        let stats = crate::corpus::corpus_stats(&a);
        assert!(stats.multiword_cue_count > 0);
        assert!(stats.cues_per_sentence.get(&0).copied().unwrap_or(0) > 50);
        assert!(stats.cues_per_sentence.get(&2).copied().unwrap_or(0) > 50);
    }

    #[test]
    fn scope_runs_from_cue_to_punctuation() {
        let c = synthetic_corpus(&SyntheticSpec {
            sentences: 50,
            ..Default::default()
        })
        .unwrap();
        for s in &c.sentences {
            for cue in &s.cues {
                let scope = &s.scope_of(&cue.id).unwrap().word_indices;
                assert_eq!(scope[0], cue.word_indices[0]);
                let after = *scope.last().unwrap() + 1;
                assert!(matches!(s.words[after].as_str(), "," | "."));
            }
        }
    }
}
