//! Word → subword alignment with padding and label propagation, plus the
//! reverse path from token probabilities to word labels.

mod aggregate;
mod wordpiece;

use serde::{Deserialize, Serialize};

use crate::encoding::{Task, TaskInstance};
use crate::error::{Error, Result};

pub use aggregate::{aggregate, aggregate_average, aggregate_first, argmax, Aggregation, ProbTable, ROW_SUM_TOLERANCE};
pub use wordpiece::{WordPiece, WordPieceBuilder, PAD, RESERVED, UNK};

/// Splits words into (token, id) pieces. Reserved symbols (markers, pad)
/// must come back as exactly one piece. Implementations are shared across
/// threads read-only.
pub trait SubwordTokenizer: Send + Sync {
    /// Never empty.
    fn tokenize_word(&self, word: &str) -> Vec<(String, u32)>;
    fn pad(&self) -> (&str, u32);
    fn vocab_size(&self) -> usize;
    fn max_len(&self) -> usize;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedInstance {
    pub instance_id: String,
    pub task: Task,
    pub tokens: Vec<String>,
    pub token_ids: Vec<u32>,
    pub token_labels: Vec<u8>,
    pub pad_mask: Vec<bool>,
    /// Half-open token ranges, one per word.
    pub word_spans: Vec<(usize, usize)>,
    pub marker_positions: Vec<usize>,
}

impl TokenizedInstance {
    /// Number of non-pad positions.
    pub fn real_len(&self) -> usize {
        self.word_spans.last().map_or(0, |s| s.1)
    }

    pub fn max_len(&self) -> usize {
        self.token_ids.len()
    }

    /// Gold word labels, read off each span's first token.
    pub fn word_labels(&self) -> Vec<u8> {
        self.word_spans.iter().map(|&(s, _)| self.token_labels[s]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.token_ids.len();
        let id = &self.instance_id;
        if self.tokens.len() != n || self.token_labels.len() != n || self.pad_mask.len() != n {
            return Err(Error::Invariant(format!("instance {id}: per-token arrays differ in length")));
        }
        let mut expected = 0;
        for &(s, e) in &self.word_spans {
            if s != expected || e <= s {
                return Err(Error::Invariant(format!("instance {id}: word spans do not tile the prefix")));
            }
            if self.token_labels[s..e].iter().any(|&l| l != self.token_labels[s]) {
                return Err(Error::Invariant(format!("instance {id}: label not constant within span")));
            }
            expected = e;
        }
        if expected > n {
            return Err(Error::Invariant(format!("instance {id}: spans exceed max_len")));
        }
        let pad_label = self.task.pad_label();
        for i in 0..n {
            let real = i < expected;
            if self.pad_mask[i] != real || (!real && self.token_labels[i] != pad_label) {
                return Err(Error::Invariant(format!("instance {id}: bad padding at {i}")));
            }
        }
        if let Some(&m) = self.marker_positions.iter().find(|&&m| m >= self.word_spans.len()) {
            return Err(Error::Invariant(format!("instance {id}: marker {m} out of range")));
        }
        Ok(())
    }
}

/// Tokenize, propagate each word label to all of its tokens and pad to
/// `max_len`. Overlong instances are an error, never truncated.
pub fn tokenize_instance(instance: &TaskInstance, tok: &dyn SubwordTokenizer) -> Result<TokenizedInstance> {
    instance.validate()?;
    let max_len = tok.max_len();
    let mut tokens = Vec::with_capacity(max_len);
    let mut token_ids = Vec::with_capacity(max_len);
    let mut token_labels = Vec::with_capacity(max_len);
    let mut word_spans = Vec::with_capacity(instance.words.len());
    for (word, &label) in instance.words.iter().zip(&instance.labels) {
        let pieces = tok.tokenize_word(word);
        if pieces.is_empty() {
            return Err(Error::Invariant(format!(
                "tokenizer produced no pieces for {word:?} in {}",
                instance.instance_id
            )));
        }
        let start = tokens.len();
        for (t, id) in pieces {
            tokens.push(t);
            token_ids.push(id);
            token_labels.push(label);
        }
        word_spans.push((start, tokens.len()));
    }
    let real = tokens.len();
    if real > max_len {
        return Err(Error::Overflow {
            instance_id: instance.instance_id.clone(),
            needed: real,
            max_len,
        });
    }
    let (pad_tok, pad_id) = tok.pad();
    let pad_label = instance.task.pad_label();
    tokens.resize(max_len, pad_tok.to_owned());
    token_ids.resize(max_len, pad_id);
    token_labels.resize(max_len, pad_label);
    let pad_mask = (0..max_len).map(|i| i < real).collect();
    Ok(TokenizedInstance {
        instance_id: instance.instance_id.clone(),
        task: instance.task,
        tokens,
        token_ids,
        token_labels,
        pad_mask,
        word_spans,
        marker_positions: instance.marker_positions.clone(),
    })
}

/// Tokenize a batch. With `drop_overflow`, overlong instances are logged and
/// skipped instead of failing the batch.
pub fn tokenize_all(
    instances: &[TaskInstance],
    tok: &dyn SubwordTokenizer,
    drop_overflow: bool,
    exec: crate::Execution,
) -> Result<Vec<TokenizedInstance>> {
    let results = exec.map(instances, |i| tokenize_instance(i, tok));
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(t) => out.push(t),
            Err(Error::Overflow {
                instance_id,
                needed,
                max_len,
            }) if drop_overflow => {
                log::warn!("dropping {instance_id}: {needed} tokens > max_len {max_len}");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Tokenized-instance interchange record (one JSON line each).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizedRecord {
    pub instance_id: String,
    pub tokens: Vec<String>,
    pub token_ids: Vec<u32>,
    pub word_spans: Vec<[usize; 2]>,
    pub pad_mask: Vec<bool>,
    pub labels: Vec<u8>,
    pub class_order: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub marker_positions: Vec<usize>,
}

impl From<&TokenizedInstance> for TokenizedRecord {
    fn from(t: &TokenizedInstance) -> Self {
        TokenizedRecord {
            instance_id: t.instance_id.clone(),
            tokens: t.tokens.clone(),
            token_ids: t.token_ids.clone(),
            word_spans: t.word_spans.iter().map(|&(s, e)| [s, e]).collect(),
            pad_mask: t.pad_mask.clone(),
            labels: t.token_labels.clone(),
            class_order: t.task.class_order().to_vec(),
            task: Some(t.task),
            marker_positions: t.marker_positions.clone(),
        }
    }
}

impl TokenizedRecord {
    pub fn into_instance(self) -> Result<TokenizedInstance> {
        let task = match self.task {
            Some(t) => t,
            None if self.class_order == Task::Cue.class_order() => Task::Cue,
            None if self.class_order == Task::Scope.class_order() => Task::Scope,
            None => {
                return Err(Error::Schema(format!(
                    "instance {}: unknown class_order {:?}",
                    self.instance_id, self.class_order
                )))
            }
        };
        if self.class_order != task.class_order() {
            return Err(Error::Schema(format!(
                "instance {}: class_order {:?} does not match task {task} {:?}",
                self.instance_id,
                self.class_order,
                task.class_order()
            )));
        }
        let inst = TokenizedInstance {
            instance_id: self.instance_id,
            task,
            tokens: self.tokens,
            token_ids: self.token_ids,
            token_labels: self.labels,
            pad_mask: self.pad_mask,
            word_spans: self.word_spans.into_iter().map(|[s, e]| (s, e)).collect(),
            marker_positions: self.marker_positions,
        };
        inst.validate()?;
        Ok(inst)
    }
}

pub fn write_tokenized_jsonl(instances: &[TokenizedInstance]) -> Result<Vec<u8>> {
    let recs: Vec<TokenizedRecord> = instances.iter().map(TokenizedRecord::from).collect();
    crate::io::to_jsonl(&recs)
}

pub fn read_tokenized_jsonl(bytes: &[u8]) -> Result<Vec<TokenizedInstance>> {
    crate::io::from_jsonl::<TokenizedRecord>(bytes)?
        .into_iter()
        .map(TokenizedRecord::into_instance)
        .collect()
}
