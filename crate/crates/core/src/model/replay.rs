//! Replays per-token probabilities produced outside this crate.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TokenClassifier;
use crate::encoding::{Task, TaskInstance};
use crate::error::{Error, Result};
use crate::io::{from_jsonl, read_file, to_jsonl};
use crate::tokenize::{read_tokenized_jsonl, ProbTable, TokenizedInstance};

/// One line of the probability interchange file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbRecord {
    pub instance_id: String,
    pub class_order: Vec<u8>,
    pub probs: Vec<Vec<f64>>,
}

impl ProbRecord {
    pub fn new(instance_id: &str, task: Task, table: &ProbTable) -> Self {
        ProbRecord {
            instance_id: instance_id.to_owned(),
            class_order: task.class_order().to_vec(),
            probs: table.rows.rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

pub fn write_probability_jsonl(records: &[ProbRecord]) -> Result<Vec<u8>> {
    to_jsonl(records)
}

pub fn read_probability_jsonl(bytes: &[u8]) -> Result<Vec<ProbRecord>> {
    from_jsonl(bytes)
}

#[derive(Clone, Debug)]
pub struct ReplayBackend {
    pub task: Task,
    tables: HashMap<String, ProbTable>,
    tokens: HashMap<String, TokenizedInstance>,
}

impl ReplayBackend {
    /// Validate records against the task's class order and (when tokens are
    /// given) each instance's padded length.
    pub fn from_records(records: Vec<ProbRecord>, task: Task, tokens: Vec<TokenizedInstance>) -> Result<Self> {
        let tokens: HashMap<String, TokenizedInstance> =
            tokens.into_iter().map(|t| (t.instance_id.clone(), t)).collect();
        let mut tables = HashMap::with_capacity(records.len());
        for rec in records {
            if rec.class_order != task.class_order() {
                return Err(Error::Schema(format!(
                    "instance {}: class_order {:?} does not match {task} class_order {:?}",
                    rec.instance_id,
                    rec.class_order,
                    task.class_order()
                )));
            }
            let table = ProbTable::from_rows(&rec.probs)?;
            let max_len = tokens.get(&rec.instance_id).map_or(table.len(), |t| t.max_len());
            table
                .validate(task.num_classes(), max_len)
                .map_err(|e| Error::Schema(format!("instance {}: {e}", rec.instance_id)))?;
            if tables.insert(rec.instance_id.clone(), table).is_some() {
                return Err(Error::Schema(format!("duplicate instance {}", rec.instance_id)));
            }
        }
        Ok(ReplayBackend { task, tables, tokens })
    }

    pub fn load(probs: &Path, tokens: &Path, task: Task) -> Result<Self> {
        let records = read_probability_jsonl(&read_file(probs)?)?;
        let toks = read_tokenized_jsonl(&read_file(tokens)?)?;
        ReplayBackend::from_records(records, task, toks)
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn table(&self, instance_id: &str) -> Result<&ProbTable> {
        self.tables
            .get(instance_id)
            .ok_or_else(|| Error::Lookup(instance_id.to_owned()))
    }

    /// The stored tokenization for a word-level instance.
    pub fn tokenized(&self, instance: &TaskInstance) -> Result<TokenizedInstance> {
        let t = self
            .tokens
            .get(&instance.instance_id)
            .ok_or_else(|| Error::Lookup(instance.instance_id.clone()))?;
        if t.word_spans.len() != instance.words.len() {
            return Err(Error::Schema(format!(
                "instance {}: {} word spans for {} words",
                instance.instance_id,
                t.word_spans.len(),
                instance.words.len()
            )));
        }
        Ok(t.clone())
    }
}

impl TokenClassifier for ReplayBackend {
    fn task(&self) -> Task {
        self.task
    }

    fn probabilities(&self, instance: &TokenizedInstance) -> Result<ProbTable> {
        self.table(&instance.instance_id).cloned()
    }
}

/// Probability file without tokenization; word spans must come from elsewhere.
pub fn load_probability_file(path: &Path, task: Task) -> Result<ReplayBackend> {
    let records = read_probability_jsonl(&read_file(path)?)?;
    ReplayBackend::from_records(records, task, Vec::new())
}
