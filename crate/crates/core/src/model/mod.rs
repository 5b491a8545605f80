//! Token classifier backends and training.

mod checkpoint;
mod fit;
mod loss;
mod optim;
mod replay;
mod tagger;
mod transformer;

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::encoding::{Task, TaskInstance, CUE_PAD, NOT_A_CUE};
use crate::error::{Error, Result};
use crate::eval::{WordLabeler, WordPredictions};
use crate::tokenize::{aggregate, Aggregation, ProbTable, TokenizedInstance, WordPieceBuilder};
use crate::Execution;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use fit::{fit, EpochModel, EpochRecord, History};
pub use loss::{active_positions, default_class_weights, weighted_ce_loss, weighted_ce_sums, PROB_FLOOR};
pub use optim::Adam;
pub use replay::{load_probability_file, read_probability_jsonl, write_probability_jsonl, ProbRecord, ReplayBackend};
pub use tagger::{weighted_ce_gradient, TransformerTagger, TransformerTrainer};
pub use transformer::{Layout, Trace, Transformer};

/// Encoder shape, independent of vocabulary and task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub n_hidden: usize,
    pub encoder_layers: usize,
    pub attention_heads: usize,
    pub ff_width: usize,
    pub dropout: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            n_hidden: 64,
            encoder_layers: 2,
            attention_heads: 4,
            ff_width: 128,
            dropout: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub vocab_size: usize,
    pub num_classes: usize,
    pub max_len: usize,
    #[serde(flatten)]
    pub arch: ArchConfig,
}

impl std::ops::Deref for ClassifierConfig {
    type Target = ArchConfig;

    fn deref(&self) -> &ArchConfig {
        &self.arch
    }
}

impl ClassifierConfig {
    pub fn new(vocab_size: usize, num_classes: usize, max_len: usize, arch: ArchConfig) -> Self {
        ClassifierConfig {
            vocab_size,
            num_classes,
            max_len,
            arch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.arch;
        if self.vocab_size == 0 || self.num_classes == 0 || self.max_len == 0 {
            return Err(Error::Config("vocab_size, num_classes and max_len must be positive".into()));
        }
        if a.n_hidden == 0 || a.attention_heads == 0 || a.n_hidden % a.attention_heads != 0 {
            return Err(Error::Config(format!(
                "n_hidden {} must be a positive multiple of attention_heads {}",
                a.n_hidden, a.attention_heads
            )));
        }
        if a.ff_width == 0 {
            return Err(Error::Config("ff_width must be positive".into()));
        }
        if !(0.0..1.0).contains(&a.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", a.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    /// Per class in `Task::class_order` order; task default when absent.
    pub class_weights: Option<Vec<f64>>,
    pub seed: u64,
    /// Word aggregation used for the validation F1 that drives early stopping.
    pub early_stop_method: Aggregation,
    /// Skip (with a log line) instances longer than max_len instead of failing.
    pub drop_overflow: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-5,
            batch_size: 8,
            max_epochs: 60,
            early_stop_patience: 6,
            class_weights: None,
            seed: 0,
            early_stop_method: Aggregation::Average,
            drop_overflow: false,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self, task: Task) -> Vec<f64> {
        self.class_weights.clone().unwrap_or_else(|| default_class_weights(task))
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("learning_rate, batch_size and max_epochs must be positive".into()));
        }
        if self.early_stop_patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} must be below max_epochs {}",
                self.early_stop_patience, self.max_epochs
            )));
        }
        let w = self.weights(task);
        if w.len() != task.num_classes() || w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::Config(format!(
                "class_weights must be {} non-negative numbers, got {w:?}",
                task.num_classes()
            )));
        }
        Ok(())
    }
}

/// Which classifier to train or replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Transformer {
        #[serde(default)]
        arch: ArchConfig,
        #[serde(default)]
        tokenizer: WordPieceBuilder,
    },
    /// Replays probabilities produced elsewhere; `tokens` supplies the word spans.
    Replay { probs: PathBuf, tokens: PathBuf },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Transformer {
            arch: ArchConfig::default(),
            tokenizer: WordPieceBuilder::default(),
        }
    }
}

/// Anything producing per-token probabilities for tokenized instances.
pub trait TokenClassifier: Sync {
    fn task(&self) -> Task;
    fn probabilities(&self, instance: &TokenizedInstance) -> Result<ProbTable>;
}

/// Word labels (full instance, markers included) from token probabilities.
/// On the cue task a real word whose winning class is the pad class is
/// labeled "not a cue".
pub fn word_labels(classifier: &dyn TokenClassifier, instance: &TokenizedInstance, method: Aggregation) -> Result<Vec<u8>> {
    let probs = classifier.probabilities(instance)?;
    let task = classifier.task();
    let classes = aggregate(method, &probs, &instance.word_spans)?;
    Ok(classes
        .into_iter()
        .map(|c| match task.label_of(c) {
            CUE_PAD if task == Task::Cue => NOT_A_CUE,
            l => l,
        })
        .collect())
}

/// Score-ready predictions from a tokenized instance (markers dropped).
pub fn tokenized_predictions(instance: &TokenizedInstance, predicted: &[u8]) -> WordPredictions {
    let gold = instance.word_labels();
    let keep = |i: &usize| !instance.marker_positions.contains(i);
    WordPredictions {
        instance_id: instance.instance_id.clone(),
        task: instance.task,
        predicted: (0..predicted.len()).filter(keep).map(|i| predicted[i]).collect(),
        gold: (0..gold.len()).filter(keep).map(|i| gold[i]).collect(),
    }
}

#[derive(Clone, Debug)]
pub enum Backend {
    Transformer(TransformerTagger),
    Replay(ReplayBackend),
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub backend: Backend,
    pub history: History,
    pub execution: Execution,
}

impl TrainedModel {
    pub fn task(&self) -> Task {
        match &self.backend {
            Backend::Transformer(t) => t.task,
            Backend::Replay(r) => r.task,
        }
    }

    pub fn classifier(&self) -> &dyn TokenClassifier {
        match &self.backend {
            Backend::Transformer(t) => t,
            Backend::Replay(r) => r,
        }
    }

    /// Tokenize an instance the way this backend expects.
    pub fn tokenize(&self, instance: &TaskInstance) -> Result<TokenizedInstance> {
        match &self.backend {
            Backend::Transformer(t) => crate::tokenize::tokenize_instance(instance, &t.tokenizer),
            Backend::Replay(r) => r.tokenized(instance),
        }
    }
}

impl WordLabeler for TrainedModel {
    fn label_words(&self, instances: &[TaskInstance], method: Aggregation) -> Result<Vec<WordPredictions>> {
        self.execution.try_map(instances, |inst| {
            let tok = self.tokenize(inst)?;
            let labels = word_labels(self.classifier(), &tok, method)?;
            WordPredictions::from_instance(inst, &labels)
        })
    }
}

/// Train a backend on word-level instances. Train and validation sets must be
/// disjoint by instance id.
pub fn train(
    backend: &BackendConfig,
    task: Task,
    train_set: &[TaskInstance],
    val_set: &[TaskInstance],
    cfg: &TrainConfig,
    execution: Execution,
) -> Result<TrainedModel> {
    if let BackendConfig::Replay { probs, tokens } = backend {
        let replay = ReplayBackend::load(probs, tokens, task)?;
        return Ok(TrainedModel {
            backend: Backend::Replay(replay),
            history: History::default(),
            execution,
        });
    }
    let BackendConfig::Transformer { arch, tokenizer } = backend else {
        unreachable!()
    };
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    cfg.validate(task)?;
    if let Some(i) = train_set.iter().chain(val_set).find(|i| i.task != task) {
        return Err(Error::Config(format!("instance {} is not a {task} instance", i.instance_id)));
    }
    let train_ids: HashSet<&str> = train_set.iter().map(|i| i.instance_id.as_str()).collect();
    if let Some(i) = val_set.iter().find(|i| train_ids.contains(i.instance_id.as_str())) {
        return Err(Error::Config(format!(
            "instance {} is in both training and validation sets",
            i.instance_id
        )));
    }
    let tok = tokenizer.build(train_set.iter().flat_map(|i| i.words.iter().map(String::as_str)));
    let config = ClassifierConfig::new(
        crate::tokenize::SubwordTokenizer::vocab_size(&tok),
        task.num_classes(),
        tokenizer.max_len,
        arch.clone(),
    );
    let network = Transformer::new(config, cfg.seed)?;
    let tagger = TransformerTagger {
        task,
        tokenizer: tok,
        network,
    };
    let (tagger, history) = TransformerTrainer::new(tagger, train_set, val_set, cfg, execution)?.run()?;
    Ok(TrainedModel {
        backend: Backend::Transformer(tagger),
        history,
        execution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_config_defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 3e-5);
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.max_epochs, 60);
        assert_eq!(c.early_stop_patience, 6);
        c.validate(Task::Cue).unwrap();
        assert_eq!(c.weights(Task::Cue), vec![1.0, 1.0, 1.0, 0.0]);
        assert_eq!(c.weights(Task::Scope), vec![1.0, 1.0]);
    }

    #[test]
    fn train_config_invariants() {
        let bad = TrainConfig {
            early_stop_patience: 60,
            ..Default::default()
        };
        assert!(bad.validate(Task::Cue).is_err());
        let bad = TrainConfig {
            class_weights: Some(vec![1.0, 1.0]),
            ..Default::default()
        };
        assert!(bad.validate(Task::Cue).is_err());
    }

    #[test]
    fn heads_must_divide_hidden() {
        let cfg = ClassifierConfig::new(
            10,
            2,
            8,
            ArchConfig {
                n_hidden: 10,
                attention_heads: 4,
                ..Default::default()
            },
        );
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_training_set_is_config_error() {
        let r = train(
            &BackendConfig::default(),
            Task::Cue,
            &[],
            &[],
            &TrainConfig::default(),
            Execution::Sequential,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn backend_config_from_toml() {
        let b: BackendConfig = toml::from_str("backend = \"transformer\"\n[arch]\nn_hidden = 32\n").unwrap();
        match b {
            BackendConfig::Transformer { arch, .. } => assert_eq!(arch.n_hidden, 32),
            _ => panic!(),
        }
        let r: BackendConfig = toml::from_str("backend = \"replay\"\nprobs = \"p.jsonl\"\ntokens = \"t.jsonl\"\n").unwrap();
        assert!(matches!(r, BackendConfig::Replay { .. }));
    }
}
