use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{active_positions, fit, weighted_ce_sums, word_labels, tokenized_predictions, Adam, EpochModel, History, TokenClassifier, TrainConfig, Transformer};
use crate::encoding::{Task, TaskInstance};
use crate::error::Result;
use crate::eval::score_task;
use crate::tokenize::{tokenize_all, Aggregation, ProbTable, TokenizedInstance, WordPiece};
use crate::Execution;

/// A transformer together with the tokenizer it was trained with.
#[derive(Clone, Debug)]
pub struct TransformerTagger {
    pub task: Task,
    pub tokenizer: WordPiece,
    pub network: Transformer,
}

impl TokenClassifier for TransformerTagger {
    fn task(&self) -> Task {
        self.task
    }

    fn probabilities(&self, instance: &TokenizedInstance) -> Result<ProbTable> {
        self.network.forward(&instance.token_ids, &instance.pad_mask)
    }
}

/// Stateless 64-bit mixer for deriving per-step seeds.
pub(crate) fn mix(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Mini-batch Adam training of a [`TransformerTagger`].
///
/// Per-instance gradients inside a batch may be computed in parallel; they
/// are summed in batch order, so a fixed seed gives the same trajectory with
/// any thread count.
pub struct TransformerTrainer {
    tagger: TransformerTagger,
    adam: Adam,
    train: Vec<TokenizedInstance>,
    val: Vec<TokenizedInstance>,
    weights: Vec<f64>,
    cfg: TrainConfig,
    execution: Execution,
}

impl TransformerTrainer {
    pub fn new(
        tagger: TransformerTagger,
        train: &[TaskInstance],
        val: &[TaskInstance],
        cfg: &TrainConfig,
        execution: Execution,
    ) -> Result<Self> {
        let train = tokenize_all(train, &tagger.tokenizer, cfg.drop_overflow, execution)?;
        let val = tokenize_all(val, &tagger.tokenizer, cfg.drop_overflow, execution)?;
        Ok(TransformerTrainer {
            adam: Adam::new(tagger.network.params.len(), cfg.learning_rate),
            weights: cfg.weights(tagger.task),
            tagger,
            train,
            val,
            cfg: cfg.clone(),
            execution,
        })
    }

    pub fn run(mut self) -> Result<(TransformerTagger, History)> {
        let (max_epochs, patience) = (self.cfg.max_epochs, self.cfg.early_stop_patience);
        let history = fit(&mut self, max_epochs, patience)?;
        Ok((self.tagger, history))
    }

    fn instance_gradient(&self, inst: &TokenizedInstance, seed: u64) -> Result<(f64, f64, Vec<f64>)> {
        let task = self.tagger.task;
        let real = inst.real_len();
        let classes: Vec<usize> = inst.token_labels[..real]
            .iter()
            .map(|&l| task.class_index(l).expect("validated label"))
            .collect();
        let mask = (task == Task::Scope).then(|| &inst.pad_mask[..real]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        weighted_ce_gradient(
            &self.tagger.network,
            &inst.token_ids[..real],
            &classes,
            &self.weights,
            mask,
            Some(&mut rng),
        )
    }
}

/// Weighted cross-entropy of one sequence and its gradient, both unnormalized:
/// returns (Σ w·nll, Σ w, ∂(Σ w·nll)/∂params). Dropout is active when `rng`
/// is given.
pub fn weighted_ce_gradient(
    net: &Transformer,
    ids: &[u32],
    classes: &[usize],
    weights: &[f64],
    mask: Option<&[bool]>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, f64, Vec<f64>)> {
    let trace = net.trace(ids, rng)?;
    let (loss, wsum) = weighted_ce_sums(&trace.probs, classes, weights, mask)?;
    let mut dlogits = Array2::zeros(trace.probs.raw_dim());
    for (i, c, w) in active_positions(classes, weights, mask) {
        let mut row = dlogits.row_mut(i);
        row.scaled_add(w, &trace.probs.row(i));
        row[c] -= w;
    }
    let mut grad = vec![0.0; net.params.len()];
    net.backward(&trace, &dlogits, &mut grad);
    Ok((loss, wsum, grad))
}

impl EpochModel for TransformerTrainer {
    type Snapshot = Vec<f64>;

    fn train_epoch(&mut self, epoch: usize) -> Result<f64> {
        let seed = self.cfg.seed;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(&[seed, epoch as u64])));
        let mut total = 0.0;
        let mut total_w = 0.0;
        for (b, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let parts = self.execution.try_map(batch, |&i| {
                self.instance_gradient(&self.train[i], mix(&[seed, epoch as u64, b as u64, i as u64]))
            })?;
            let mut grad = vec![0.0; self.tagger.network.params.len()];
            let mut loss = 0.0;
            let mut wsum = 0.0;
            for (l, w, g) in parts {
                loss += l;
                wsum += w;
                for (a, x) in grad.iter_mut().zip(&g) {
                    *a += x;
                }
            }
            if wsum > 0.0 {
                grad.iter_mut().for_each(|g| *g /= wsum);
                self.adam.step(&mut self.tagger.network.params, &grad);
            }
            total += loss;
            total_w += wsum;
        }
        Ok(if total_w > 0.0 { total / total_w } else { 0.0 })
    }

    fn validate(&mut self) -> Result<Option<f64>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let method: Aggregation = self.cfg.early_stop_method;
        let preds = self.execution.try_map(&self.val, |inst| {
            let labels = word_labels(&self.tagger, inst, method)?;
            Ok::<_, crate::Error>(tokenized_predictions(inst, &labels))
        })?;
        Ok(Some(score_task(&preds, self.tagger.task)?.f1))
    }

    fn snapshot(&self) -> Vec<f64> {
        self.tagger.network.params.clone()
    }

    fn restore(&mut self, snapshot: Vec<f64>) {
        self.tagger.network.params = snapshot;
    }
}
