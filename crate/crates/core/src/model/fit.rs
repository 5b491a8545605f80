//! Epoch loop with early stopping on a validation score.

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// A model the epoch loop can drive.
pub trait EpochModel {
    type Snapshot;

    /// Train one epoch (1-based) and return its mean loss.
    fn train_epoch(&mut self, epoch: usize) -> Result<f64>;
    /// Validation score; higher is better. `None` when there is no validation data.
    fn validate(&mut self) -> Result<Option<f64>>;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: Self::Snapshot);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_f1: Option<f64>,
    pub stopped_early: bool,
}

/// Runs up to `max_epochs`, stopping once `patience` consecutive epochs fail
/// to improve strictly on the best validation score. The model is left
/// holding the best epoch's parameters (the last epoch's when there is no
/// validation data).
pub fn fit<M: EpochModel>(model: &mut M, max_epochs: usize, patience: usize) -> Result<History> {
    let mut history = History::default();
    let mut best: Option<(f64, M::Snapshot)> = None;
    let mut since_best = 0;
    for epoch in 1..=max_epochs {
        let train_loss = model.train_epoch(epoch)?;
        let val = model.validate()?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_f1: val,
        });
        let Some(score) = val else {
            history.best_epoch = epoch;
            continue;
        };
        if best.as_ref().map_or(true, |(b, _)| score > *b) {
            best = Some((score, model.snapshot()));
            history.best_epoch = epoch;
            history.best_val_f1 = Some(score);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= patience {
                history.stopped_early = epoch < max_epochs;
                break;
            }
        }
    }
    if let Some((_, snap)) = best {
        model.restore(snap);
    }
    Ok(history)
}
