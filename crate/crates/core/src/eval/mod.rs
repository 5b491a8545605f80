//! Word-level precision/recall/F1, inter-dataset matrices and run averaging.

mod report;

use serde::{Deserialize, Serialize};

use crate::encoding::{Task, TaskInstance, IN_SCOPE, MULTIWORD_CUE, NORMAL_CUE};
use crate::error::{Error, Result};
use crate::tokenize::Aggregation;

pub use report::{render_csv, render_table};

/// Predicted and gold labels for the real words of one instance (marker
/// positions already removed).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPredictions {
    pub instance_id: String,
    pub task: Task,
    pub predicted: Vec<u8>,
    pub gold: Vec<u8>,
}

impl WordPredictions {
    /// Build from full-instance word labels, dropping marker positions.
    pub fn from_instance(instance: &TaskInstance, predicted_all: &[u8]) -> Result<Self> {
        if predicted_all.len() != instance.words.len() {
            return Err(Error::Input(format!(
                "instance {}: {} predictions for {} words",
                instance.instance_id,
                predicted_all.len(),
                instance.words.len()
            )));
        }
        let (predicted, gold) = instance
            .real_word_indices()
            .map(|i| (predicted_all[i], instance.labels[i]))
            .unzip();
        Ok(WordPredictions {
            instance_id: instance.instance_id.clone(),
            task: instance.task,
            predicted,
            gold,
        })
    }
}

fn is_positive(task: Task, label: u8) -> bool {
    match task {
        Task::Cue => label == NORMAL_CUE || label == MULTIWORD_CUE,
        Task::Scope => label == IN_SCOPE,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: u8,
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of real words scored.
    pub words: u64,
    /// One-vs-rest scores for every word label.
    pub per_class: Vec<ClassScore>,
    /// Scope task only: share of instances whose predicted in-scope set equals
    /// the gold set exactly. Supplementary; not a word-level metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_scope_match: Option<f64>,
}

/// Micro-averaged binary P/R/F1 over every word of every instance. Cue
/// labels 1 and 2 both count as positive; for scopes, label 1 is positive.
pub fn score_task(preds: &[WordPredictions], task: Task) -> Result<Score> {
    let alphabet = task.word_alphabet();
    let mut counts = Counts::default();
    let mut per_class = vec![Counts::default(); alphabet.len()];
    let mut words = 0u64;
    let mut exact = 0u64;
    for p in preds {
        if p.task != task {
            return Err(Error::Input(format!("instance {} is a {} prediction", p.instance_id, p.task)));
        }
        if p.predicted.len() != p.gold.len() {
            return Err(Error::Input(format!("instance {}: length mismatch", p.instance_id)));
        }
        let mut all_match = true;
        for (&y, &g) in p.predicted.iter().zip(&p.gold) {
            let (Some(yi), Some(gi)) = (
                alphabet.iter().position(|&l| l == y),
                alphabet.iter().position(|&l| l == g),
            ) else {
                return Err(Error::Input(format!(
                    "instance {}: label outside the {task} alphabet {alphabet:?}",
                    p.instance_id
                )));
            };
            words += 1;
            let (py, pg) = (is_positive(task, y), is_positive(task, g));
            all_match &= py == pg;
            match (py, pg) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, true) => counts.fn_ += 1,
                _ => {}
            }
            if yi == gi {
                per_class[yi].tp += 1;
            } else {
                per_class[yi].fp += 1;
                per_class[gi].fn_ += 1;
            }
        }
        exact += all_match as u64;
    }
    Ok(Score {
        counts,
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        words,
        per_class: alphabet
            .iter()
            .zip(per_class)
            .map(|(&label, c)| ClassScore {
                label,
                counts: c,
                precision: c.precision(),
                recall: c.recall(),
                f1: c.f1(),
            })
            .collect(),
        exact_scope_match: (task == Task::Scope).then(|| ratio(exact, preds.len() as u64)),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub runs: usize,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub train_set: String,
    pub eval_set: String,
    pub method: Aggregation,
    pub class_order: Vec<u8>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    /// For averaged reports P/R/F1 hold the run means and counts are summed.
    #[serde(flatten)]
    pub score: Score,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<Spread>,
}

impl MetricsReport {
    pub fn new(task: Task, train_set: &str, eval_set: &str, method: Aggregation, seeds: Vec<u64>, score: Score) -> Self {
        MetricsReport {
            task,
            train_set: train_set.to_owned(),
            eval_set: eval_set.to_owned(),
            method,
            class_order: task.class_order().to_vec(),
            seeds,
            config_hash: None,
            score,
            spread: None,
        }
    }

    fn cell(&self) -> (Task, &str, &str, Aggregation) {
        (self.task, &self.train_set, &self.eval_set, self.method)
    }
}

/// Mean and sample std of P, R and F1 across runs of one cell.
pub fn average_runs(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Input("average_runs needs at least one report".into()))?;
    if let Some(r) = reports.iter().find(|r| r.cell() != first.cell()) {
        return Err(Error::Input(format!(
            "cannot average different cells: {:?} vs {:?}",
            first.cell(),
            r.cell()
        )));
    }
    let pick = |f: fn(&Score) -> f64| MeanStd::of(&reports.iter().map(|r| f(&r.score)).collect::<Vec<_>>());
    let (p, r, f) = (pick(|s| s.precision), pick(|s| s.recall), pick(|s| s.f1));
    let mut counts = Counts::default();
    let mut per_class = first.score.per_class.clone();
    for rep in reports {
        counts.tp += rep.score.counts.tp;
        counts.fp += rep.score.counts.fp;
        counts.fn_ += rep.score.counts.fn_;
    }
    for (k, pc) in per_class.iter_mut().enumerate() {
        let xs = |f: fn(&ClassScore) -> f64| MeanStd::of(&reports.iter().map(|r| f(&r.score.per_class[k])).collect::<Vec<_>>()).mean;
        pc.precision = xs(|c| c.precision);
        pc.recall = xs(|c| c.recall);
        pc.f1 = xs(|c| c.f1);
        pc.counts = reports.iter().fold(Counts::default(), |acc, r| {
            let c = r.score.per_class[k].counts;
            Counts {
                tp: acc.tp + c.tp,
                fp: acc.fp + c.fp,
                fn_: acc.fn_ + c.fn_,
            }
        });
    }
    let exact = first.score.exact_scope_match.map(|_| {
        MeanStd::of(&reports.iter().filter_map(|r| r.score.exact_scope_match).collect::<Vec<_>>()).mean
    });
    Ok(MetricsReport {
        seeds: reports.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
        score: Score {
            counts,
            precision: p.mean,
            recall: r.mean,
            f1: f.mean,
            words: reports.iter().map(|r| r.score.words).sum(),
            per_class,
            exact_scope_match: exact,
        },
        spread: Some(Spread {
            runs: reports.len(),
            precision: p,
            recall: r,
            f1: f,
        }),
        ..first.clone()
    })
}

/// Anything that can label the words of task instances.
pub trait WordLabeler: Sync {
    fn label_words(&self, instances: &[TaskInstance], method: Aggregation) -> Result<Vec<WordPredictions>>;
}

/// Score every model on every test split: rows are training sets, columns
/// evaluation sets, and the diagonal is same-dataset evaluation.
pub fn cross_matrix(
    models: &[(String, &dyn WordLabeler)],
    tests: &[(String, &[TaskInstance])],
    task: Task,
    method: Aggregation,
    seeds: &[u64],
) -> Result<Vec<Vec<MetricsReport>>> {
    for (name, _) in models {
        if !tests.iter().any(|(t, _)| t == name) {
            return Err(Error::Config(format!("no test split for dataset {name}")));
        }
    }
    models
        .iter()
        .map(|(train, model)| {
            tests
                .iter()
                .map(|(eval, instances)| {
                    let preds = model.label_words(instances, method)?;
                    let score = score_task(&preds, task)?;
                    Ok(MetricsReport::new(task, train, eval, method, seeds.to_vec(), score))
                })
                .collect()
        })
        .collect()
}
