//! Splits, single-dataset and joint protocols, run repetition and report bundles.

mod split;

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{load_corpus, AnnotatedSentence, CorpusName, CueKind, SourceFormat};
use crate::encoding::{encode_corpus, ScopeOptions, Task, TaskInstance};
use crate::error::{Error, Result, StageExt};
use crate::eval::{average_runs, cross_matrix, render_csv, render_table, MetricsReport, WordLabeler};
use crate::io::write_atomic;
use crate::model::{train, BackendConfig, History, TrainConfig, TrainedModel};
use crate::tokenize::Aggregation;
use crate::Execution;

pub use split::{split, split_key, Split, SplitSpec};

/// Environment variable that overrides `output_dir`.
pub const ARTIFACTS_ENV: &str = "SCOPEWORKS_ARTIFACTS_DIR";

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Single,
    Joint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "canonical")]
    pub format: SourceFormat,
    #[serde(default = "speculation")]
    pub cue_kind: CueKind,
}

fn canonical() -> SourceFormat {
    SourceFormat::Canonical
}
fn speculation() -> CueKind {
    CueKind::Speculation
}
fn one() -> usize {
    1
}
fn all_methods() -> Vec<Aggregation> {
    vec![Aggregation::Average, Aggregation::FirstToken]
}
fn artifacts() -> PathBuf {
    PathBuf::from("artifacts")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "all_methods")]
    pub methods: Vec<Aggregation>,
    #[serde(default)]
    pub allow_empty_scope: bool,
    #[serde(default = "artifacts")]
    pub output_dir: PathBuf,
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub model: BackendConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a TOML file; relative dataset and output paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = crate::io::read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut cfg.datasets {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let BackendConfig::Replay { probs, tokens } = &mut cfg.model {
            for p in [probs, tokens] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.datasets.is_empty() {
            return Err(Error::Config("no datasets configured".into()));
        }
        if self.mode == Mode::Joint && self.datasets.len() < 2 {
            return Err(Error::Config("joint mode needs at least two datasets".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no aggregation methods configured".into()));
        }
        let mut names = HashSet::new();
        if let Some(d) = self.datasets.iter().find(|d| !names.insert(&d.name)) {
            return Err(Error::Config(format!("dataset name {} used twice", d.name)));
        }
        self.split.validate()?;
        self.train.validate(self.task)
    }

    /// Output directory after applying the environment override.
    pub fn effective_output_dir(&self) -> PathBuf {
        std::env::var_os(ARTIFACTS_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone())
    }

    /// SHA-256 over the JSON form of everything that affects results
    /// (the output directory is excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|r| self.base_seed + r).collect()
    }
}

/// Prefix sentence ids with the dataset name.
pub fn namespaced(name: &str, sentences: &[AnnotatedSentence]) -> Vec<AnnotatedSentence> {
    sentences
        .iter()
        .map(|s| AnnotatedSentence {
            sentence_id: format!("{name}:{}", s.sentence_id),
            ..s.clone()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub train: Vec<AnnotatedSentence>,
    pub val: Vec<AnnotatedSentence>,
    pub tests: Vec<(String, Vec<AnnotatedSentence>)>,
}

/// Merge trains and validation sets (shuffled under `seed`), keep each test
/// set separate. Ids are namespaced by dataset name; a collision is an error.
pub fn prepare_joint(datasets: &[(String, Split)], seed: u64) -> Result<Joint> {
    let mut seen = HashSet::new();
    let mut joint = Joint {
        train: Vec::new(),
        val: Vec::new(),
        tests: Vec::new(),
    };
    for (name, s) in datasets {
        let (train, val, test) = (namespaced(name, &s.train), namespaced(name, &s.val), namespaced(name, &s.test));
        for sent in train.iter().chain(&val).chain(&test) {
            if !seen.insert(sent.sentence_id.clone()) {
                return Err(Error::Input(format!("sentence id collision: {}", sent.sentence_id)));
            }
        }
        joint.train.extend(train);
        joint.val.extend(val);
        joint.tests.push((name.clone(), test));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    joint.train.shuffle(&mut rng);
    joint.val.shuffle(&mut rng);
    Ok(joint)
}

/// Fails if any test sentence also appears in a training or validation set.
pub fn check_leakage(fit_sets: &[&[TaskInstance]], test_sets: &[&[TaskInstance]]) -> Result<()> {
    let seen: HashSet<&str> = fit_sets.iter().flat_map(|s| s.iter().map(|i| i.sentence_id())).collect();
    for t in test_sets {
        if let Some(i) = t.iter().find(|i| seen.contains(i.sentence_id())) {
            return Err(Error::Invariant(format!(
                "sentence {} is in both a fit set and a test set",
                i.sentence_id()
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub sentences: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub version: String,
    pub task: Task,
    pub mode: Mode,
    pub class_order: Vec<u8>,
    pub seeds: Vec<u64>,
    pub split_seed: u64,
    pub split_ratios: [f64; 3],
    pub split_convention: String,
    pub optimizer: String,
    pub datasets: Vec<DatasetSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub run: usize,
    pub seed: u64,
    pub train_set: String,
    pub history: History,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub provenance: Provenance,
    pub per_run: Vec<MetricsReport>,
    pub averaged: Vec<MetricsReport>,
    pub histories: Vec<RunHistory>,
}

struct Dataset {
    name: String,
    train: Vec<TaskInstance>,
    val: Vec<TaskInstance>,
    test: Vec<TaskInstance>,
}

fn encode(sentences: &[AnnotatedSentence], cfg: &ExperimentConfig) -> Result<Vec<TaskInstance>> {
    encode_corpus(
        sentences,
        cfg.task,
        ScopeOptions {
            allow_empty_scope: cfg.allow_empty_scope,
        },
    )
}

fn json_pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Drop instances the model cannot tokenize within max_len, if allowed.
fn evaluable(model: &TrainedModel, set: &[TaskInstance], drop_overflow: bool) -> Vec<TaskInstance> {
    if !drop_overflow {
        return set.to_vec();
    }
    set.iter()
        .filter(|i| match model.tokenize(i) {
            Err(Error::Overflow { .. }) => {
                warn!("dropping {} from evaluation: longer than max_len", i.instance_id);
                false
            }
            _ => true,
        })
        .cloned()
        .collect()
}

/// Execute every run of the experiment. When `out` is given, each run's
/// reports are written as soon as the run completes, so a later failure
/// leaves earlier runs on disk.
pub fn run(cfg: &ExperimentConfig, out: Option<&Path>, execution: Execution) -> Result<Bundle> {
    cfg.validate()?;
    let started = unix_now();
    let config_hash = cfg.hash();

    let mut splits = Vec::with_capacity(cfg.datasets.len());
    for d in &cfg.datasets {
        let corpus = load_corpus(&d.path, d.format, d.cue_kind, CorpusName::from(d.name.as_str())).stage("load")?;
        let s = split(&corpus, &cfg.split).stage("split")?;
        info!("{}: {} sentences, split {:?}", d.name, corpus.len(), s.sizes());
        splits.push((d.name.clone(), s));
    }
    let summaries = splits
        .iter()
        .map(|(name, s)| DatasetSummary {
            name: name.clone(),
            sentences: s.train.len() + s.val.len() + s.test.len(),
            train: s.train.len(),
            val: s.val.len(),
            test: s.test.len(),
        })
        .collect();
    let provenance = Provenance {
        config_hash: config_hash.clone(),
        version: VERSION.into(),
        task: cfg.task,
        mode: cfg.mode,
        class_order: cfg.task.class_order().to_vec(),
        seeds: cfg.seeds(),
        split_seed: cfg.split.seed,
        split_ratios: cfg.split.ratios,
        split_convention: "chacha20 shuffle keyed by sha256(dataset name, split seed), contiguous train/val/test slices".into(),
        optimizer: crate::model::Adam::DESCRIPTION.into(),
        datasets: summaries,
    };
    if let Some(dir) = out {
        write_atomic(&dir.join("provenance.json"), &json_pretty(&provenance)?)?;
        write_atomic(
            &dir.join("metadata.json"),
            &json_pretty(&serde_json::json!({ "started_unix": started }))?,
        )?;
    }

    let datasets: Vec<Dataset> = splits
        .iter()
        .map(|(name, s)| {
            Ok(Dataset {
                name: name.clone(),
                train: encode(&namespaced(name, &s.train), cfg)?,
                val: encode(&namespaced(name, &s.val), cfg)?,
                test: encode(&namespaced(name, &s.test), cfg)?,
            })
        })
        .collect::<Result<_>>()
        .stage("encode")?;
    let tests: Vec<&[TaskInstance]> = datasets.iter().map(|d| d.test.as_slice()).collect();
    let fits: Vec<&[TaskInstance]> = datasets
        .iter()
        .flat_map(|d| [d.train.as_slice(), d.val.as_slice()])
        .collect();
    check_leakage(&fits, &tests).stage("split")?;

    let mut per_run = Vec::new();
    let mut histories = Vec::new();
    for (r, seed) in cfg.seeds().into_iter().enumerate() {
        let train_cfg = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let mut models: Vec<(String, TrainedModel)> = Vec::new();
        match cfg.mode {
            Mode::Single => {
                for d in &datasets {
                    let m = train(&cfg.model, cfg.task, &d.train, &d.val, &train_cfg, execution).stage("train")?;
                    models.push((d.name.clone(), m));
                }
            }
            Mode::Joint => {
                let joint = prepare_joint(&splits, seed).stage("split")?;
                let (jt, jv) = (encode(&joint.train, cfg), encode(&joint.val, cfg));
                let (jt, jv) = (jt.stage("encode")?, jv.stage("encode")?);
                check_leakage(&[&jt, &jv], &tests).stage("split")?;
                let name = format!("joint({})", cfg.datasets.iter().map(|d| d.name.as_str()).collect::<Vec<_>>().join("+"));
                let m = train(&cfg.model, cfg.task, &jt, &jv, &train_cfg, execution).stage("train")?;
                models.push((name, m));
            }
        }
        let mut run_reports = Vec::new();
        for (train_name, model) in &models {
            let test_sets: Vec<(String, Vec<TaskInstance>)> = datasets
                .iter()
                .map(|d| (d.name.clone(), evaluable(model, &d.test, cfg.train.drop_overflow)))
                .collect();
            let test_refs: Vec<(String, &[TaskInstance])> =
                test_sets.iter().map(|(n, t)| (n.clone(), t.as_slice())).collect();
            for method in &cfg.methods {
                let labeler: &dyn WordLabeler = model;
                let mut rows = if cfg.mode == Mode::Single {
                    cross_matrix(&[(train_name.clone(), labeler)], &test_refs, cfg.task, *method, &[seed])
                } else {
                    // joint models have no same-named test split
                    test_refs
                        .iter()
                        .map(|(eval, inst)| {
                            let preds = labeler.label_words(inst, *method)?;
                            let score = crate::eval::score_task(&preds, cfg.task)?;
                            Ok(vec![MetricsReport::new(cfg.task, train_name, eval, *method, vec![seed], score)])
                        })
                        .collect::<Result<Vec<_>>>()
                        .map(|v| vec![v.into_iter().flatten().collect()])
                }
                .stage("evaluate")?;
                for mut rep in rows.pop().unwrap_or_default() {
                    rep.config_hash = Some(config_hash.clone());
                    run_reports.push(rep);
                }
            }
            histories.push(RunHistory {
                run: r,
                seed,
                train_set: train_name.clone(),
                history: model.history.clone(),
            });
        }
        run_reports.sort_by(|a, b| (&a.train_set, &a.eval_set, a.method.to_string()).cmp(&(&b.train_set, &b.eval_set, b.method.to_string())));
        if let Some(dir) = out {
            let run_dir = dir.join("runs").join(format!("run-{r}"));
            write_atomic(&run_dir.join("reports.json"), &json_pretty(&run_reports)?)?;
            let hist: Vec<&RunHistory> = histories.iter().filter(|h| h.run == r).collect();
            write_atomic(&run_dir.join("history.json"), &json_pretty(&hist)?)?;
        }
        info!("run {r} (seed {seed}) done: {} reports", run_reports.len());
        per_run.extend(run_reports);
    }

    let averaged = average_cells(&per_run)?;
    if let Some(dir) = out {
        write_atomic(&dir.join("reports.json"), &json_pretty(&averaged)?)?;
        write_atomic(&dir.join("reports.txt"), render_table(&averaged).as_bytes())?;
        write_atomic(&dir.join("reports.csv"), render_csv(&averaged).as_bytes())?;
        write_atomic(
            &dir.join("metadata.json"),
            &json_pretty(&serde_json::json!({ "started_unix": started, "finished_unix": unix_now() }))?,
        )?;
    }
    Ok(Bundle {
        provenance,
        per_run,
        averaged,
        histories,
    })
}

/// One averaged report per (train, eval, method) cell, in first-seen order.
pub fn average_cells(per_run: &[MetricsReport]) -> Result<Vec<MetricsReport>> {
    let mut cells: Vec<Vec<MetricsReport>> = Vec::new();
    for rep in per_run {
        let same = |c: &&mut Vec<MetricsReport>| {
            let f = &c[0];
            f.train_set == rep.train_set && f.eval_set == rep.eval_set && f.method == rep.method && f.task == rep.task
        };
        match cells.iter_mut().find(|c| same(c)) {
            Some(c) => c.push(rep.clone()),
            None => cells.push(vec![rep.clone()]),
        }
    }
    cells.iter().map(|c| average_runs(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(prefix: &str, n: usize) -> Vec<AnnotatedSentence> {
        (0..n)
            .map(|i| AnnotatedSentence::unannotated(format!("{prefix}{i}"), vec!["w".into()]))
            .collect()
    }

    fn split_of(n: usize) -> Split {
        Split {
            train: sents("s", n),
            val: sents("v", 2),
            test: sents("t", 2),
        }
    }

    #[test]
    fn joint_merges_and_keeps_tests() {
        let j = prepare_joint(&[("A".into(), split_of(5)), ("B".into(), split_of(3))], 1).unwrap();
        assert_eq!(j.train.len(), 8);
        assert_eq!(j.val.len(), 4);
        assert_eq!(j.tests.len(), 2);
        assert_eq!(j.tests[1].1[0].sentence_id, "B:t0");
        let fit: HashSet<&str> = j.train.iter().chain(&j.val).map(|s| s.sentence_id.as_str()).collect();
        assert!(j.tests.iter().all(|(_, t)| t.iter().all(|s| !fit.contains(s.sentence_id.as_str()))));
    }

    #[test]
    fn joint_rejects_colliding_names() {
        assert!(prepare_joint(&[("A".into(), split_of(2)), ("A".into(), split_of(2))], 1).is_err());
    }

    #[test]
    fn config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
task = "cue"
runs = 5
[[datasets]]
name = "BF"
path = "bf.jsonl"
"#,
        )
        .unwrap();
        assert_eq!(cfg.seeds(), vec![0, 1, 2, 3, 4]);
        assert_eq!(cfg.split.ratios, [0.7, 0.15, 0.15]);
        assert_eq!(cfg.methods.len(), 2);
        assert_eq!(cfg.hash().len(), 64);
        let joint = "task = \"cue\"\nmode = \"joint\"\n[[datasets]]\nname = \"BF\"\npath = \"x\"\n";
        assert!(matches!(ExperimentConfig::from_toml(joint), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_toml("task = \"cue\"\nruns = 0\n[[datasets]]\nname=\"a\"\npath=\"b\"\n").is_err());
    }
}
