use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use scopeworks::corpus::{corpus_stats, load_corpus, read_canonical_file, write_canonical_file, CorpusName, CueKind, SourceFormat};
use scopeworks::encoding::{encode_corpus, ScopeOptions, Task, TaskInstance};
use scopeworks::eval::{render_csv, render_table, score_task, MetricsReport, WordLabeler};
use scopeworks::experiment::{self, split, ExperimentConfig, SplitSpec};
use scopeworks::io::{from_jsonl, read_file, to_jsonl, write_atomic};
use scopeworks::model::{
    load_checkpoint, save_checkpoint, train, write_probability_jsonl, Backend, BackendConfig, ProbRecord,
    ReplayBackend, TokenClassifier, TrainConfig, TrainedModel,
};
use scopeworks::tokenize::{tokenize_all, write_tokenized_jsonl, Aggregation, SubwordTokenizer, WordPieceBuilder};
use scopeworks::Execution;

#[derive(Parser)]
#[command(name = "scopeworks", version, about = "Speculation and negation cue/scope toolkit")]
struct Cli {
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a corpus file into the canonical JSON Lines format.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        format: SourceFormat,
        #[arg(long, default_value = "speculation")]
        cue_kind: CueKind,
        /// Corpus tag (BF, BA, SFU, Sherlock or any custom name); defaults to the file stem.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a canonical corpus as cue or scope task instances.
    Encode {
        #[arg(long)]
        task: Task,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        allow_empty_scope: bool,
    },
    /// Write train/val/test canonical files for one corpus.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Take ratios and seed from an experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tokenize encoded instances into the tokenized-instance export.
    Tokenize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reuse a trained model's vocabulary; otherwise one is induced from the input.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        max_len: usize,
        #[arg(long)]
        drop_overflow: bool,
    },
    /// Train the transformer tagger on encoded instances.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Experiment config whose [model] and [train] tables are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        drop_overflow: bool,
    },
    /// Write per-token probabilities for encoded instances.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the tokenization the probabilities refer to.
        #[arg(long)]
        tokens_out: Option<PathBuf>,
    },
    /// Score a checkpoint or a probability file against gold instances.
    Evaluate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, conflicts_with_all = ["probs", "tokens"])]
        checkpoint: Option<PathBuf>,
        #[arg(long, requires = "tokens")]
        probs: Option<PathBuf>,
        #[arg(long, requires = "probs")]
        tokens: Option<PathBuf>,
        #[arg(long = "method", default_values = ["average", "first_token"])]
        methods: Vec<Aggregation>,
        #[arg(long, default_value = "eval")]
        eval_set: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render report JSON files as a table, CSV or JSON.
    Report {
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "table", value_parser = ["table", "csv", "json"])]
        format: String,
    },
    /// Run a full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        base_seed: Option<u64>,
        /// Output directory (overrides the config and the environment).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Convert { .. } => "convert",
            Command::Encode { .. } => "encode",
            Command::Split { .. } => "split",
            Command::Tokenize { .. } => "tokenize",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Report { .. } => "report",
            Command::Run { .. } => "run",
        }
    }
}

fn read_instances(path: &Path) -> Result<Vec<TaskInstance>> {
    let inst: Vec<TaskInstance> = from_jsonl(&read_file(path)?).with_context(|| format!("reading {}", path.display()))?;
    for i in &inst {
        i.validate()?;
    }
    Ok(inst)
}

fn single_task(inst: &[TaskInstance]) -> Result<Task> {
    let Some(first) = inst.first() else {
        bail!("no instances");
    };
    if let Some(other) = inst.iter().find(|i| i.task != first.task) {
        bail!("mixed tasks: {} and {}", first.task, other.task);
    }
    Ok(first.task)
}

fn json_pretty(v: &[MetricsReport]) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn execute(cmd: Command, exec: Execution) -> Result<()> {
    match cmd {
        Command::Convert {
            input,
            format,
            cue_kind,
            name,
            out,
        } => {
            let name = name.unwrap_or_else(|| input.file_stem().map_or("corpus".into(), |s| s.to_string_lossy().into_owned()));
            let corpus = load_corpus(&input, format, cue_kind, CorpusName::from(name.as_str()))?;
            write_canonical_file(&corpus, &out)?;
            let st = corpus_stats(&corpus);
            eprintln!(
                "{}: {} sentences, {} cues ({} multiword), {} scopes",
                corpus.name, st.sentence_count, st.cue_count, st.multiword_cue_count, st.scope_count
            );
        }
        Command::Encode {
            task,
            input,
            out,
            allow_empty_scope,
        } => {
            let corpus = read_canonical_file(&input)?;
            let inst = encode_corpus(&corpus.sentences, task, ScopeOptions { allow_empty_scope })?;
            write_atomic(&out, &to_jsonl(&inst)?)?;
            eprintln!("{} {task} instances", inst.len());
        }
        Command::Split {
            input,
            out_dir,
            config,
            seed,
        } => {
            let mut spec = match config {
                Some(p) => ExperimentConfig::load(&p)?.split,
                None => SplitSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let corpus = read_canonical_file(&input)?;
            let parts = split(&corpus, &spec)?;
            for (part, sentences) in [("train", parts.train), ("val", parts.val), ("test", parts.test)] {
                let c = scopeworks::corpus::Corpus::new(corpus.name.clone(), corpus.cue_kind, sentences)?;
                write_canonical_file(&c, out_dir.join(format!("{part}.jsonl")))?;
                eprintln!("{part}: {}", c.len());
            }
        }
        Command::Tokenize {
            input,
            out,
            checkpoint,
            max_len,
            drop_overflow,
        } => {
            let inst = read_instances(&input)?;
            let tok = match checkpoint {
                Some(p) => load_checkpoint(&p)?.0.tokenizer,
                None => WordPieceBuilder {
                    max_len,
                    ..Default::default()
                }
                .build(inst.iter().flat_map(|i| i.words.iter().map(String::as_str))),
            };
            let toks = tokenize_all(&inst, &tok, drop_overflow, exec)?;
            write_atomic(&out, &write_tokenized_jsonl(&toks)?)?;
            eprintln!("{} instances, vocabulary {}", toks.len(), tok.vocab_size());
        }
        Command::Train {
            input,
            val,
            out,
            config,
            epochs,
            lr,
            batch_size,
            patience,
            seed,
            drop_overflow,
        } => {
            let (backend, mut tc) = match config {
                Some(p) => {
                    let c = ExperimentConfig::load(&p)?;
                    (c.model, c.train)
                }
                None => (BackendConfig::default(), TrainConfig::default()),
            };
            if matches!(backend, BackendConfig::Replay { .. }) {
                bail!("the replay backend is not trainable; use `evaluate --probs`");
            }
            tc.max_epochs = epochs.unwrap_or(tc.max_epochs);
            tc.learning_rate = lr.unwrap_or(tc.learning_rate);
            tc.batch_size = batch_size.unwrap_or(tc.batch_size);
            tc.early_stop_patience = patience.unwrap_or(tc.early_stop_patience.min(tc.max_epochs.saturating_sub(1)));
            tc.seed = seed.unwrap_or(tc.seed);
            tc.drop_overflow |= drop_overflow;
            let train_set = read_instances(&input)?;
            let task = single_task(&train_set)?;
            let val_set = match val {
                Some(p) => read_instances(&p)?,
                None => Vec::new(),
            };
            let model = train(&backend, task, &train_set, &val_set, &tc, exec)?;
            let Backend::Transformer(tagger) = &model.backend else {
                unreachable!("replay rejected above")
            };
            save_checkpoint(tagger, &model.history, &out)?;
            info!(
                "best epoch {}, validation F1 {:?}",
                model.history.best_epoch, model.history.best_val_f1
            );
            eprintln!("trained {} epochs, checkpoint at {}", model.history.epochs.len(), out.display());
        }
        Command::Predict {
            checkpoint,
            input,
            out,
            tokens_out,
        } => {
            let (tagger, _) = load_checkpoint(&checkpoint)?;
            let inst = read_instances(&input)?;
            let toks = tokenize_all(&inst, &tagger.tokenizer, false, exec)?;
            let records = exec.try_map(&toks, |t| {
                tagger.probabilities(t).map(|p| ProbRecord::new(&t.instance_id, tagger.task, &p))
            })?;
            write_atomic(&out, &write_probability_jsonl(&records)?)?;
            if let Some(p) = tokens_out {
                write_atomic(&p, &write_tokenized_jsonl(&toks)?)?;
            }
            eprintln!("{} probability records", records.len());
        }
        Command::Evaluate {
            input,
            checkpoint,
            probs,
            tokens,
            methods,
            eval_set,
            out,
        } => {
            let inst = read_instances(&input)?;
            let task = single_task(&inst)?;
            let (name, model) = match (checkpoint, probs, tokens) {
                (Some(c), _, _) => {
                    let (tagger, history) = load_checkpoint(&c)?;
                    if tagger.task != task {
                        bail!("checkpoint is a {} model but instances are {task}", tagger.task);
                    }
                    let name = c.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
                    (name, TrainedModel { backend: Backend::Transformer(tagger), history, execution: exec })
                }
                (None, Some(p), Some(t)) => {
                    let replay = ReplayBackend::load(&p, &t, task)?;
                    let name = p.file_stem().map_or("replay".into(), |s| s.to_string_lossy().into_owned());
                    (name, TrainedModel { backend: Backend::Replay(replay), history: Default::default(), execution: exec })
                }
                _ => bail!("give either --checkpoint or both --probs and --tokens"),
            };
            let mut reports = Vec::new();
            for m in methods {
                let preds = model.label_words(&inst, m)?;
                let score = score_task(&preds, task)?;
                reports.push(MetricsReport::new(task, &name, &eval_set, m, Vec::new(), score));
            }
            print!("{}", render_table(&reports));
            if let Some(o) = out {
                write_atomic(&o, &json_pretty(&reports)?)?;
            }
        }
        Command::Report { inputs, format } => {
            let mut reports: Vec<MetricsReport> = Vec::new();
            for p in &inputs {
                let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                let v: serde_json::Value = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))?;
                if v.is_array() {
                    reports.extend(serde_json::from_value::<Vec<MetricsReport>>(v)?);
                } else {
                    reports.push(serde_json::from_value(v)?);
                }
            }
            match format.as_str() {
                "csv" => print!("{}", render_csv(&reports)),
                "json" => print!("{}", String::from_utf8(json_pretty(&reports)?)?),
                _ => print!("{}", render_table(&reports)),
            }
        }
        Command::Run {
            config,
            runs,
            base_seed,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.runs = runs.unwrap_or(cfg.runs);
            cfg.base_seed = base_seed.unwrap_or(cfg.base_seed);
            let dir = out.unwrap_or_else(|| cfg.effective_output_dir());
            let bundle = experiment::run(&cfg, Some(&dir), exec)?;
            print!("{}", render_table(&bundle.averaged));
            eprintln!("{} per-run reports, bundle in {}", bundle.per_run.len(), dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let stage = cli.command.stage();
    match execute(cli.command, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let tagged = e.downcast_ref::<scopeworks::Error>().and_then(|x| x.stage()).is_some();
            if tagged {
                eprintln!("error: {e:#}");
            } else {
                eprintln!("error: [{stage}]: {e:#}");
            }
            ExitCode::FAILURE
        }
    }
}
