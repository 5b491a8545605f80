use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use scopeworks::encoding::{encode_corpus, ScopeOptions, Task, TaskInstance};
use scopeworks::eval::WordLabeler;
use scopeworks::model::{train, ArchConfig, BackendConfig, TrainConfig, TrainedModel};
use scopeworks::synthetic::{synthetic_corpus, SyntheticSpec};
use scopeworks::tokenize::{tokenize_all, Aggregation, WordPieceBuilder};
use scopeworks::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn instances(task: Task, n: usize) -> Vec<TaskInstance> {
    let corpus = synthetic_corpus(&SyntheticSpec {
        sentences: n,
        ..Default::default()
    })
    .unwrap();
    encode_corpus(&corpus.sentences, task, ScopeOptions::default()).unwrap()
}

fn model(inst: &[TaskInstance], epochs: usize) -> TrainedModel {
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: epochs,
        early_stop_patience: 0,
        ..Default::default()
    };
    let backend = BackendConfig::Transformer {
        arch: ArchConfig::default(),
        tokenizer: WordPieceBuilder::default(),
    };
    train(&backend, Task::Scope, inst, &[], &cfg, Execution::Sequential).unwrap()
}

fn tokenize(c: &mut Criterion) {
    let inst = instances(Task::Scope, 2000);
    let tok = WordPieceBuilder::default().build(inst.iter().flat_map(|i| i.words.iter().map(String::as_str)));
    let mut g = c.benchmark_group("tokenize");
    g.throughput(Throughput::Elements(inst.len() as u64));
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| tokenize_all(&inst, &tok, false, exec).unwrap())
        });
    }
    g.finish();
}

fn label(c: &mut Criterion) {
    let inst = instances(Task::Scope, 300);
    let mut m = model(&inst, 1);
    let mut g = c.benchmark_group("label_words");
    g.throughput(Throughput::Elements(inst.len() as u64));
    for (name, exec) in MODES {
        m.execution = exec;
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| m.label_words(&inst, Aggregation::Average).unwrap())
        });
    }
    g.finish();
}

fn train_epoch(c: &mut Criterion) {
    let inst = instances(Task::Scope, 120);
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 1,
        early_stop_patience: 0,
        ..Default::default()
    };
    let mut g = c.benchmark_group("train_epoch");
    g.sample_size(10);
    g.throughput(Throughput::Elements(inst.len() as u64));
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| train(&BackendConfig::default(), Task::Scope, &inst, &[], &cfg, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, tokenize, label, train_epoch);
criterion_main!(benches);
