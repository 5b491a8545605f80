use scopeworks::corpus::{corpus_stats, parse_inline_xml, read_canonical, write_canonical, CorpusName, CueKind, XmlDialect};
use scopeworks::encoding::{encode_corpus, ScopeOptions, Task};
use scopeworks::eval::{score_task, WordLabeler};
use scopeworks::model::{
    load_checkpoint, save_checkpoint, train, write_probability_jsonl, read_probability_jsonl, ArchConfig, Backend,
    BackendConfig, ProbRecord, ReplayBackend, TokenClassifier, TrainConfig, TrainedModel,
};
use scopeworks::tokenize::{read_tokenized_jsonl, tokenize_all, write_tokenized_jsonl, Aggregation, WordPieceBuilder};
use scopeworks::{Error, Execution};

const XML: &str = r#"<Annotation><DocumentSet>
<Document id="d1"><DocumentPart>
<sentence id="S1">It <xcope id="X1"><cue type="speculation" ref="X1">might</cue> rain tomorrow</xcope>.</sentence>
<sentence id="S2">The gene is expressed in liver.</sentence>
<sentence id="S3">These data <xcope id="X2"><cue type="speculation" ref="X2">suggest</cue> that the protein <xcope id="X3"><cue type="speculation" ref="X3">may</cue> bind DNA</xcope></xcope>.</sentence>
</DocumentPart></Document>
<Document id="d2"><DocumentPart>
<sentence id="S1"><xcope id="X4"><cue type="speculation" ref="X4">Whether</cue> this holds</xcope> is unclear.</sentence>
<sentence id="S2">Cells <xcope id="X5"><cue type="speculation" ref="X5">indicate that</cue> growth stops</xcope>.</sentence>
</DocumentPart></Document>
</DocumentSet></Annotation>"#;

fn small_backend() -> BackendConfig {
    BackendConfig::Transformer {
        arch: ArchConfig {
            n_hidden: 16,
            encoder_layers: 1,
            attention_heads: 2,
            ff_width: 32,
            dropout: 0.0,
        },
        tokenizer: WordPieceBuilder {
            min_word_count: 1,
            max_len: 32,
            ..Default::default()
        },
    }
}

#[test]
fn xml_to_canonical_round_trip() {
    let c = parse_inline_xml(XML.as_bytes(), &XmlDialect::bioscope(), CueKind::Speculation, CorpusName::BF).unwrap();
    let st = corpus_stats(&c);
    assert_eq!((st.sentence_count, st.cue_count, st.scope_count, st.multiword_cue_count), (5, 5, 5, 1));
    let mut buf = Vec::new();
    write_canonical(&c, &mut buf).unwrap();
    let first = std::str::from_utf8(&buf).unwrap().lines().next().unwrap().to_owned();
    assert!(first.starts_with(r#"{"schema":"scopeworks-corpus","version":1"#), "{first}");
    assert_eq!(read_canonical(&buf).unwrap(), c);
}

#[test]
fn probabilities_replay_to_identical_scores() {
    let c = parse_inline_xml(XML.as_bytes(), &XmlDialect::bioscope(), CueKind::Speculation, CorpusName::BF).unwrap();
    for task in [Task::Cue, Task::Scope] {
        let inst = encode_corpus(&c.sentences, task, ScopeOptions::default()).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            max_epochs: 5,
            early_stop_patience: 2,
            ..Default::default()
        };
        let model = train(&small_backend(), task, &inst, &[], &cfg, Execution::Sequential).unwrap();
        let Backend::Transformer(tagger) = &model.backend else { panic!() };

        // export tokens and probabilities the way an external producer would
        let toks = tokenize_all(&inst, &tagger.tokenizer, false, Execution::Sequential).unwrap();
        let records: Vec<ProbRecord> = toks
            .iter()
            .map(|t| ProbRecord::new(&t.instance_id, task, &tagger.probabilities(t).unwrap()))
            .collect();
        let toks_back = read_tokenized_jsonl(&write_tokenized_jsonl(&toks).unwrap()).unwrap();
        assert_eq!(toks_back, toks);
        let recs_back = read_probability_jsonl(&write_probability_jsonl(&records).unwrap()).unwrap();
        let replay = TrainedModel {
            backend: Backend::Replay(ReplayBackend::from_records(recs_back, task, toks_back).unwrap()),
            history: Default::default(),
            execution: Execution::Sequential,
        };
        for method in [Aggregation::Average, Aggregation::FirstToken] {
            let a = score_task(&model.label_words(&inst, method).unwrap(), task).unwrap();
            let b = score_task(&replay.label_words(&inst, method).unwrap(), task).unwrap();
            assert_eq!(a, b, "{task} {method}");
        }
        // an instance the file does not cover
        let mut missing = inst[0].clone();
        missing.instance_id = "nowhere".into();
        assert!(matches!(
            replay.label_words(&[missing], Aggregation::Average),
            Err(Error::Lookup(_))
        ));
    }
}

#[test]
fn checkpoint_predictions_survive_reload() {
    let c = parse_inline_xml(XML.as_bytes(), &XmlDialect::bioscope(), CueKind::Speculation, CorpusName::BF).unwrap();
    let inst = encode_corpus(&c.sentences, Task::Scope, ScopeOptions::default()).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        max_epochs: 3,
        early_stop_patience: 1,
        ..Default::default()
    };
    let model = train(&small_backend(), Task::Scope, &inst, &[], &cfg, Execution::default()).unwrap();
    let Backend::Transformer(tagger) = &model.backend else { panic!() };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scope.ckpt.json");
    save_checkpoint(tagger, &model.history, &path).unwrap();
    let (back, history) = load_checkpoint(&path).unwrap();
    assert_eq!(history, model.history);
    let reloaded = TrainedModel {
        backend: Backend::Transformer(back),
        history,
        execution: Execution::Sequential,
    };
    assert_eq!(
        model.label_words(&inst, Aggregation::Average).unwrap(),
        reloaded.label_words(&inst, Aggregation::Average).unwrap()
    );
}

#[test]
fn training_is_identical_across_execution_modes() {
    let c = parse_inline_xml(XML.as_bytes(), &XmlDialect::bioscope(), CueKind::Speculation, CorpusName::BF).unwrap();
    let inst = encode_corpus(&c.sentences, Task::Cue, ScopeOptions::default()).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        max_epochs: 3,
        early_stop_patience: 1,
        batch_size: 2,
        ..Default::default()
    };
    let backend = BackendConfig::Transformer {
        arch: ArchConfig {
            dropout: 0.1,
            ..match small_backend() {
                BackendConfig::Transformer { arch, .. } => arch,
                _ => unreachable!(),
            }
        },
        tokenizer: WordPieceBuilder::default(),
    };
    let params = |exec| match train(&backend, Task::Cue, &inst, &[], &cfg, exec).unwrap().backend {
        Backend::Transformer(t) => t.network.params,
        _ => unreachable!(),
    };
    assert_eq!(params(Execution::Sequential), params(Execution::Parallel));
}
