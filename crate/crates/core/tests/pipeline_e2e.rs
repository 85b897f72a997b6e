mod common;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use emocause::corpus::{self, DatasetSplit, EmotionCategory, EmotionCausePair, Utterance};
use emocause::inference::{EndpointConfig, MockSpec};
use emocause::pipeline::{
    build_iterative_dataset, emit_training_assets, load_pairs, run_full, Decomposition, LabelPolicy, PipelineConfig,
    PipelineError, StageSelection, TrainingManifest,
};
use emocause::templates::{read_record_lines, LabelSource, Mode, Stage, TemplateCompiler, TemplateVariant};

fn gold_cfg(dir: &Path, split: &DatasetSplit) -> PipelineConfig {
    PipelineConfig {
        eval: Some(common::write_split(dir, "eval.json", split)),
        out_dir: dir.join("out"),
        endpoint: EndpointConfig {
            mock: Some(MockSpec::Gold),
            ..EndpointConfig::new("", "oracle")
        },
        ..PipelineConfig::default()
    }
}

#[tokio::test]
async fn full_run_writes_every_artifact_and_reconciles_counts() {
    let dir = tempfile::tempdir().unwrap();
    let split = common::split(100, "eval", 12, 8);
    let cfg = gold_cfg(dir.path(), &split);
    let report = run_full(&cfg).await.unwrap();
    for file in [
        "erc_records.jsonl",
        "erc_replies.jsonl",
        "erc_predictions.json",
        "ecpe_records.jsonl",
        "ecpe_replies.jsonl",
        "pairs.json",
        "score.json",
        "erc_score.json",
        "run_report.json",
    ] {
        assert!(cfg.out_dir.join(file).is_file(), "{file}");
    }
    let n = split.utterance_count();
    let emotional = split.conversations.iter().flat_map(|c| &c.utterances).filter(|u| !u.gold_emotion.unwrap().is_neutral()).count();
    assert_eq!(report.counts.erc_predictions, n);
    let ecpe = report.ecpe.as_ref().unwrap();
    assert_eq!((ecpe.records, ecpe.replies_parsed), (emotional, emotional));
    assert_eq!(report.erc.as_ref().unwrap().emotion_quality.exact, n);
    assert_eq!(read_record_lines(cfg.out_dir.join("ecpe_records.jsonl")).unwrap().len(), emotional);
    assert_eq!(load_pairs(&cfg.out_dir.join("pairs.json")).unwrap(), split.gold_pairs().unwrap());
    assert_eq!(report.pair_score.unwrap().weighted_f1, 1.0);
}

#[tokio::test]
async fn every_decomposition_closes_under_the_oracle() {
    let split = common::split(101, "eval", 15, 8);
    for (decomposition, label_policy) in [
        (Decomposition::SingleStage, LabelPolicy::Predicted),
        (Decomposition::TwoIndependentStages, LabelPolicy::Predicted),
        (Decomposition::EcpeWithEmotionLabels, LabelPolicy::Predicted),
        (Decomposition::EcpeWithEmotionLabels, LabelPolicy::Gold),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            decomposition,
            label_policy,
            ..gold_cfg(dir.path(), &split)
        };
        let report = run_full(&cfg).await.unwrap();
        assert_eq!(report.pair_score.unwrap().weighted_f1, 1.0, "{decomposition:?} {label_policy:?}");
    }
}

#[tokio::test]
async fn unlabeled_split_yields_pairs_without_scores() {
    let dir = tempfile::tempdir().unwrap();
    let mut split = common::split(102, "eval", 4, 6);
    for c in &mut split.conversations {
        c.gold_pairs = None;
        c.utterances.iter_mut().for_each(|u| u.gold_emotion = None);
    }
    let cfg = PipelineConfig {
        endpoint: EndpointConfig {
            mock: Some(MockSpec::Constant("joy 1".into())),
            ..EndpointConfig::new("", "constant")
        },
        ..gold_cfg(dir.path(), &split)
    };
    let report = run_full(&cfg).await.unwrap();
    assert!(report.pair_score.is_none() && report.erc_score.is_none());
    assert!(!cfg.out_dir.join("score.json").exists());
    let pairs = load_pairs(&cfg.out_dir.join("pairs.json")).unwrap();
    assert_eq!(pairs.len(), 4);
    // every utterance predicted joy, every reply names utterance 1
    for (id, found) in &pairs {
        let n = split.conversation(id).unwrap().len() as u32;
        assert_eq!(found, &(1..=n).map(|i| EmotionCausePair::new(i, EmotionCategory::Joy, 1)).collect::<Vec<_>>());
    }
}

#[tokio::test]
async fn predictions_file_replaces_emotion_recognition() {
    let dir = tempfile::tempdir().unwrap();
    let split = common::split(103, "eval", 5, 6);
    let predictions = split
        .conversations
        .iter()
        .flat_map(|c| c.utterances.iter().map(move |u| (corpus::UtteranceKey::new(c.id.clone(), u.index), u.gold_emotion.unwrap())))
        .collect();
    let path = dir.path().join("predictions.json");
    std::fs::write(&path, corpus::predictions_to_json(&predictions)).unwrap();
    let cfg = PipelineConfig {
        predictions: Some(path),
        stages: StageSelection { erc: false, ..StageSelection::default() },
        ..gold_cfg(dir.path(), &split)
    };
    let report = run_full(&cfg).await.unwrap();
    assert!(report.erc.is_none());
    assert!(!cfg.out_dir.join("erc_records.jsonl").exists());
    assert_eq!(report.pair_score.unwrap().weighted_f1, 1.0);
}

#[tokio::test]
async fn causes_after_their_emotion_are_out_of_reach() {
    let dir = tempfile::tempdir().unwrap();
    let mut conversation = corpus::demo_conversation();
    // a cause that follows its emotion utterance: legal in the corpus, outside every candidate window
    conversation.gold_pairs.as_mut().unwrap().push(EmotionCausePair::new(4, EmotionCategory::Joy, 5));
    let split = DatasetSplit::new("eval", vec![conversation]);
    let report = run_full(&gold_cfg(dir.path(), &split)).await.unwrap();
    let score = report.pair_score.unwrap();
    assert_eq!((score.gold_total, score.pred_total), (4, 3));
    assert!(score.weighted_f1 < 1.0);
    assert_eq!(report.ecpe.unwrap().dropped_indices, 1);
}

#[tokio::test]
async fn video_descriptions_reach_the_prompts() {
    let dir = tempfile::tempdir().unwrap();
    let split = common::split(104, "eval", 3, 5);
    let entries: Vec<_> = split
        .conversations
        .iter()
        .flat_map(|c| c.utterances.iter().map(move |u| corpus::SidecarEntry {
            conversation: c.id.clone(),
            index: u.index,
            description: format!("{} nods.", u.speaker),
        }))
        .collect();
    let sidecar = dir.path().join("video.json");
    std::fs::write(&sidecar, serde_json::to_string(&entries).unwrap()).unwrap();
    let mut cfg = PipelineConfig {
        video_sidecar: Some(sidecar),
        ..gold_cfg(dir.path(), &split)
    };
    cfg.variant.modality = emocause::templates::Modality::TextPlusVideo;
    run_full(&cfg).await.unwrap();
    let records = read_record_lines(cfg.out_dir.join("ecpe_records.jsonl")).unwrap();
    assert!(!records.is_empty());
    assert!(records.iter().all(|r| r.instruction.contains("Video description of target utterance:\n")));
}

#[tokio::test]
async fn configuration_errors_precede_any_request() {
    use axum::routing::post;
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&hits);
    let app = axum::Router::new().route(
        "/v1/chat/completions",
        post(move || {
            counter.fetch_add(1, Ordering::SeqCst);
            async { r#"{"choices":[{"message":{"content":"joy"}}]}"# }
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, app).await });

    let dir = tempfile::tempdir().unwrap();
    let split = common::split(105, "eval", 2, 4);
    let base = PipelineConfig {
        endpoint: EndpointConfig::new(url, "glm"),
        ..gold_cfg(dir.path(), &split)
    };
    let broken = [
        PipelineConfig { eval: None, ..base.clone() },
        PipelineConfig { template_file: Some(dir.path().join("missing.toml")), ..base.clone() },
        PipelineConfig { predictions: Some(dir.path().join("missing.json")), ..base.clone() },
        PipelineConfig { endpoint: EndpointConfig { max_in_flight: 0, ..base.endpoint.clone() }, ..base.clone() },
        PipelineConfig { manifest: TrainingManifest { epochs: 0, ..TrainingManifest::default() }, ..base.clone() },
    ];
    for cfg in &broken {
        assert!(run_full(cfg).await.is_err());
    }
    assert_eq!(hits.load(Ordering::SeqCst), 0);
    assert!(!base.out_dir.exists());
    run_full(&base).await.unwrap();
    assert!(hits.load(Ordering::SeqCst) > 0);
}

#[test]
fn emission_counts_and_preconditions() {
    let dir = tempfile::tempdir().unwrap();
    let train = common::split(106, "train", 10, 8);
    let compiler = TemplateCompiler::default();
    let manifest = TrainingManifest::default();
    let erc = emit_training_assets(&train, Stage::Erc, TemplateVariant::default(), &compiler, &manifest, dir.path()).unwrap();
    assert_eq!(erc.records, train.utterance_count());
    assert_eq!(read_record_lines(&erc.jsonl).unwrap().len(), erc.records);
    let loaded = TrainingManifest::load(&erc.manifest).unwrap();
    assert_eq!(loaded.datasets[0].records, erc.records);
    assert_eq!(loaded.template_version, "v1");

    let empty = DatasetSplit::new("train", vec![]);
    assert!(matches!(
        emit_training_assets(&empty, Stage::Erc, TemplateVariant::default(), &compiler, &manifest, dir.path()),
        Err(PipelineError::Precondition(_))
    ));
    let mut unlabeled = train.clone();
    unlabeled.conversations[0].gold_pairs = None;
    assert!(emit_training_assets(&unlabeled, Stage::Ecpe, TemplateVariant::default(), &compiler, &manifest, dir.path()).is_err());
    let mut no_emotion = train.clone();
    no_emotion.conversations[0].utterances[0] = Utterance::new(1, "Ross", "Hi.");
    assert!(emit_training_assets(&no_emotion, Stage::Erc, TemplateVariant::default(), &compiler, &manifest, dir.path()).is_err());
}

#[tokio::test]
async fn self_training_supersets_gold_emission() {
    let compiler = TemplateCompiler::default();
    for seed in 0..8 {
        let dir = tempfile::tempdir().unwrap();
        let train = common::split(200 + seed, "train", 6, 7);
        let test = common::split(300 + seed, "test", 6, 7);
        let report = run_full(&gold_cfg(dir.path(), &test)).await.unwrap();
        assert_eq!(report.pair_score.unwrap().weighted_f1, 1.0);
        let inferred = load_pairs(&dir.path().join("out/pairs.json")).unwrap();
        let path = dir.path().join("iterative.jsonl");
        let ds = build_iterative_dataset(&compiler, &train, &test, &inferred, TemplateVariant::default(), &path).unwrap();
        let gold_only = compiler
            .compile_split(&train, Stage::Ecpe, TemplateVariant::default(), LabelSource::Gold, Mode::Train)
            .unwrap();
        let lines = read_record_lines(&path).unwrap();
        assert_eq!(ds.gold_records, gold_only.len());
        assert_eq!(lines.len(), ds.total());
        assert!(lines.len() >= gold_only.len());
        let targets: std::collections::BTreeSet<_> =
            inferred.iter().flat_map(|(c, ps)| ps.iter().map(move |p| (c.clone(), p.emotion_index))).collect();
        assert_eq!(ds.inferred_records, targets.len());
    }
}
