//! The end-to-end workflow: emotion recognition, label injection, cause
//! extraction, pair assembly and scoring, plus training-data emission for
//! external fine-tuning and self-training rounds.

mod config;
mod iterate;
mod manifest;
mod pilot;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    self, inject_predicted_emotions, CorpusError, DatasetSplit, EmotionCategory, UtteranceKey,
};
use crate::inference::{
    ChatBackend, CompletionJob, EndpointConfig, HttpBackend, InferenceClient, InferenceError, MockBackend,
    MockSpec, ResponseCache,
};
use crate::io::{sha256_hex, write_atomic, write_sorted_json};
use crate::metrics::{score_corpus, score_erc, MetricsError, ScoreReport};
use crate::parser::{
    assemble_pairs, parse_cause_reply, parse_emotion_reply, parse_joint_reply, EcpeParse, ErcParse,
    PairsByConversation, ParseError, ParseQuality, GRAMMAR_VERSION,
};
use crate::templates::{
    parse_record_id, render_training_file, write_records, InstructionRecord, LabelSource, Mode, Stage,
    TemplateBook, TemplateCompiler, TemplateError, TemplateVariant,
};

pub use config::{Decomposition, LabelPolicy, PipelineConfig, StageSelection};
pub use iterate::{build_iterative_dataset, IterativeDataset};
pub use manifest::{DatasetRef, TrainingManifest};
pub use pilot::{run_pilot, PilotReport, PilotRow};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("{0}")]
    Precondition(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A reply as recorded in `*_replies.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplyLine {
    pub id: String,
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct QualityHistogram {
    pub exact: usize,
    pub normalized: usize,
    pub fallback: usize,
}

impl QualityHistogram {
    fn add(&mut self, quality: ParseQuality) {
        match quality {
            ParseQuality::Exact => self.exact += 1,
            ParseQuality::Normalized => self.normalized += 1,
            ParseQuality::Fallback => self.fallback += 1,
        }
    }
}

/// Per-stage counts. Contains nothing run-dependent, so it is stable under cache replay.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StageReport {
    pub records: usize,
    pub replies_parsed: usize,
    pub emotion_quality: QualityHistogram,
    pub dropped_indices: usize,
    pub explicit_none: usize,
    pub skipped_lines: usize,
    pub truncated_prompts: usize,
    pub endpoint_failures: BTreeMap<String, String>,
}

/// Timings and cache behaviour; the only part of a report that may differ
/// between two runs over identical inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RuntimeStats {
    pub stage_timings_ms: BTreeMap<String, u64>,
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub cache_hit_rate: f64,
    pub network_calls: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunCounts {
    pub conversations: usize,
    pub utterances: usize,
    pub erc_predictions: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: serde_json::Value,
    pub template_version: String,
    pub grammar_version: String,
    pub counts: RunCounts,
    pub erc: Option<StageReport>,
    pub ecpe: Option<StageReport>,
    pub joint: Option<StageReport>,
    pub erc_score: Option<ScoreReport>,
    pub pair_score: Option<ScoreReport>,
    pub runtime: RuntimeStats,
}

impl RunReport {
    /// The report without [`RuntimeStats`], as sorted-key JSON.
    pub fn stable_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("reports serialize");
        if let Some(map) = value.as_object_mut() {
            map.remove("runtime");
        }
        crate::io::to_sorted_json(&value)
    }
}

/// Output of one model-calling stage.
#[derive(Debug, Clone)]
pub struct StageRun<T> {
    pub output: T,
    pub records: Vec<InstructionRecord>,
    pub replies: Vec<ReplyLine>,
    pub report: StageReport,
}

/// Pairs plus the parsed replies they came from.
#[derive(Debug, Clone, Default)]
pub struct EcpeOutput {
    pub pairs: PairsByConversation,
    pub parses: BTreeMap<UtteranceKey, EcpeParse>,
}

/// Builds the backend named by `cfg.mock`, or an HTTP backend.
pub fn backend_for(cfg: &EndpointConfig, gold: Option<&DatasetSplit>) -> Result<Arc<dyn ChatBackend>, PipelineError> {
    Ok(match &cfg.mock {
        None => Arc::new(HttpBackend::new(cfg).map_err(|e| PipelineError::Config(e.to_string()))?),
        Some(MockSpec::Gold) => {
            let split = gold.ok_or_else(|| PipelineError::Config("the gold mock endpoint needs a labeled split".into()))?;
            Arc::new(MockBackend::gold_oracle(split))
        }
        Some(MockSpec::Replies(path)) => Arc::new(MockBackend::from_replies_file(path).map_err(PipelineError::Config)?),
        Some(MockSpec::Constant(reply)) => Arc::new(MockBackend::constant(reply.clone())),
    })
}

/// Compiles prompts, queries the endpoint and parses replies for one split.
#[derive(Clone)]
pub struct Pipeline {
    compiler: TemplateCompiler,
    client: InferenceClient,
    variant: TemplateVariant,
}

impl Pipeline {
    pub fn new(compiler: TemplateCompiler, client: InferenceClient, variant: TemplateVariant) -> Self {
        Self {
            compiler,
            client,
            variant,
        }
    }

    pub fn client(&self) -> &InferenceClient {
        &self.client
    }

    pub fn compiler(&self) -> &TemplateCompiler {
        &self.compiler
    }

    async fn query(&self, records: &[InstructionRecord], report: &mut StageReport) -> Vec<ReplyLine> {
        let jobs: Vec<CompletionJob> = records.iter().map(CompletionJob::from).collect();
        let results = self.client.complete_all(&jobs).await;
        report.records = records.len();
        report.truncated_prompts = records.iter().filter(|r| r.dropped_context_lines > 0).count();
        jobs.iter()
            .zip(results)
            .map(|(job, result)| match result {
                Ok(done) => ReplyLine {
                    id: job.id.clone(),
                    reply: done.reply,
                    error: None,
                },
                Err(e) => {
                    report.endpoint_failures.insert(job.id.clone(), e.to_string());
                    ReplyLine {
                        id: job.id.clone(),
                        reply: String::new(),
                        error: Some(e.to_string()),
                    }
                }
            })
            .collect()
    }

    /// Predicts one emotion per utterance. Failed calls parse as empty replies.
    pub async fn run_erc_stage(
        &self,
        split: &DatasetSplit,
    ) -> Result<StageRun<BTreeMap<UtteranceKey, ErcParse>>, PipelineError> {
        let records = self
            .compiler
            .compile_split(split, Stage::Erc, self.variant, LabelSource::None, Mode::Infer)?;
        let mut report = StageReport::default();
        let replies = self.query(&records, &mut report).await;
        let mut output = BTreeMap::new();
        for (record, reply) in records.iter().zip(&replies) {
            let parsed = parse_emotion_reply(&reply.reply);
            report.emotion_quality.add(parsed.quality);
            report.replies_parsed += 1;
            output.insert(record.target.clone(), parsed);
        }
        Ok(StageRun {
            output,
            records,
            replies,
            report,
        })
    }

    /// Extracts causes for every non-neutral target of a labeled split.
    ///
    /// `label_source` picks the rendered labels; with [`LabelSource::None`]
    /// nothing is rendered but predicted labels still select the targets
    /// and supply pair categories.
    pub async fn run_ecpe_stage(
        &self,
        split: &DatasetSplit,
        label_source: LabelSource,
    ) -> Result<StageRun<EcpeOutput>, PipelineError> {
        if label_source == LabelSource::None {
            let unlabeled = split
                .conversations
                .iter()
                .flat_map(|c| c.utterances.iter().map(move |u| (c, u)))
                .find(|(_, u)| u.predicted_emotion.is_none());
            if let Some((c, u)) = unlabeled {
                return Err(PipelineError::Precondition(format!(
                    "utterance {}:{} has no predicted emotion",
                    c.id, u.index
                )));
            }
        }
        let records = self
            .compiler
            .compile_split(split, Stage::Ecpe, self.variant, label_source, Mode::Infer)?;
        let mut report = StageReport::default();
        let replies = self.query(&records, &mut report).await;
        let mut parses = BTreeMap::new();
        for (record, reply) in records.iter().zip(&replies) {
            let parsed = parse_cause_reply(&reply.reply, record.target.index);
            report.replies_parsed += 1;
            report.dropped_indices += parsed.dropped_out_of_window;
            report.explicit_none += usize::from(parsed.explicit_none);
            parses.insert(record.target.clone(), parsed);
        }
        let categories: BTreeMap<UtteranceKey, ErcParse> = split
            .conversations
            .iter()
            .flat_map(|c| {
                c.utterances.iter().filter_map(move |u| {
                    let category = match label_source {
                        LabelSource::Gold => u.gold_emotion,
                        LabelSource::Predicted | LabelSource::None => u.predicted_emotion,
                    }?;
                    Some((
                        UtteranceKey::new(c.id.clone(), u.index),
                        ErcParse {
                            category,
                            quality: ParseQuality::Exact,
                        },
                    ))
                })
            })
            .collect();
        let pairs = assemble_pairs(split, &categories, &parses)?;
        Ok(StageRun {
            output: EcpeOutput { pairs, parses },
            records,
            replies,
            report,
        })
    }

    /// Single-stage extraction: one prompt per conversation.
    pub async fn run_joint_stage(&self, split: &DatasetSplit) -> Result<StageRun<PairsByConversation>, PipelineError> {
        let records = self
            .compiler
            .compile_split(split, Stage::Joint, self.variant, LabelSource::None, Mode::Infer)?;
        let mut report = StageReport::default();
        let replies = self.query(&records, &mut report).await;
        let mut pairs = PairsByConversation::new();
        for (record, reply) in records.iter().zip(&replies) {
            let parsed = parse_joint_reply(&reply.reply, record.target.index);
            report.replies_parsed += 1;
            report.dropped_indices += parsed.dropped_out_of_window;
            report.skipped_lines += parsed.skipped_lines;
            report.explicit_none += usize::from(parsed.explicit_none);
            if !parsed.pairs.is_empty() {
                pairs.insert(record.target.conversation.clone(), parsed.pairs);
            }
        }
        Ok(StageRun {
            output: pairs,
            records,
            replies,
            report,
        })
    }
}

/// Everything one evaluation run produced, before it is written out.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub predictions: BTreeMap<UtteranceKey, EmotionCategory>,
    pub pairs: PairsByConversation,
    pub erc: Option<StageRun<BTreeMap<UtteranceKey, ErcParse>>>,
    pub ecpe: Option<StageRun<EcpeOutput>>,
    pub joint: Option<StageRun<PairsByConversation>>,
    pub erc_score: Option<ScoreReport>,
    pub pair_score: Option<ScoreReport>,
    pub timings_ms: BTreeMap<String, u64>,
}

/// Settings for [`evaluate`] that do not concern file locations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalSettings {
    pub decomposition: Decomposition,
    pub label_policy: LabelPolicy,
    pub stages: StageSelection,
}

fn gold_labels(split: &DatasetSplit) -> Option<BTreeMap<UtteranceKey, EmotionCategory>> {
    split
        .conversations
        .iter()
        .flat_map(|c| c.utterances.iter().map(move |u| (c, u)))
        .map(|(c, u)| u.gold_emotion.map(|g| (UtteranceKey::new(c.id.clone(), u.index), g)))
        .collect()
}

/// Runs the configured workflow over `split` in memory.
///
/// `given_predictions` replaces the emotion-recognition stage when present.
pub async fn evaluate(
    pipeline: &Pipeline,
    split: &DatasetSplit,
    settings: EvalSettings,
    given_predictions: Option<BTreeMap<UtteranceKey, EmotionCategory>>,
) -> Result<Evaluation, PipelineError> {
    let mut timings_ms = BTreeMap::new();
    let mut eval = Evaluation {
        predictions: BTreeMap::new(),
        pairs: PairsByConversation::new(),
        erc: None,
        ecpe: None,
        joint: None,
        erc_score: None,
        pair_score: None,
        timings_ms: BTreeMap::new(),
    };

    if settings.decomposition == Decomposition::SingleStage {
        if settings.stages.ecpe {
            let started = Instant::now();
            let joint = pipeline.run_joint_stage(split).await?;
            timings_ms.insert("joint".to_string(), started.elapsed().as_millis() as u64);
            eval.pairs = joint.output.clone();
            eval.joint = Some(joint);
        }
    } else {
        if let Some(given) = given_predictions {
            eval.predictions = given;
        } else if settings.stages.erc {
            let started = Instant::now();
            let erc = pipeline.run_erc_stage(split).await?;
            timings_ms.insert("erc".to_string(), started.elapsed().as_millis() as u64);
            eval.predictions = erc.output.iter().map(|(k, p)| (k.clone(), p.category)).collect();
            eval.erc = Some(erc);
        }
        if settings.stages.ecpe {
            let started = Instant::now();
            let labeled = inject_predicted_emotions(split, &eval.predictions)?;
            let label_source = match (settings.decomposition, settings.label_policy) {
                (_, LabelPolicy::Gold) => LabelSource::Gold,
                (Decomposition::TwoIndependentStages, LabelPolicy::Predicted) => LabelSource::None,
                _ => LabelSource::Predicted,
            };
            let ecpe = pipeline.run_ecpe_stage(&labeled, label_source).await?;
            timings_ms.insert("ecpe".to_string(), started.elapsed().as_millis() as u64);
            eval.pairs = ecpe.output.pairs.clone();
            eval.ecpe = Some(ecpe);
        }
    }

    if settings.stages.score {
        let started = Instant::now();
        if !eval.predictions.is_empty() {
            if let Some(gold) = gold_labels(split) {
                eval.erc_score = Some(score_erc(&gold, &eval.predictions)?);
            }
        }
        if settings.stages.ecpe && split.has_gold_pairs() {
            let gold = split.gold_pairs().unwrap_or_default();
            match score_corpus(&gold, &eval.pairs) {
                Ok(report) => eval.pair_score = Some(report),
                // a labeled split may have no pairs at all; nothing to weigh
                Err(MetricsError::EmptyGold) => {}
                Err(e) => return Err(e.into()),
            }
        }
        timings_ms.insert("score".to_string(), started.elapsed().as_millis() as u64);
    }
    eval.timings_ms = timings_ms;
    Ok(eval)
}

/// Renders a pair list document: every conversation id mapped to its pairs.
pub fn pairs_document(split: &DatasetSplit, pairs: &PairsByConversation) -> String {
    let mut all: PairsByConversation = split.conversations.iter().map(|c| (c.id.clone(), Vec::new())).collect();
    for (id, found) in pairs {
        all.insert(id.clone(), found.clone());
    }
    crate::io::to_sorted_json(&all)
}

/// Reads a pair list document written by [`pairs_document`].
pub fn load_pairs(path: &Path) -> Result<PairsByConversation, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

pub fn replies_to_jsonl(replies: &[ReplyLine]) -> String {
    replies
        .iter()
        .map(|r| serde_json::to_string(r).expect("reply lines serialize") + "\n")
        .collect()
}

pub fn read_replies(path: &Path) -> Result<Vec<ReplyLine>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Config(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Parse outcome of one reply, as written by the `parse` command.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "stage")]
pub enum ParsedReply {
    #[serde(rename = "ERC")]
    Erc { id: String, parse: ErcParse },
    #[serde(rename = "ECPE")]
    Ecpe { id: String, parse: EcpeParse },
    #[serde(rename = "JOINT")]
    Joint { id: String, pairs: Vec<crate::corpus::EmotionCausePair>, skipped_lines: usize },
}

/// Parses replies according to the stage and target encoded in their record ids.
pub fn parse_replies(replies: &[ReplyLine]) -> Result<Vec<ParsedReply>, PipelineError> {
    replies
        .iter()
        .map(|r| {
            let (key, stage) = parse_record_id(&r.id)
                .ok_or_else(|| PipelineError::Precondition(format!("record id {:?} is not conversation:index:STAGE", r.id)))?;
            Ok(match stage {
                Stage::Erc => ParsedReply::Erc {
                    id: r.id.clone(),
                    parse: parse_emotion_reply(&r.reply),
                },
                Stage::Ecpe => ParsedReply::Ecpe {
                    id: r.id.clone(),
                    parse: parse_cause_reply(&r.reply, key.index),
                },
                Stage::Joint => {
                    let parsed = parse_joint_reply(&r.reply, key.index);
                    ParsedReply::Joint {
                        id: r.id.clone(),
                        pairs: parsed.pairs,
                        skipped_lines: parsed.skipped_lines,
                    }
                }
            })
        })
        .collect()
}

fn load_optional_sidecar(split: DatasetSplit, sidecar: Option<&Path>) -> Result<DatasetSplit, PipelineError> {
    match sidecar {
        None => Ok(split),
        Some(path) => {
            let (split, warnings) = corpus::attach_video_descriptions(&split, path)?;
            for w in warnings {
                log::warn!("{w}");
            }
            Ok(split)
        }
    }
}

/// Loads a split and applies the configured sidecar.
pub fn load_configured_split(cfg: &PipelineConfig, path: &Path, name: &str) -> Result<DatasetSplit, PipelineError> {
    let split = corpus::load_split(path, name)?;
    load_optional_sidecar(split, cfg.video_sidecar.as_deref())
}

pub fn compiler_for(cfg: &PipelineConfig) -> Result<TemplateCompiler, PipelineError> {
    let book = match &cfg.template_file {
        Some(path) => TemplateBook::from_path(path)?,
        None => TemplateBook::builtin(),
    };
    Ok(TemplateCompiler::new(book, cfg.compile))
}

pub fn open_cache(cfg: &PipelineConfig) -> Result<Option<ResponseCache>, PipelineError> {
    cfg.cache_dir
        .as_ref()
        .map(|dir| ResponseCache::open(dir).map_err(io_err(dir)))
        .transpose()
}

fn write_file(path: &Path, text: &str) -> Result<(), PipelineError> {
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

/// Runs the configured workflow end to end and writes every artifact under
/// `cfg.out_dir`:
///
/// | file | content |
/// |------|---------|
/// | `erc_records.jsonl`, `ecpe_records.jsonl`, `joint_records.jsonl` | compiled prompts |
/// | `*_replies.jsonl` | raw replies per record |
/// | `erc_predictions.json` | predicted emotion per utterance |
/// | `pairs.json` | predicted pairs per conversation |
/// | `score.json`, `erc_score.json` | score reports (when gold is available) |
/// | `run_report.json` | counts, parse quality, scores, config, runtime |
pub async fn run_full(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    cfg.validate_for_run()?;
    let eval_path = cfg.eval.as_deref().expect("validated");
    let split = load_configured_split(cfg, eval_path, "eval")?;
    let predictions = cfg.predictions.as_deref().map(corpus::load_predictions).transpose()?;
    let compiler = compiler_for(cfg)?;
    let cache = open_cache(cfg)?;
    let backend = backend_for(&cfg.endpoint, Some(&split))?;
    let client = InferenceClient::new(cfg.endpoint.clone(), backend, cache)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;

    let pipeline = Pipeline::new(compiler.clone(), client, cfg.variant);
    let settings = EvalSettings {
        decomposition: cfg.decomposition,
        label_policy: cfg.label_policy,
        stages: cfg.stages,
    };
    let eval = evaluate(&pipeline, &split, settings, predictions).await?;
    let report = build_report(cfg, &split, &pipeline, &eval, compiler.book().version());
    write_artifacts(&cfg.out_dir, &split, &eval, &report)?;
    Ok(report)
}

fn build_report(cfg: &PipelineConfig, split: &DatasetSplit, pipeline: &Pipeline, eval: &Evaluation, template_version: &str) -> RunReport {
    let stats = pipeline.client().stats();
    let lookups = stats.cache_hits + stats.cache_misses;
    RunReport {
        config: serde_json::to_value(cfg).expect("config serializes"),
        template_version: template_version.to_string(),
        grammar_version: GRAMMAR_VERSION.to_string(),
        counts: RunCounts {
            conversations: split.conversations.len(),
            utterances: split.utterance_count(),
            erc_predictions: eval.predictions.len(),
            pairs: eval.pairs.values().map(Vec::len).sum(),
        },
        erc: eval.erc.as_ref().map(|s| s.report.clone()),
        ecpe: eval.ecpe.as_ref().map(|s| s.report.clone()),
        joint: eval.joint.as_ref().map(|s| s.report.clone()),
        erc_score: eval.erc_score.clone(),
        pair_score: eval.pair_score.clone(),
        runtime: RuntimeStats {
            stage_timings_ms: eval.timings_ms.clone(),
            cache_hits: stats.cache_hits,
            cache_misses: stats.cache_misses,
            cache_hit_rate: if lookups == 0 { 0.0 } else { stats.cache_hits as f64 / lookups as f64 },
            network_calls: stats.network_calls,
        },
    }
}

fn write_artifacts(out: &Path, split: &DatasetSplit, eval: &Evaluation, report: &RunReport) -> Result<(), PipelineError> {
    let write_stage = |name: &str, records: &[InstructionRecord], replies: &[ReplyLine]| -> Result<(), PipelineError> {
        write_records(records, out.join(format!("{name}_records.jsonl")))?;
        write_file(&out.join(format!("{name}_replies.jsonl")), &replies_to_jsonl(replies))
    };
    if let Some(erc) = &eval.erc {
        write_stage("erc", &erc.records, &erc.replies)?;
    }
    if let Some(ecpe) = &eval.ecpe {
        write_stage("ecpe", &ecpe.records, &ecpe.replies)?;
    }
    if let Some(joint) = &eval.joint {
        write_stage("joint", &joint.records, &joint.replies)?;
    }
    if !eval.predictions.is_empty() {
        write_file(&out.join("erc_predictions.json"), &corpus::predictions_to_json(&eval.predictions))?;
    }
    write_file(&out.join("pairs.json"), &pairs_document(split, &eval.pairs))?;
    if let Some(score) = &eval.pair_score {
        write_file(&out.join("score.json"), &score.to_json())?;
    }
    if let Some(score) = &eval.erc_score {
        write_file(&out.join("erc_score.json"), &score.to_json())?;
    }
    let path = out.join("run_report.json");
    write_sorted_json(&path, report).map_err(io_err(&path))
}

/// Files written by [`emit_training_assets`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingAssets {
    pub jsonl: PathBuf,
    pub manifest: PathBuf,
    pub records: usize,
}

/// Writes a training JSONL for `stage` and a manifest pinning it by hash.
pub fn emit_training_assets(
    split: &DatasetSplit,
    stage: Stage,
    variant: TemplateVariant,
    compiler: &TemplateCompiler,
    manifest: &TrainingManifest,
    out_dir: &Path,
) -> Result<TrainingAssets, PipelineError> {
    if split.utterance_count() == 0 {
        return Err(PipelineError::Precondition(format!("split {} has nothing to train on", split.name.as_str())));
    }
    manifest.validate().map_err(PipelineError::Config)?;
    let records = compiler.compile_split(split, stage, variant, LabelSource::Gold, Mode::Train)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let stem = format!("{}_{}", split.name.as_str(), stage.as_str().to_lowercase());
    let jsonl = render_training_file(&records, out_dir.join(format!("{stem}.jsonl")))?;
    let manifest_path = write_manifest(manifest, &[(jsonl.clone(), stage, records.len())], compiler, &out_dir.join(format!("{stem}_manifest.json")))?;
    Ok(TrainingAssets {
        jsonl,
        manifest: manifest_path,
        records: records.len(),
    })
}

/// Writes `manifest` with dataset references hashed from the files on disk.
pub fn write_manifest(
    manifest: &TrainingManifest,
    datasets: &[(PathBuf, Stage, usize)],
    compiler: &TemplateCompiler,
    path: &Path,
) -> Result<PathBuf, PipelineError> {
    let mut manifest = manifest.clone();
    manifest.template_version = compiler.book().version().to_string();
    manifest.datasets = datasets
        .iter()
        .map(|(file, stage, records)| {
            let bytes = std::fs::read(file).map_err(io_err(file))?;
            Ok(DatasetRef {
                path: file.file_name().map_or_else(|| file.display().to_string(), |n| n.to_string_lossy().into_owned()),
                sha256: sha256_hex(&bytes),
                records: *records,
                stage: *stage,
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    write_sorted_json(path, &manifest).map_err(io_err(path))?;
    Ok(path.to_path_buf())
}
