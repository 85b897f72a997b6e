use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use emocause::corpus::{self, CorpusError, DatasetSplit};
use emocause::inference::{CompletionJob, InferenceClient, InferenceError, MockSpec};
use emocause::io::{to_sorted_json, write_atomic};
use emocause::metrics::{score_corpus, score_erc};
use emocause::pipeline::{
    self, backend_for, build_iterative_dataset, compiler_for, emit_training_assets, load_pairs, open_cache,
    parse_replies, read_replies, replies_to_jsonl, run_full, run_pilot, EvalSettings, PipelineConfig, PipelineError,
    ReplyLine,
};
use emocause::templates::{read_record_lines, write_records, LabelSource, Modality, Mode, Stage, Structure};

/// Emotion-cause pair extraction toolkit: corpus checks, prompt compilation,
/// endpoint inference, reply parsing, scoring and training-data emission.
#[derive(Parser)]
#[command(name = "emocause", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Reply cache directory.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Where artifacts are written.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Prompt structure: task, task+example or task+example+candidate.
    #[arg(long, global = true)]
    variant: Option<Structure>,
    /// text or text+video.
    #[arg(long, global = true)]
    modality: Option<Modality>,
    /// Answer from a replies file (JSON object id -> reply), `gold`, or `constant:<reply>`
    /// instead of calling the configured endpoint.
    #[arg(long, global = true)]
    mock_endpoint: Option<MockSpec>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a canonical split and report every violated invariant.
    Validate {
        dataset: PathBuf,
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Convert an official-format file to the canonical schema.
    Convert {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Compile a split into instruction records.
    Compile {
        dataset: PathBuf,
        #[arg(long)]
        stage: Stage,
        /// gold, predicted or none.
        #[arg(long, default_value = "gold")]
        labels: LabelSource,
        /// train or infer.
        #[arg(long, default_value = "infer")]
        mode: Mode,
        /// Predicted emotions to inject before compiling.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Send compiled records to the endpoint and store the replies.
    Infer {
        records: PathBuf,
        /// Labeled split backing `--mock-endpoint gold`.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Parse stored replies.
    Parse {
        replies: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Score a pair list against a labeled split.
    Score {
        /// Canonical split holding the gold pairs.
        #[arg(long)]
        gold: PathBuf,
        /// Pair list document.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Emotion predictions, scored against gold labels.
        #[arg(long)]
        erc_pred: Option<PathBuf>,
    },
    /// Write a training JSONL and its manifest.
    EmitTrain {
        #[arg(long)]
        stage: Stage,
        /// Overrides `train` from the configuration.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Write a self-training JSONL from gold and inferred pairs.
    Iterate {
        /// Overrides `train` from the configuration.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Split the inferred pairs belong to.
        #[arg(long)]
        inference: PathBuf,
        /// Inferred pair list document.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compare the configured pilot endpoints zero-shot.
    Pilot {
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Run the whole workflow over the eval split.
    Run {
        #[arg(long)]
        eval: Option<PathBuf>,
    },
}

/// A failure and the exit code it maps to.
#[derive(Debug)]
enum Failure {
    Validation(String),
    Config(String),
    Endpoint(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Config(_) => 2,
            Failure::Endpoint(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Config(m) | Failure::Endpoint(m) => m,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let message = e.to_string();
        match e {
            PipelineError::Config(_) | PipelineError::Io { .. } => Failure::Config(message),
            PipelineError::Corpus(CorpusError::Io { .. }) => Failure::Config(message),
            PipelineError::Template(emocause::templates::TemplateError::Io { .. }) => Failure::Config(message),
            PipelineError::Inference(InferenceError::Config(_)) => Failure::Config(message),
            PipelineError::Inference(_) => Failure::Endpoint(message),
            _ => Failure::Validation(message),
        }
    }
}

macro_rules! impl_from_via_pipeline {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                PipelineError::from(e).into()
            }
        }
    )*};
}

impl_from_via_pipeline!(
    CorpusError,
    emocause::templates::TemplateError,
    emocause::metrics::MetricsError,
    InferenceError
);

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    match runtime.block_on(dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(dir) = &cli.cache_dir {
        cfg.cache_dir = Some(dir.clone());
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(structure) = cli.variant {
        cfg.variant.structure = structure;
    }
    if let Some(modality) = cli.modality {
        cfg.variant.modality = modality;
    }
    if let Some(mock) = &cli.mock_endpoint {
        cfg.endpoint.mock = Some(mock.clone());
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?;
    }
    write_atomic(path, text.as_bytes()).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn required(path: Option<&PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    path.cloned().ok_or_else(|| Failure::Config(format!("no {what} dataset given (flag or configuration)")))
}

fn load_with_sidecar(cfg: &PipelineConfig, path: &Path, name: &str, sidecar: Option<&PathBuf>) -> Result<DatasetSplit, Failure> {
    let split = pipeline::load_configured_split(cfg, path, name)?;
    match sidecar {
        None => Ok(split),
        Some(sidecar) => {
            let (split, warnings) = corpus::attach_video_descriptions(&split, sidecar)?;
            warnings.iter().for_each(|w| log::warn!("{w}"));
            Ok(split)
        }
    }
}

async fn dispatch(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Validate { dataset, sidecar } => {
            let split = corpus::load_split_unchecked(dataset, "validate")?;
            let report = corpus::validate_split(&split);
            let mut sidecar_warnings = Vec::new();
            if let Some(sidecar) = sidecar {
                sidecar_warnings = corpus::attach_video_descriptions(&split, sidecar)?.1;
            }
            for w in report.warnings.iter().map(|f| &f.message).chain(&sidecar_warnings) {
                eprintln!("warning: {w}");
            }
            println!("{}", to_sorted_json(&report));
            if report.is_valid() {
                Ok(())
            } else {
                Err(Failure::Validation(format!(
                    "{} violation(s) in {}",
                    report.findings.len(),
                    dataset.display()
                )))
            }
        }
        Command::Convert { input, output, split } => {
            let converted = corpus::ecf::convert_file(input, split)?;
            write_text(output, &converted.to_canonical_json())?;
            eprintln!(
                "{} conversations, {} utterances -> {}",
                converted.conversations.len(),
                converted.utterance_count(),
                output.display()
            );
            Ok(())
        }
        Command::Compile {
            dataset,
            stage,
            labels,
            mode,
            predictions,
            sidecar,
            output,
        } => {
            let mut split = load_with_sidecar(&cfg, dataset, "compile", sidecar.as_ref())?;
            if let Some(path) = predictions {
                split = corpus::inject_predicted_emotions(&split, &corpus::load_predictions(path)?)?;
            }
            let compiler = compiler_for(&cfg)?;
            let records = compiler.compile_split(&split, *stage, cfg.variant, *labels, *mode)?;
            let output = output
                .clone()
                .unwrap_or_else(|| cfg.out_dir.join(format!("{}_records.jsonl", stage.as_str().to_lowercase())));
            if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?;
            }
            if *mode == Mode::Train {
                emocause::templates::render_training_file(&records, &output)?;
            } else {
                write_records(&records, &output)?;
            }
            eprintln!("{} records -> {}", records.len(), output.display());
            Ok(())
        }
        Command::Infer { records, gold, output } => {
            let lines = read_record_lines(records)?;
            let gold = gold.as_ref().map(|p| corpus::load_split(p, "gold")).transpose()?;
            let backend = backend_for(&cfg.endpoint, gold.as_ref())?;
            let client = InferenceClient::new(cfg.endpoint.clone(), Arc::clone(&backend), open_cache(&cfg)?)?;
            let jobs: Vec<CompletionJob> = lines.iter().map(CompletionJob::from).collect();
            let results = client.complete_all(&jobs).await;
            let mut failures = 0;
            let replies: Vec<ReplyLine> = jobs
                .iter()
                .zip(results)
                .map(|(job, r)| match r {
                    Ok(done) => ReplyLine {
                        id: job.id.clone(),
                        reply: done.reply,
                        error: None,
                    },
                    Err(e) => {
                        failures += 1;
                        ReplyLine {
                            id: job.id.clone(),
                            reply: String::new(),
                            error: Some(e.to_string()),
                        }
                    }
                })
                .collect();
            let output = output.clone().unwrap_or_else(|| cfg.out_dir.join("replies.jsonl"));
            write_text(&output, &replies_to_jsonl(&replies))?;
            let stats = client.stats();
            eprintln!(
                "{} replies -> {} (cache hits {}, network calls {})",
                replies.len(),
                output.display(),
                stats.cache_hits,
                stats.network_calls
            );
            if failures > 0 {
                return Err(Failure::Endpoint(format!("{failures} request(s) failed after retries")));
            }
            Ok(())
        }
        Command::Parse { replies, output } => {
            let parsed = parse_replies(&read_replies(replies)?)?;
            let text = to_sorted_json(&parsed) + "\n";
            match output {
                Some(path) => write_text(path, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Score { gold, pred, erc_pred } => {
            let split = corpus::load_split(gold, "gold")?;
            if pred.is_none() && erc_pred.is_none() {
                return Err(Failure::Config("nothing to score: pass --pred and/or --erc-pred".into()));
            }
            if let Some(path) = pred {
                let gold_pairs = split
                    .gold_pairs()
                    .ok_or_else(|| Failure::Validation(format!("{} has no gold pairs", gold.display())))?;
                let report = score_corpus(&gold_pairs, &load_pairs(path)?)?;
                write_text(&cfg.out_dir.join("score.json"), &report.to_json())?;
                print!("{}", report.render_table());
            }
            if let Some(path) = erc_pred {
                let gold_labels: Option<BTreeMap<_, _>> = split
                    .conversations
                    .iter()
                    .flat_map(|c| c.utterances.iter().map(move |u| (c, u)))
                    .map(|(c, u)| u.gold_emotion.map(|g| (corpus::UtteranceKey::new(c.id.clone(), u.index), g)))
                    .collect();
                let gold_labels =
                    gold_labels.ok_or_else(|| Failure::Validation(format!("{} lacks gold emotions", gold.display())))?;
                let report = score_erc(&gold_labels, &corpus::load_predictions(path)?)?;
                write_text(&cfg.out_dir.join("erc_score.json"), &report.to_json())?;
                print!("{}", report.render_table());
            }
            Ok(())
        }
        Command::EmitTrain { stage, dataset } => {
            let path = required(dataset.as_ref().or(cfg.train.as_ref()), "train")?;
            let split = pipeline::load_configured_split(&cfg, &path, "train")?;
            let compiler = compiler_for(&cfg)?;
            let assets = emit_training_assets(&split, *stage, cfg.variant, &compiler, &cfg.manifest, &cfg.out_dir)?;
            eprintln!(
                "{} records -> {}, manifest {}",
                assets.records,
                assets.jsonl.display(),
                assets.manifest.display()
            );
            Ok(())
        }
        Command::Iterate {
            train,
            inference,
            pairs,
            output,
        } => {
            let train_path = required(train.as_ref().or(cfg.train.as_ref()), "train")?;
            let train = pipeline::load_configured_split(&cfg, &train_path, "train")?;
            let inference_split = pipeline::load_configured_split(&cfg, inference, "inference")?;
            let inferred = load_pairs(pairs)?;
            let compiler = compiler_for(&cfg)?;
            let output = output.clone().unwrap_or_else(|| cfg.out_dir.join("iterative_ecpe.jsonl"));
            let dataset = build_iterative_dataset(&compiler, &train, &inference_split, &inferred, cfg.variant, &output)?;
            let manifest = output.with_extension("manifest.json");
            pipeline::write_manifest(&cfg.manifest, &[(output.clone(), Stage::Ecpe, dataset.total())], &compiler, &manifest)?;
            eprintln!(
                "{} gold + {} self-training records -> {}",
                dataset.gold_records,
                dataset.inferred_records,
                output.display()
            );
            Ok(())
        }
        Command::Pilot { eval } => {
            let path = required(eval.as_ref().or(cfg.eval.as_ref()), "eval")?;
            let split = pipeline::load_configured_split(&cfg, &path, "eval")?;
            let compiler = compiler_for(&cfg)?;
            let settings = EvalSettings {
                decomposition: cfg.decomposition,
                label_policy: cfg.label_policy,
                stages: cfg.stages,
            };
            let report = run_pilot(&cfg.pilot_endpoints, &split, &compiler, cfg.variant, settings).await?;
            write_text(&cfg.out_dir.join("pilot.json"), &(report.to_json() + "\n"))?;
            print!("{}", report.render_table());
            Ok(())
        }
        Command::Run { eval } => {
            let mut cfg = cfg;
            if let Some(path) = eval {
                cfg.eval = Some(path.clone());
            }
            let report = run_full(&cfg).await?;
            if let Some(score) = &report.pair_score {
                print!("{}", score.render_table());
            }
            let failures: usize = [&report.erc, &report.ecpe, &report.joint]
                .into_iter()
                .flatten()
                .map(|s| s.endpoint_failures.len())
                .sum();
            eprintln!(
                "{} pairs over {} conversations -> {}",
                report.counts.pairs,
                report.counts.conversations,
                cfg.out_dir.display()
            );
            if failures > 0 {
                return Err(Failure::Endpoint(format!("{failures} request(s) failed after retries")));
            }
            Ok(())
        }
    }
}
