use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, TrainingManifest};
use crate::inference::EndpointConfig;
use crate::templates::{CompileOptions, LabelSource, TemplateVariant};

/// How the extraction task is split into model calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decomposition {
    /// One prompt per conversation asking for every pair.
    SingleStage,
    /// Emotion recognition, then cause extraction without rendered labels.
    TwoIndependentStages,
    /// Emotion recognition, then cause extraction over labeled utterances.
    #[default]
    EcpeWithEmotionLabels,
}

impl std::str::FromStr for Decomposition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single-stage" => Ok(Decomposition::SingleStage),
            "two-independent-stages" => Ok(Decomposition::TwoIndependentStages),
            "ecpe-with-emotion-labels" => Ok(Decomposition::EcpeWithEmotionLabels),
            _ => Err(format!(
                "unknown decomposition {s:?} (expected single-stage, two-independent-stages or ecpe-with-emotion-labels)"
            )),
        }
    }
}

/// Where cause extraction takes emotion labels from at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelPolicy {
    /// Labels predicted by the emotion-recognition stage.
    #[default]
    Predicted,
    /// Gold labels from the evaluation split.
    Gold,
}

impl LabelPolicy {
    pub fn label_source(self) -> LabelSource {
        match self {
            LabelPolicy::Predicted => LabelSource::Predicted,
            LabelPolicy::Gold => LabelSource::Gold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSelection {
    pub erc: bool,
    pub ecpe: bool,
    pub score: bool,
}

impl Default for StageSelection {
    fn default() -> Self {
        Self {
            erc: true,
            ecpe: true,
            score: true,
        }
    }
}

/// Everything `run`, `emit-train`, `iterate` and `pilot` need. Mirrors the
/// TOML configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub train: Option<PathBuf>,
    pub trial: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    /// Video descriptions applied to every loaded split.
    pub video_sidecar: Option<PathBuf>,
    /// Precomputed emotion predictions for the evaluation split; replaces the ERC stage.
    pub predictions: Option<PathBuf>,
    pub template_file: Option<PathBuf>,
    pub variant: TemplateVariant,
    pub compile: CompileOptions,
    pub label_policy: LabelPolicy,
    pub decomposition: Decomposition,
    pub endpoint: EndpointConfig,
    /// Endpoints compared by `pilot`.
    pub pilot_endpoints: Vec<EndpointConfig>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub stages: StageSelection,
    pub manifest: TrainingManifest,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: None,
            trial: None,
            eval: None,
            video_sidecar: None,
            predictions: None,
            template_file: None,
            variant: TemplateVariant::default(),
            compile: CompileOptions::default(),
            label_policy: LabelPolicy::default(),
            decomposition: Decomposition::default(),
            endpoint: EndpointConfig::default(),
            pilot_endpoints: Vec::new(),
            cache_dir: None,
            out_dir: PathBuf::from("out"),
            stages: StageSelection::default(),
            manifest: TrainingManifest::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(document: &str) -> Result<Self, PipelineError> {
        toml::from_str(document).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a TOML file. Relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.train,
            &mut self.trial,
            &mut self.eval,
            &mut self.video_sidecar,
            &mut self.predictions,
            &mut self.template_file,
            &mut self.cache_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.out_dir);
        for endpoint in std::iter::once(&mut self.endpoint).chain(&mut self.pilot_endpoints) {
            if let Some(crate::inference::MockSpec::Replies(p)) = &mut endpoint.mock {
                fix(p);
            }
        }
    }

    /// Checks what an evaluation run needs.
    pub fn validate_for_run(&self) -> Result<(), PipelineError> {
        let config = |msg: &str| Err(PipelineError::Config(msg.to_string()));
        if self.eval.is_none() {
            return config("an eval dataset is required to run the pipeline");
        }
        let needs_erc = self.decomposition != Decomposition::SingleStage
            && self.stages.ecpe
            && self.label_policy == LabelPolicy::Predicted;
        if needs_erc && !self.stages.erc && self.predictions.is_none() {
            return config("cause extraction with predicted labels needs the erc stage or a predictions file");
        }
        self.endpoint.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.validate_common()
    }

    /// Checks what training-data emission needs.
    pub fn validate_for_emission(&self) -> Result<(), PipelineError> {
        if self.train.is_none() {
            return Err(PipelineError::Config("a train dataset is required to emit training assets".into()));
        }
        self.validate_common()
    }

    fn validate_common(&self) -> Result<(), PipelineError> {
        self.manifest.validate().map_err(PipelineError::Config)?;
        if self.compile.char_budget == 0 {
            return Err(PipelineError::Config("compile.char_budget must be positive".into()));
        }
        Ok(())
    }
}
