use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{Modality, Stage, Structure, TemplateError};

const BUILTIN_V1: &str = include_str!("../../templates/wording-v1.toml");

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Headings {
    pub task_definition: String,
    pub example: String,
    pub conversation: String,
    pub candidates: String,
    pub video: String,
    pub target: String,
    pub question: String,
}

/// The stage-specific text blocks, after overrides are resolved.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageWording {
    pub task_definition: String,
    pub question: String,
    pub example: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Override {
    stage: Stage,
    structure: Structure,
    modality: Modality,
    task_definition: Option<String>,
    question: Option<String>,
    example: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct WordingFile {
    version: String,
    headings: Headings,
    stages: BTreeMap<Stage, StageWording>,
    #[serde(default)]
    overrides: Vec<Override>,
}

/// A versioned set of prompt wordings.
#[derive(Debug, Clone)]
pub struct TemplateBook {
    file: WordingFile,
}

impl TemplateBook {
    /// The wording shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN_V1).expect("builtin wording file parses")
    }

    pub fn from_toml(document: &str) -> Result<Self, TemplateError> {
        let file: WordingFile =
            toml::from_str(document).map_err(|e| TemplateError::Wording(e.to_string()))?;
        for stage in [Stage::Erc, Stage::Ecpe, Stage::Joint] {
            if !file.stages.contains_key(&stage) {
                return Err(TemplateError::Wording(format!("missing [stages.{stage}] table")));
            }
        }
        Ok(Self { file })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        let document = std::fs::read_to_string(path)
            .map_err(|e| TemplateError::Wording(format!("{}: {e}", path.display())))?;
        Self::from_toml(&document)
    }

    pub fn version(&self) -> &str {
        &self.file.version
    }

    pub fn headings(&self) -> &Headings {
        &self.file.headings
    }

    pub fn wording(&self, stage: Stage, structure: Structure, modality: Modality) -> StageWording {
        let mut wording = self.file.stages[&stage].clone();
        let matching = self
            .file
            .overrides
            .iter()
            .filter(|o| o.stage == stage && o.structure == structure && o.modality == modality);
        for o in matching {
            if let Some(text) = &o.task_definition {
                wording.task_definition = text.clone();
            }
            if let Some(text) = &o.question {
                wording.question = text.clone();
            }
            if let Some(text) = &o.example {
                wording.example = text.clone();
            }
        }
        wording
    }
}

impl Default for TemplateBook {
    fn default() -> Self {
        Self::builtin()
    }
}
