//! Compiles conversations into instruction records.
//!
//! A prompt is a fixed sequence of sections: task definition, optional
//! demonstration, the conversation, optional candidate utterances, optional
//! video description, the target utterance, and the question line. Which
//! optional sections appear is decided by the [`TemplateVariant`].

mod wording;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, DatasetSplit, EmotionCategory, EmotionCausePair, Utterance, UtteranceKey};
use crate::io::write_atomic;

pub use wording::{Headings, StageWording, TemplateBook};

/// Canonical reply for a target with no cause.
pub const NO_CAUSE: &str = "None";

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("target {target} outside 1..={len} in conversation {conversation:?}")]
    TargetOutOfRange { conversation: String, target: u32, len: usize },
    #[error("utterance {key} has no {label_source:?} emotion label")]
    MissingLabel { key: UtteranceKey, label_source: LabelSource },
    #[error("target {0} is labeled neutral and cannot head an emotion-cause pair")]
    NeutralTarget(UtteranceKey),
    #[error("training record for {0} needs gold annotations")]
    MissingGold(UtteranceKey),
    #[error("record {0} has an empty expected output")]
    EmptyOutput(String),
    #[error("wording file: {0}")]
    Wording(String),
    #[error("malformed record line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "ERC")]
    Erc,
    #[serde(rename = "ECPE")]
    Ecpe,
    /// Single-stage extraction: one prompt per conversation asking for all pairs.
    #[serde(rename = "JOINT")]
    Joint,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Erc => "ERC",
            Stage::Ecpe => "ECPE",
            Stage::Joint => "JOINT",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ERC" => Ok(Stage::Erc),
            "ECPE" => Ok(Stage::Ecpe),
            "JOINT" => Ok(Stage::Joint),
            _ => Err(format!("unknown stage {s:?} (expected erc, ecpe or joint)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Structure {
    TaskOnly,
    TaskPlusExample,
    #[default]
    TaskPlusExamplePlusCandidate,
}

impl Structure {
    pub fn has_example(self) -> bool {
        !matches!(self, Structure::TaskOnly)
    }

    pub fn has_candidates(self) -> bool {
        matches!(self, Structure::TaskPlusExamplePlusCandidate)
    }
}

impl FromStr for Structure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "task" | "TaskOnly" => Ok(Structure::TaskOnly),
            "task+example" | "TaskPlusExample" => Ok(Structure::TaskPlusExample),
            "task+example+candidate" | "TaskPlusExamplePlusCandidate" => {
                Ok(Structure::TaskPlusExamplePlusCandidate)
            }
            _ => Err(format!(
                "unknown variant {s:?} (expected task, task+example or task+example+candidate)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Modality {
    #[default]
    TextOnly,
    TextPlusVideo,
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "TextOnly" => Ok(Modality::TextOnly),
            "text+video" | "TextPlusVideo" => Ok(Modality::TextPlusVideo),
            _ => Err(format!("unknown modality {s:?} (expected text or text+video)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TemplateVariant {
    pub structure: Structure,
    pub modality: Modality,
}

impl TemplateVariant {
    pub const fn new(structure: Structure, modality: Modality) -> Self {
        Self { structure, modality }
    }
}

/// Which emotion labels are rendered next to utterances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Gold,
    #[default]
    Predicted,
    /// No labels rendered.
    None,
}

impl FromStr for LabelSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gold" => Ok(LabelSource::Gold),
            "predicted" => Ok(LabelSource::Predicted),
            "none" => Ok(LabelSource::None),
            _ => Err(format!("unknown label source {s:?} (expected gold, predicted or none)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Mode::Train),
            "infer" => Ok(Mode::Infer),
            _ => Err(format!("unknown mode {s:?} (expected train or infer)")),
        }
    }
}

/// Which utterances the candidate block offers as causes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateWindow {
    /// Utterances `1..=target`; required for self-cause pairs.
    #[default]
    Inclusive,
    /// Utterances `1..target`.
    Exclusive,
}

impl CandidateWindow {
    pub fn last_candidate(self, target: u32) -> u32 {
        match self {
            CandidateWindow::Inclusive => target,
            CandidateWindow::Exclusive => target - 1,
        }
    }
}

/// Rendered prompt sections, in prompt order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSections {
    pub task_definition: String,
    pub example_block: Option<String>,
    pub conversation_block: String,
    pub candidate_block: Option<String>,
    pub video_block: Option<String>,
    /// Absent only for single-stage prompts, which have no target utterance.
    pub target_block: Option<String>,
    pub question_line: String,
}

impl PromptSections {
    pub fn render(&self) -> String {
        let blocks: [Option<&str>; 7] = [
            Some(&self.task_definition),
            self.example_block.as_deref(),
            Some(&self.conversation_block),
            self.candidate_block.as_deref(),
            self.video_block.as_deref(),
            self.target_block.as_deref(),
            Some(&self.question_line),
        ];
        blocks.into_iter().flatten().collect::<Vec<_>>().join("\n\n")
    }
}

/// One compiled prompt for one target at one stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstructionRecord {
    pub record_id: String,
    pub stage: Stage,
    pub prompt: String,
    pub expected_output: String,
    pub variant: TemplateVariant,
    pub target: UtteranceKey,
    /// Conversation lines dropped to fit the character budget.
    pub dropped_context_lines: usize,
}

impl InstructionRecord {
    pub fn make_id(key: &UtteranceKey, stage: Stage) -> String {
        format!("{}:{}:{}", key.conversation, key.index, stage)
    }

    pub fn to_line(&self) -> RecordLine {
        RecordLine {
            id: self.record_id.clone(),
            stage: self.stage,
            instruction: self.prompt.clone(),
            output: self.expected_output.clone(),
        }
    }
}

/// Splits a record id `conversation:index:STAGE[:tag]` from the right, so
/// conversation ids may themselves contain colons.
pub fn parse_record_id(id: &str) -> Option<(UtteranceKey, Stage)> {
    let mut id = id;
    loop {
        let (rest, last) = id.rsplit_once(':')?;
        if let Ok(stage) = Stage::from_str(last) {
            let (conversation, index) = rest.rsplit_once(':')?;
            let index = index.parse().ok()?;
            return Some((UtteranceKey::new(conversation, index), stage));
        }
        // trailing origin tag such as ":gold" or ":selftrain"
        id = rest;
    }
}

/// One line of an instruction JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordLine {
    pub id: String,
    pub stage: Stage,
    pub instruction: String,
    pub output: String,
}

/// Compiler knobs beyond the wording itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompileOptions {
    pub window: CandidateWindow,
    /// Upper bound on prompt length in characters (about four per token).
    pub char_budget: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            window: CandidateWindow::Inclusive,
            char_budget: 8192,
        }
    }
}

/// Renders `"‹index›_‹emotion›. ‹speaker›: ‹text›"`, or `"‹index›. ‹speaker›: ‹text›"` without a label.
pub fn format_utterance_line(u: &Utterance, label_source: LabelSource) -> Option<String> {
    let label = match label_source {
        LabelSource::None => return Some(format!("{}. {}: {}", u.index, u.speaker, u.text)),
        LabelSource::Gold => u.gold_emotion?,
        LabelSource::Predicted => u.predicted_emotion?,
    };
    Some(format!("{}_{}. {}: {}", u.index, label, u.speaker, u.text))
}

fn label_of(u: &Utterance, source: LabelSource) -> Option<EmotionCategory> {
    match source {
        LabelSource::Gold => u.gold_emotion,
        LabelSource::Predicted => u.predicted_emotion,
        LabelSource::None => u.predicted_emotion.or(u.gold_emotion),
    }
}

/// The label deciding whether an utterance gets an ECPE record. With
/// [`LabelSource::None`] nothing is rendered, but predicted (then gold)
/// labels still filter out neutral targets.
pub fn eligibility_label(u: &Utterance, source: LabelSource) -> Option<EmotionCategory> {
    label_of(u, source)
}

/// Renders a comma-separated cause list, or [`NO_CAUSE`].
pub fn render_causes(causes: &[u32]) -> String {
    if causes.is_empty() {
        NO_CAUSE.to_string()
    } else {
        causes.iter().map(u32::to_string).collect::<Vec<_>>().join(", ")
    }
}

/// Renders single-stage answers: one `‹index›_‹emotion›: ‹causes›` line per emotion utterance.
pub fn render_joint_pairs(pairs: &[EmotionCausePair]) -> String {
    let mut sorted = pairs.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.is_empty() {
        return NO_CAUSE.to_string();
    }
    let mut lines: Vec<String> = Vec::new();
    for chunk in sorted.chunk_by(|a, b| a.emotion_index == b.emotion_index && a.category == b.category) {
        let causes: Vec<u32> = chunk.iter().map(|p| p.cause_index).collect();
        lines.push(format!("{}_{}: {}", chunk[0].emotion_index, chunk[0].category, render_causes(&causes)));
    }
    lines.join("\n")
}

/// Turns conversations into [`InstructionRecord`]s.
#[derive(Debug, Clone, Default)]
pub struct TemplateCompiler {
    book: TemplateBook,
    options: CompileOptions,
}

impl TemplateCompiler {
    pub fn new(book: TemplateBook, options: CompileOptions) -> Self {
        Self { book, options }
    }

    pub fn book(&self) -> &TemplateBook {
        &self.book
    }

    pub fn options(&self) -> CompileOptions {
        self.options
    }

    fn section(&self, heading: &str, body: &str) -> String {
        format!("{heading}\n{body}")
    }

    fn check_target(c: &Conversation, target: u32) -> Result<&Utterance, TemplateError> {
        c.utterance(target).ok_or_else(|| TemplateError::TargetOutOfRange {
            conversation: c.id.clone(),
            target,
            len: c.len(),
        })
    }

    fn line(c: &Conversation, u: &Utterance, source: LabelSource) -> Result<String, TemplateError> {
        format_utterance_line(u, source).ok_or_else(|| TemplateError::MissingLabel {
            key: UtteranceKey::new(c.id.clone(), u.index),
            label_source: source,
        })
    }

    /// Builds the sections and applies the character budget.
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        &self,
        stage: Stage,
        variant: TemplateVariant,
        conversation_lines: Vec<String>,
        candidate_lines: Option<Vec<String>>,
        video: Option<&str>,
        target_line: Option<String>,
    ) -> (PromptSections, usize) {
        let h = self.book.headings();
        let wording = self.book.wording(stage, variant.structure, variant.modality);
        let task_definition = self.section(&h.task_definition, &wording.task_definition);
        let example_block = variant
            .structure
            .has_example()
            .then(|| self.section(&h.example, &wording.example));
        let candidate_block = candidate_lines.map(|lines| self.section(&h.candidates, &lines.join("\n")));
        let video_block = match variant.modality {
            Modality::TextPlusVideo => video.map(|d| self.section(&h.video, d)),
            Modality::TextOnly => None,
        };
        let target_block = target_line.map(|line| self.section(&h.target, &line));
        let question_line = self.section(&h.question, &wording.question);

        let mut sections = PromptSections {
            task_definition,
            example_block,
            conversation_block: String::new(),
            candidate_block,
            video_block,
            target_block,
            question_line,
        };
        let mut dropped = 0;
        loop {
            let kept = &conversation_lines[dropped..];
            sections.conversation_block = self.section(&h.conversation, &kept.join("\n"));
            let length = sections.render().chars().count();
            if length <= self.options.char_budget || dropped == conversation_lines.len() {
                break;
            }
            dropped += 1;
        }
        (sections, dropped)
    }

    /// Prompt sections for an emotion-recognition record.
    pub fn erc_sections(
        &self,
        c: &Conversation,
        target: u32,
        variant: TemplateVariant,
    ) -> Result<(PromptSections, usize), TemplateError> {
        let target_utterance = Self::check_target(c, target)?;
        let lines = c
            .utterances
            .iter()
            .map(|u| Self::line(c, u, LabelSource::None))
            .collect::<Result<Vec<_>, _>>()?;
        let target_line = Self::line(c, target_utterance, LabelSource::None)?;
        Ok(self.assemble(
            Stage::Erc,
            variant,
            lines,
            None,
            target_utterance.video_description.as_deref(),
            Some(target_line),
        ))
    }

    pub fn compile_erc_record(
        &self,
        c: &Conversation,
        target: u32,
        variant: TemplateVariant,
        mode: Mode,
    ) -> Result<InstructionRecord, TemplateError> {
        let (sections, dropped) = self.erc_sections(c, target, variant)?;
        let key = UtteranceKey::new(c.id.clone(), target);
        let expected_output = match mode {
            Mode::Infer => String::new(),
            Mode::Train => c
                .utterance(target)
                .and_then(|u| u.gold_emotion)
                .ok_or_else(|| TemplateError::MissingGold(key.clone()))?
                .to_string(),
        };
        Ok(InstructionRecord {
            record_id: InstructionRecord::make_id(&key, Stage::Erc),
            stage: Stage::Erc,
            prompt: sections.render(),
            expected_output,
            variant,
            target: key,
            dropped_context_lines: dropped,
        })
    }

    /// Prompt sections for a cause-extraction record.
    pub fn ecpe_sections(
        &self,
        c: &Conversation,
        target: u32,
        variant: TemplateVariant,
        label_source: LabelSource,
    ) -> Result<(PromptSections, usize), TemplateError> {
        let target_utterance = Self::check_target(c, target)?;
        let key = UtteranceKey::new(c.id.clone(), target);
        if eligibility_label(target_utterance, label_source).is_some_and(EmotionCategory::is_neutral) {
            return Err(TemplateError::NeutralTarget(key));
        }
        let mut lines = Vec::with_capacity(c.len());
        for u in &c.utterances {
            let line = if u.index > target && label_of(u, label_source).is_none() {
                // labels after the target are context only
                Self::line(c, u, LabelSource::None)?
            } else {
                Self::line(c, u, label_source)?
            };
            lines.push(line);
        }
        let candidate_lines = variant.structure.has_candidates().then(|| {
            let last = self.options.window.last_candidate(target) as usize;
            lines[..last].to_vec()
        });
        let target_line = lines[target as usize - 1].clone();
        Ok(self.assemble(
            Stage::Ecpe,
            variant,
            lines,
            candidate_lines,
            target_utterance.video_description.as_deref(),
            Some(target_line),
        ))
    }

    pub fn compile_ecpe_record(
        &self,
        c: &Conversation,
        target: u32,
        variant: TemplateVariant,
        label_source: LabelSource,
        mode: Mode,
    ) -> Result<InstructionRecord, TemplateError> {
        let (sections, dropped) = self.ecpe_sections(c, target, variant, label_source)?;
        let key = UtteranceKey::new(c.id.clone(), target);
        let expected_output = match mode {
            Mode::Infer => String::new(),
            Mode::Train => {
                let causes = c.gold_causes(target).ok_or_else(|| TemplateError::MissingGold(key.clone()))?;
                render_causes(&causes)
            }
        };
        Ok(InstructionRecord {
            record_id: InstructionRecord::make_id(&key, Stage::Ecpe),
            stage: Stage::Ecpe,
            prompt: sections.render(),
            expected_output,
            variant,
            target: key,
            dropped_context_lines: dropped,
        })
    }

    /// One record per conversation asking for every pair at once. The
    /// record's target is the last utterance.
    pub fn compile_joint_record(
        &self,
        c: &Conversation,
        variant: TemplateVariant,
        mode: Mode,
    ) -> Result<InstructionRecord, TemplateError> {
        let last = c.len() as u32;
        Self::check_target(c, last)?;
        let key = UtteranceKey::new(c.id.clone(), last);
        let lines = c
            .utterances
            .iter()
            .map(|u| Self::line(c, u, LabelSource::None))
            .collect::<Result<Vec<_>, _>>()?;
        let (sections, dropped) = self.assemble(Stage::Joint, variant, lines, None, None, None);
        let expected_output = match mode {
            Mode::Infer => String::new(),
            Mode::Train => {
                let pairs = c.gold_pairs.as_ref().ok_or_else(|| TemplateError::MissingGold(key.clone()))?;
                render_joint_pairs(pairs)
            }
        };
        Ok(InstructionRecord {
            record_id: InstructionRecord::make_id(&key, Stage::Joint),
            stage: Stage::Joint,
            prompt: sections.render(),
            expected_output,
            variant,
            target: key,
            dropped_context_lines: dropped,
        })
    }

    /// Compiles a whole split. ERC yields one record per utterance; ECPE one
    /// per utterance whose label is not neutral; JOINT one per conversation.
    /// Records are ordered by `(conversation id, target index)`.
    pub fn compile_split(
        &self,
        split: &DatasetSplit,
        stage: Stage,
        variant: TemplateVariant,
        label_source: LabelSource,
        mode: Mode,
    ) -> Result<Vec<InstructionRecord>, TemplateError> {
        let mut conversations: Vec<&Conversation> = split.conversations.iter().collect();
        conversations.sort_by(|a, b| a.id.cmp(&b.id));
        let mut records = Vec::new();
        for c in conversations {
            match stage {
                Stage::Erc => {
                    for u in &c.utterances {
                        records.push(self.compile_erc_record(c, u.index, variant, mode)?);
                    }
                }
                Stage::Ecpe => {
                    for u in &c.utterances {
                        let label = eligibility_label(u, label_source);
                        if label_source != LabelSource::None && label.is_none() {
                            return Err(TemplateError::MissingLabel {
                                key: UtteranceKey::new(c.id.clone(), u.index),
                                label_source,
                            });
                        }
                        if label.is_some_and(EmotionCategory::is_neutral) {
                            continue;
                        }
                        records.push(self.compile_ecpe_record(c, u.index, variant, label_source, mode)?);
                    }
                }
                Stage::Joint => {
                    if !c.is_empty() {
                        records.push(self.compile_joint_record(c, variant, mode)?);
                    }
                }
            }
        }
        Ok(records)
    }
}

fn io_error(path: &Path, source: std::io::Error) -> TemplateError {
    TemplateError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serializes record lines as JSONL, one object per line.
pub fn records_to_jsonl(records: &[InstructionRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(&record.to_line()).expect("record lines serialize"));
        out.push('\n');
    }
    out
}

/// Writes a training JSONL file. Every record needs a non-empty expected output.
pub fn render_training_file(records: &[InstructionRecord], path: impl AsRef<Path>) -> Result<PathBuf, TemplateError> {
    if let Some(empty) = records.iter().find(|r| r.expected_output.is_empty()) {
        return Err(TemplateError::EmptyOutput(empty.record_id.clone()));
    }
    write_records(records, path)
}

/// Writes any records (inference records included) as JSONL.
pub fn write_records(records: &[InstructionRecord], path: impl AsRef<Path>) -> Result<PathBuf, TemplateError> {
    let path = path.as_ref();
    write_atomic(path, records_to_jsonl(records).as_bytes()).map_err(|e| io_error(path, e))?;
    Ok(path.to_path_buf())
}

/// Reads an instruction JSONL file back into record lines.
pub fn read_record_lines(path: impl AsRef<Path>) -> Result<Vec<RecordLine>, TemplateError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TemplateError::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Appends record lines to an open writer.
pub fn write_lines<W: Write>(mut out: W, lines: &[RecordLine]) -> std::io::Result<()> {
    for line in lines {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
