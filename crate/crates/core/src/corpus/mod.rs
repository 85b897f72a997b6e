//! Conversation corpora: loading, validation, merging and annotation.
//!
//! Every value in this module is immutable once built; the annotating
//! operations ([`inject_predicted_emotions`], [`attach_video_descriptions`])
//! return new splits.

mod category;
pub mod ecf;
mod validate;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};

pub use category::{EmotionCategory, UnknownEmotion};
pub use validate::{validate_split, Finding, Rule, ValidationReport};

/// Errors raised while loading or transforming corpora.
#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("conversation {conversation}, utterance {index}: unknown emotion label {label:?}")]
    UnknownLabel {
        conversation: String,
        index: u32,
        label: String,
    },
    #[error("invalid corpus: {0}")]
    Invalid(Finding),
    #[error("conversation id {0:?} appears in both splits")]
    IdCollision(String),
    #[error("no utterance {index} in conversation {conversation:?}")]
    MissingUtterance { conversation: String, index: u32 },
}

impl CorpusError {
    /// The violated rule, when the error came from validation.
    pub fn rule(&self) -> Option<Rule> {
        match self {
            CorpusError::Invalid(finding) => Some(finding.rule),
            _ => None,
        }
    }
}

/// Addresses one utterance across a split.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UtteranceKey {
    pub conversation: String,
    pub index: u32,
}

impl UtteranceKey {
    pub fn new(conversation: impl Into<String>, index: u32) -> Self {
        Self {
            conversation: conversation.into(),
            index,
        }
    }
}

impl fmt::Display for UtteranceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.conversation, self.index)
    }
}

/// One speaker turn. `index` is 1-based within the owning conversation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Utterance {
    pub index: u32,
    pub speaker: String,
    pub text: String,
    #[serde(rename = "emotion")]
    pub gold_emotion: Option<EmotionCategory>,
    /// Not part of the on-disk schema; set by [`inject_predicted_emotions`].
    #[serde(skip)]
    pub predicted_emotion: Option<EmotionCategory>,
    pub video_description: Option<String>,
    pub media_ref: Option<String>,
}

impl Utterance {
    pub fn new(index: u32, speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            index,
            speaker: speaker.into(),
            text: text.into(),
            gold_emotion: None,
            predicted_emotion: None,
            video_description: None,
            media_ref: None,
        }
    }

    pub fn with_gold(mut self, emotion: EmotionCategory) -> Self {
        self.gold_emotion = Some(emotion);
        self
    }
}

/// `(emotion utterance, category, cause utterance)`.
///
/// Serialized as the three-element array `[emotion_index, "category", cause_index]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EmotionCausePair {
    pub emotion_index: u32,
    pub category: EmotionCategory,
    pub cause_index: u32,
}

impl EmotionCausePair {
    pub const fn new(emotion_index: u32, category: EmotionCategory, cause_index: u32) -> Self {
        Self {
            emotion_index,
            category,
            cause_index,
        }
    }
}

impl Serialize for EmotionCausePair {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut tuple = serializer.serialize_tuple(3)?;
        tuple.serialize_element(&self.emotion_index)?;
        tuple.serialize_element(&self.category)?;
        tuple.serialize_element(&self.cause_index)?;
        tuple.end()
    }
}

impl<'de> Deserialize<'de> for EmotionCausePair {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let (emotion_index, label, cause_index) = <(u32, String, u32)>::deserialize(deserializer)?;
        let category = label.parse().map_err(de::Error::custom)?;
        Ok(Self::new(emotion_index, category, cause_index))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
    #[serde(rename = "pairs")]
    pub gold_pairs: Option<Vec<EmotionCausePair>>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Looks up by 1-based index.
    pub fn utterance(&self, index: u32) -> Option<&Utterance> {
        let position = usize::try_from(index).ok()?.checked_sub(1)?;
        self.utterances.get(position).filter(|u| u.index == index)
    }

    /// Gold cause indices for `target`, ascending and deduplicated.
    pub fn gold_causes(&self, target: u32) -> Option<Vec<u32>> {
        let pairs = self.gold_pairs.as_ref()?;
        let mut causes: Vec<u32> = pairs
            .iter()
            .filter(|p| p.emotion_index == target)
            .map(|p| p.cause_index)
            .collect();
        causes.sort_unstable();
        causes.dedup();
        Some(causes)
    }
}

/// Name of a split: the three official ones or any custom label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SplitName {
    Train,
    Trial,
    Test,
    Custom(String),
}

impl SplitName {
    pub fn as_str(&self) -> &str {
        match self {
            SplitName::Train => "train",
            SplitName::Trial => "trial",
            SplitName::Test => "test",
            SplitName::Custom(name) => name,
        }
    }
}

impl From<&str> for SplitName {
    fn from(name: &str) -> Self {
        match name {
            "train" => SplitName::Train,
            "trial" => SplitName::Trial,
            "test" => SplitName::Test,
            other => SplitName::Custom(other.to_string()),
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for SplitName {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetSplit {
    #[serde(rename = "split")]
    pub name: SplitName,
    pub conversations: Vec<Conversation>,
}

impl DatasetSplit {
    pub fn new(name: impl Into<SplitName>, conversations: Vec<Conversation>) -> Self {
        Self {
            name: name.into(),
            conversations,
        }
    }

    pub fn conversation(&self, id: &str) -> Option<&Conversation> {
        self.conversations.iter().find(|c| c.id == id)
    }

    pub fn utterance_count(&self) -> usize {
        self.conversations.iter().map(Conversation::len).sum()
    }

    /// All gold pairs keyed by conversation, or `None` when any conversation is unlabeled.
    pub fn gold_pairs(&self) -> Option<BTreeMap<String, Vec<EmotionCausePair>>> {
        self.conversations
            .iter()
            .map(|c| c.gold_pairs.clone().map(|pairs| (c.id.clone(), pairs)))
            .collect()
    }

    pub fn has_gold_pairs(&self) -> bool {
        !self.conversations.is_empty() && self.conversations.iter().all(|c| c.gold_pairs.is_some())
    }

    /// Canonical JSON rendering of the on-disk schema.
    pub fn to_canonical_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("corpus values always serialize");
        out.push('\n');
        out
    }
}

impl From<String> for SplitName {
    fn from(name: String) -> Self {
        SplitName::from(name.as_str())
    }
}

// Raw mirror of the on-disk schema; labels stay strings until checked.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSplit {
    #[serde(default)]
    split: Option<String>,
    conversations: Vec<RawConversation>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConversation {
    id: String,
    utterances: Vec<RawUtterance>,
    #[serde(default)]
    pairs: Option<Vec<(u32, String, u32)>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUtterance {
    index: u32,
    speaker: String,
    text: String,
    #[serde(default)]
    emotion: Option<String>,
    #[serde(default)]
    video_description: Option<String>,
    #[serde(default)]
    media_ref: Option<String>,
}

fn parse_label(conversation: &str, index: u32, label: &str) -> Result<EmotionCategory, CorpusError> {
    EmotionCategory::from_str(label).map_err(|_| CorpusError::UnknownLabel {
        conversation: conversation.to_string(),
        index,
        label: label.to_string(),
    })
}

/// Parses and validates a canonical split document held in memory.
///
/// The `split` field of the document is ignored in favour of `split_name`.
pub fn parse_split(document: &str, split_name: &str) -> Result<DatasetSplit, CorpusError> {
    let split = parse_split_unchecked(document, split_name)?;
    ensure_valid(&split)?;
    Ok(split)
}

/// Parses a canonical split document without checking structural invariants.
/// Use [`validate_split`] on the result to collect every violation at once.
pub fn parse_split_unchecked(document: &str, split_name: &str) -> Result<DatasetSplit, CorpusError> {
    let raw: RawSplit =
        serde_json::from_str(document).map_err(|e| CorpusError::Malformed(e.to_string()))?;
    let _ = raw.split;
    let mut conversations = Vec::with_capacity(raw.conversations.len());
    for rc in raw.conversations {
        let mut utterances = Vec::with_capacity(rc.utterances.len());
        for ru in rc.utterances {
            let gold_emotion = ru
                .emotion
                .as_deref()
                .map(|label| parse_label(&rc.id, ru.index, label))
                .transpose()?;
            utterances.push(Utterance {
                index: ru.index,
                speaker: ru.speaker,
                text: ru.text,
                gold_emotion,
                predicted_emotion: None,
                video_description: ru.video_description,
                media_ref: ru.media_ref,
            });
        }
        let gold_pairs = rc
            .pairs
            .map(|pairs| {
                pairs
                    .into_iter()
                    .map(|(emotion_index, label, cause_index)| {
                        let category = parse_label(&rc.id, emotion_index, &label)?;
                        Ok(EmotionCausePair::new(emotion_index, category, cause_index))
                    })
                    .collect::<Result<Vec<_>, CorpusError>>()
            })
            .transpose()?;
        conversations.push(Conversation {
            id: rc.id,
            utterances,
            gold_pairs,
        });
    }
    Ok(DatasetSplit::new(split_name, conversations))
}

fn read_document(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a canonical split file and validates every invariant.
pub fn load_split(path: impl AsRef<Path>, split_name: &str) -> Result<DatasetSplit, CorpusError> {
    parse_split(&read_document(path.as_ref())?, split_name)
}

/// [`parse_split_unchecked`] over a file.
pub fn load_split_unchecked(path: impl AsRef<Path>, split_name: &str) -> Result<DatasetSplit, CorpusError> {
    parse_split_unchecked(&read_document(path.as_ref())?, split_name)
}

pub(crate) fn ensure_valid(split: &DatasetSplit) -> Result<(), CorpusError> {
    match validate_split(split).findings.into_iter().next() {
        Some(finding) => Err(CorpusError::Invalid(finding)),
        None => Ok(()),
    }
}

/// Concatenates `a` then `b`; conversation ids must be disjoint.
pub fn merge_splits(
    a: &DatasetSplit,
    b: &DatasetSplit,
    merged_name: &str,
) -> Result<DatasetSplit, CorpusError> {
    let ids: HashSet<&str> = a.conversations.iter().map(|c| c.id.as_str()).collect();
    if let Some(clash) = b.conversations.iter().find(|c| ids.contains(c.id.as_str())) {
        return Err(CorpusError::IdCollision(clash.id.clone()));
    }
    let conversations = a.conversations.iter().chain(&b.conversations).cloned().collect();
    Ok(DatasetSplit::new(merged_name, conversations))
}

fn check_keys<'a, V>(
    split: &DatasetSplit,
    keys: impl IntoIterator<Item = (&'a UtteranceKey, V)>,
) -> Result<(), CorpusError> {
    for (key, _) in keys {
        let found = split
            .conversation(&key.conversation)
            .and_then(|c| c.utterance(key.index))
            .is_some();
        if !found {
            return Err(CorpusError::MissingUtterance {
                conversation: key.conversation.clone(),
                index: key.index,
            });
        }
    }
    Ok(())
}

/// Sets `predicted_emotion` from `predictions`, leaving gold labels alone.
pub fn inject_predicted_emotions(
    split: &DatasetSplit,
    predictions: &BTreeMap<UtteranceKey, EmotionCategory>,
) -> Result<DatasetSplit, CorpusError> {
    check_keys(split, predictions)?;
    let mut out = split.clone();
    for conversation in &mut out.conversations {
        for utterance in &mut conversation.utterances {
            let key = UtteranceKey::new(conversation.id.clone(), utterance.index);
            if let Some(&emotion) = predictions.get(&key) {
                utterance.predicted_emotion = Some(emotion);
            }
        }
    }
    Ok(out)
}

/// One entry of a video-description sidecar file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub conversation: String,
    pub index: u32,
    pub description: String,
}

/// Applies sidecar descriptions; unmatched entries come back as warnings.
pub fn apply_video_descriptions(
    split: &DatasetSplit,
    entries: &[SidecarEntry],
) -> (DatasetSplit, Vec<String>) {
    let mut out = split.clone();
    let mut warnings = Vec::new();
    for entry in entries {
        let Some(conversation) = out.conversations.iter_mut().find(|c| c.id == entry.conversation) else {
            warnings.push(format!("sidecar: unknown conversation {:?}", entry.conversation));
            continue;
        };
        let position = (entry.index as usize).wrapping_sub(1);
        match conversation.utterances.get_mut(position) {
            Some(u) if u.index == entry.index => u.video_description = Some(entry.description.clone()),
            _ => warnings.push(format!(
                "sidecar: conversation {:?} has no utterance {}",
                entry.conversation, entry.index
            )),
        }
    }
    (out, warnings)
}

/// Reads a sidecar file and applies it with [`apply_video_descriptions`].
pub fn attach_video_descriptions(
    split: &DatasetSplit,
    sidecar: impl AsRef<Path>,
) -> Result<(DatasetSplit, Vec<String>), CorpusError> {
    let path = sidecar.as_ref();
    let document = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let entries: Vec<SidecarEntry> =
        serde_json::from_str(&document).map_err(|e| CorpusError::Malformed(format!("sidecar: {e}")))?;
    Ok(apply_video_descriptions(split, &entries))
}

/// Reads a predictions document (`[{"conversation", "index", "emotion"}]`).
pub fn load_predictions(
    path: impl AsRef<Path>,
) -> Result<BTreeMap<UtteranceKey, EmotionCategory>, CorpusError> {
    #[derive(Deserialize)]
    struct Entry {
        conversation: String,
        index: u32,
        emotion: String,
    }
    let path = path.as_ref();
    let document = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let entries: Vec<Entry> =
        serde_json::from_str(&document).map_err(|e| CorpusError::Malformed(format!("predictions: {e}")))?;
    entries
        .into_iter()
        .map(|e| {
            let label = parse_label(&e.conversation, e.index, &e.emotion)?;
            Ok((UtteranceKey::new(e.conversation, e.index), label))
        })
        .collect()
}

/// Renders predictions in the layout read by [`load_predictions`].
pub fn predictions_to_json(predictions: &BTreeMap<UtteranceKey, EmotionCategory>) -> String {
    let entries: Vec<serde_json::Value> = predictions
        .iter()
        .map(|(key, emotion)| {
            serde_json::json!({
                "conversation": key.conversation,
                "index": key.index,
                "emotion": emotion.as_str(),
            })
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&entries).expect("json values serialize");
    out.push('\n');
    out
}

/// The five-utterance Friends excerpt used as the running example and as the
/// fixed demonstration inside example-bearing templates.
pub fn demo_conversation() -> Conversation {
    use EmotionCategory::*;
    let lines = [
        ("Chandler", "Hey Pheebs!", Joy),
        ("Phoebe", "Ohh! You made up!", Surprise),
        ("Monica", "Yeah, I couldn't be mad at him for too long.", Joy),
        ("Chandler", "Yeah, she couldn't live without the Chan Love.", Joy),
        ("Phoebe", "Ohh, get a room.", Disgust),
    ];
    let utterances = lines
        .iter()
        .zip(1..)
        .map(|(&(speaker, text, emotion), index)| Utterance::new(index, speaker, text).with_gold(emotion))
        .collect();
    Conversation {
        id: "conv_1".to_string(),
        utterances,
        gold_pairs: Some(vec![
            EmotionCausePair::new(4, Joy, 2),
            EmotionCausePair::new(4, Joy, 3),
            EmotionCausePair::new(5, Disgust, 5),
        ]),
    }
}
