//! Converter from the official ECF release layout to the canonical schema.
//!
//! The release is a JSON array of conversations:
//!
//! ```json
//! [{"conversation_ID": 1,
//!   "conversation": [{"utterance_ID": 1, "text": "...", "speaker": "Chandler",
//!                     "emotion": "joy", "video_name": "dia1utt1.mp4"}],
//!   "emotion-cause_pairs": [["4_joy", "2"], ["4_joy", "3_she couldn't be mad"]]}]
//! ```
//!
//! Cause entries may carry a span after the index (the span-level release);
//! only the utterance index is kept. Test releases omit the pairs entirely.

use std::path::Path;

use serde::Deserialize;

use super::{ensure_valid, parse_label, Conversation, CorpusError, DatasetSplit, EmotionCausePair, Utterance};

#[derive(Deserialize)]
struct EcfConversation {
    #[serde(rename = "conversation_ID")]
    conversation_id: serde_json::Value,
    conversation: Vec<EcfUtterance>,
    #[serde(rename = "emotion-cause_pairs", default)]
    pairs: Option<Vec<(String, String)>>,
}

#[derive(Deserialize)]
struct EcfUtterance {
    #[serde(rename = "utterance_ID")]
    utterance_id: u32,
    text: String,
    speaker: String,
    #[serde(default)]
    emotion: Option<String>,
    #[serde(default)]
    video_name: Option<String>,
}

fn id_text(value: &serde_json::Value) -> Result<String, CorpusError> {
    match value {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(CorpusError::Malformed(format!("conversation_ID must be a string or number, got {other}"))),
    }
}

fn leading_index(field: &str, conversation: &str) -> Result<u32, CorpusError> {
    let digits = field.split('_').next().unwrap_or_default().trim();
    digits
        .parse()
        .map_err(|_| CorpusError::Malformed(format!("conversation {conversation}: bad pair field {field:?}")))
}

/// Converts an ECF release document held in memory.
pub fn convert_str(document: &str, split_name: &str) -> Result<DatasetSplit, CorpusError> {
    let raw: Vec<EcfConversation> =
        serde_json::from_str(document).map_err(|e| CorpusError::Malformed(e.to_string()))?;
    let mut conversations = Vec::with_capacity(raw.len());
    for rc in raw {
        let id = id_text(&rc.conversation_id)?;
        let mut utterances = Vec::with_capacity(rc.conversation.len());
        for ru in rc.conversation {
            let gold_emotion = ru
                .emotion
                .as_deref()
                .map(|label| parse_label(&id, ru.utterance_id, label))
                .transpose()?;
            utterances.push(Utterance {
                index: ru.utterance_id,
                speaker: ru.speaker,
                text: ru.text,
                gold_emotion,
                predicted_emotion: None,
                video_description: None,
                media_ref: ru.video_name,
            });
        }
        let gold_pairs = match rc.pairs {
            None => None,
            Some(pairs) => {
                let mut out = Vec::with_capacity(pairs.len());
                for (emotion_field, cause_field) in pairs {
                    let emotion_index = leading_index(&emotion_field, &id)?;
                    let label = emotion_field.split_once('_').map(|(_, l)| l).ok_or_else(|| {
                        CorpusError::Malformed(format!("conversation {id}: pair field {emotion_field:?} lacks a label"))
                    })?;
                    let category = parse_label(&id, emotion_index, label)?;
                    let cause_index = leading_index(&cause_field, &id)?;
                    let pair = EmotionCausePair::new(emotion_index, category, cause_index);
                    // span-level releases list one entry per cause span
                    if !out.contains(&pair) {
                        out.push(pair);
                    }
                }
                Some(out)
            }
        };
        conversations.push(Conversation {
            id,
            utterances,
            gold_pairs,
        });
    }
    let split = DatasetSplit::new(split_name, conversations);
    ensure_valid(&split)?;
    Ok(split)
}

pub fn convert_file(path: impl AsRef<Path>, split_name: &str) -> Result<DatasetSplit, CorpusError> {
    let path = path.as_ref();
    let document = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    convert_str(&document, split_name)
}
