//! Turns free-text model replies into labels and cause indices.
//!
//! Both parsers are total: any input yields a value, with a quality flag or
//! drop counter recording how much normalization was needed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, EmotionCategory, EmotionCausePair, UtteranceKey};

/// Version of the accepted reply grammar.
pub const GRAMMAR_VERSION: &str = "v1";

/// Predicted pairs grouped by conversation id.
pub type PairsByConversation = BTreeMap<String, Vec<EmotionCausePair>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseQuality {
    /// The reply was exactly a label.
    Exact,
    /// A label or synonym was found inside a longer reply.
    Normalized,
    /// Nothing recognizable; the label defaults to neutral.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErcParse {
    pub category: EmotionCategory,
    pub quality: ParseQuality,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcpeParse {
    /// Ascending, without duplicates, all within `1..=target`.
    pub indices: Vec<u32>,
    pub dropped_out_of_window: usize,
    pub explicit_none: bool,
}

impl EcpeParse {
    /// The reply that parses back to exactly these indices.
    pub fn canonical_reply(&self) -> String {
        crate::templates::render_causes(&self.indices)
    }
}

impl ErcParse {
    pub fn canonical_reply(&self) -> String {
        self.category.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseError {
    NoEmotionSource(UtteranceKey),
    UnknownTarget(UtteranceKey),
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseError::NoEmotionSource(key) => write!(f, "no emotion label available for target {key}"),
            ParseError::UnknownTarget(key) => write!(f, "target {key} is not in the split"),
        }
    }
}

impl std::error::Error for ParseError {}

fn synonym(token: &str) -> Option<EmotionCategory> {
    use EmotionCategory::*;
    Some(match token {
        "happiness" | "happy" => Joy,
        "sad" => Sadness,
        "angry" | "mad" => Anger,
        "scared" | "afraid" | "fearful" => Fear,
        "surprised" | "shocked" => Surprise,
        "disgusted" => Disgust,
        _ => return None,
    })
}

fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty())
}

/// Finds the first emotion label or synonym in `reply`.
///
/// The first match wins, so "not joy but sadness" reads as joy.
pub fn parse_emotion_reply(reply: &str) -> ErcParse {
    let trimmed = reply.trim();
    if let Ok(category) = trimmed.parse::<EmotionCategory>() {
        return ErcParse {
            category,
            quality: ParseQuality::Exact,
        };
    }
    let lowered = trimmed.to_lowercase();
    for word in words(&lowered) {
        let found = word.parse::<EmotionCategory>().ok().or_else(|| synonym(word));
        if let Some(category) = found {
            return ErcParse {
                category,
                quality: ParseQuality::Normalized,
            };
        }
    }
    ErcParse {
        category: EmotionCategory::Neutral,
        quality: ParseQuality::Fallback,
    }
}

/// Standalone decimal integers in `text`, optionally prefixed by `U`/`u`.
/// Digits glued to other letters or digits ("U12abc", "x3") do not count.
/// Values too large for `u32` come back as `None`.
fn scan_integers(text: &str) -> Vec<Option<u32>> {
    let chars: Vec<char> = text.chars().collect();
    let mut found = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let boundary_before = i == 0 || !chars[i - 1].is_alphanumeric();
        if !boundary_before {
            i += 1;
            continue;
        }
        let mut start = i;
        if matches!(chars[i], 'U' | 'u') && chars.get(i + 1).is_some_and(char::is_ascii_digit) {
            start = i + 1;
        }
        let mut end = start;
        while end < chars.len() && chars[end].is_ascii_digit() {
            end += 1;
        }
        if end == start {
            i += 1;
            continue;
        }
        let boundary_after = end == chars.len() || !chars[end].is_alphanumeric();
        if boundary_after {
            let digits: String = chars[start..end].iter().collect();
            found.push(digits.parse().ok());
        }
        // skip past the whole alphanumeric run
        i = end;
        while i < chars.len() && chars[i].is_alphanumeric() {
            i += 1;
        }
    }
    found
}

/// Extracts cause indices for `target`, keeping only `1..=target`.
pub fn parse_cause_reply(reply: &str, target: u32) -> EcpeParse {
    let mut indices = Vec::new();
    let mut dropped = 0;
    for value in scan_integers(reply) {
        match value {
            Some(i) if (1..=target).contains(&i) => indices.push(i),
            _ => dropped += 1,
        }
    }
    indices.sort_unstable();
    indices.dedup();
    let mut tokens = words(reply);
    let explicit_none = matches!((tokens.next(), tokens.next()), (Some(t), None) if t.eq_ignore_ascii_case("none"));
    EcpeParse {
        indices,
        dropped_out_of_window: dropped,
        explicit_none,
    }
}

/// Result of parsing a single-stage reply.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct JointParse {
    pub pairs: Vec<EmotionCausePair>,
    /// Lines that named no usable emotion utterance.
    pub skipped_lines: usize,
    pub dropped_out_of_window: usize,
    pub explicit_none: bool,
}

/// Parses `‹index›_‹emotion›: ‹causes›` lines for a conversation of `len` utterances.
///
/// The part before the first colon supplies the emotion utterance (its first
/// integer) and category ([`parse_emotion_reply`]); the part after it is read
/// with [`parse_cause_reply`] windowed at the emotion utterance.
pub fn parse_joint_reply(reply: &str, len: u32) -> JointParse {
    let mut out = JointParse {
        explicit_none: parse_cause_reply(reply, 0).explicit_none,
        ..JointParse::default()
    };
    for line in reply.lines().filter(|l| !l.trim().is_empty()) {
        let Some((head, tail)) = line.split_once(':') else {
            out.skipped_lines += 1;
            continue;
        };
        let emotion_index = scan_integers(head).into_iter().next().flatten();
        let category = parse_emotion_reply(head);
        let usable = emotion_index.filter(|i| (1..=len).contains(i));
        match (usable, category.quality) {
            (Some(index), ParseQuality::Exact | ParseQuality::Normalized) if !category.category.is_neutral() => {
                let causes = parse_cause_reply(tail, index);
                out.dropped_out_of_window += causes.dropped_out_of_window;
                out.pairs
                    .extend(causes.indices.into_iter().map(|c| EmotionCausePair::new(index, category.category, c)));
            }
            _ => out.skipped_lines += 1,
        }
    }
    out.pairs.sort_unstable();
    out.pairs.dedup();
    out
}

/// Forms pairs from parsed replies.
///
/// A target's category comes from its `erc` entry, else from the utterance's
/// predicted emotion. Neutral targets yield nothing; causes outside the
/// conversation are discarded.
pub fn assemble_pairs(
    split: &DatasetSplit,
    erc: &BTreeMap<UtteranceKey, ErcParse>,
    ecpe: &BTreeMap<UtteranceKey, EcpeParse>,
) -> Result<PairsByConversation, ParseError> {
    let mut out = PairsByConversation::new();
    for (key, parse) in ecpe {
        let conversation = split
            .conversation(&key.conversation)
            .ok_or_else(|| ParseError::UnknownTarget(key.clone()))?;
        let utterance = conversation
            .utterance(key.index)
            .ok_or_else(|| ParseError::UnknownTarget(key.clone()))?;
        let category = erc
            .get(key)
            .map(|p| p.category)
            .or(utterance.predicted_emotion)
            .ok_or_else(|| ParseError::NoEmotionSource(key.clone()))?;
        if category.is_neutral() {
            continue;
        }
        let len = conversation.len() as u32;
        let pairs = out.entry(key.conversation.clone()).or_default();
        pairs.extend(
            parse
                .indices
                .iter()
                .filter(|&&c| (1..=len).contains(&c))
                .map(|&c| EmotionCausePair::new(key.index, category, c)),
        );
    }
    for pairs in out.values_mut() {
        pairs.sort_unstable();
        pairs.dedup();
    }
    out.retain(|_, pairs| !pairs.is_empty());
    Ok(out)
}
