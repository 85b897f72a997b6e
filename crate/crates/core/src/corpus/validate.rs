use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::{Conversation, DatasetSplit};

/// The invariant a [`Finding`] reports as broken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    DuplicateConversationId,
    NonContiguousIndex,
    EmptySpeaker,
    DanglingPair,
    NeutralPair,
    CategoryMismatch,
    DuplicatePair,
    /// Warning only: nonverbal clips legitimately have no text.
    EmptyText,
}

impl Rule {
    pub fn describe(self) -> &'static str {
        match self {
            Rule::DuplicateConversationId => "duplicate conversation id",
            Rule::NonContiguousIndex => "utterance indices must be 1..n in order",
            Rule::EmptySpeaker => "empty speaker",
            Rule::DanglingPair => "pair references a missing utterance",
            Rule::NeutralPair => "neutral pair forbidden",
            Rule::CategoryMismatch => "category mismatch",
            Rule::DuplicatePair => "duplicate pair",
            Rule::EmptyText => "empty utterance text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub conversation: String,
    /// Utterance index the finding concerns, when there is one.
    pub index: Option<u32>,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "conversation {:?}", self.conversation)?;
        if let Some(index) = self.index {
            write!(f, ", utterance {index}")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.findings.iter().chain(&self.warnings).any(|f| f.rule == rule)
    }
}

struct Collector<'a> {
    conversation: &'a str,
    report: &'a mut ValidationReport,
}

impl Collector<'_> {
    fn error(&mut self, index: Option<u32>, rule: Rule, detail: String) {
        self.push(index, rule, detail, false);
    }

    fn push(&mut self, index: Option<u32>, rule: Rule, detail: String, warning: bool) {
        let message = if detail.is_empty() {
            rule.describe().to_string()
        } else {
            format!("{}: {detail}", rule.describe())
        };
        let finding = Finding {
            conversation: self.conversation.to_string(),
            index,
            rule,
            message,
        };
        if warning {
            self.report.warnings.push(finding);
        } else {
            self.report.findings.push(finding);
        }
    }
}

/// Checks every corpus invariant without touching the input.
pub fn validate_split(split: &DatasetSplit) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    for conversation in &split.conversations {
        if !seen.insert(conversation.id.as_str()) {
            Collector {
                conversation: &conversation.id,
                report: &mut report,
            }
            .error(None, Rule::DuplicateConversationId, String::new());
        }
        validate_conversation(conversation, &mut report);
    }
    report
}

fn validate_conversation(conversation: &Conversation, report: &mut ValidationReport) {
    let mut out = Collector {
        conversation: &conversation.id,
        report,
    };
    let n = conversation.utterances.len() as u32;
    for (expected, u) in (1..).zip(&conversation.utterances) {
        if u.index != expected {
            out.error(Some(u.index), Rule::NonContiguousIndex, format!("expected index {expected}"));
        }
        if u.speaker.trim().is_empty() {
            out.error(Some(u.index), Rule::EmptySpeaker, String::new());
        }
        if u.text.is_empty() {
            out.push(Some(u.index), Rule::EmptyText, String::new(), true);
        }
    }
    let Some(pairs) = &conversation.gold_pairs else {
        return;
    };
    let mut unique = HashSet::new();
    for pair in pairs {
        let rendered = format!("({}, {}, {})", pair.emotion_index, pair.category, pair.cause_index);
        let in_range = |i: u32| (1..=n).contains(&i);
        if !in_range(pair.emotion_index) || !in_range(pair.cause_index) {
            out.error(Some(pair.emotion_index), Rule::DanglingPair, format!("{rendered} with {n} utterances"));
        }
        if pair.category.is_neutral() {
            out.error(Some(pair.emotion_index), Rule::NeutralPair, rendered.clone());
        }
        let gold = conversation.utterance(pair.emotion_index).and_then(|u| u.gold_emotion);
        if let Some(gold) = gold {
            if gold != pair.category {
                out.error(
                    Some(pair.emotion_index),
                    Rule::CategoryMismatch,
                    format!("{rendered} but utterance is labeled {gold}"),
                );
            }
        }
        if !unique.insert(*pair) {
            out.error(Some(pair.emotion_index), Rule::DuplicatePair, rendered);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{demo_conversation, EmotionCategory::*, EmotionCausePair};

    fn with_pairs(pairs: Vec<EmotionCausePair>) -> DatasetSplit {
        let mut conv = demo_conversation();
        conv.gold_pairs = Some(pairs);
        DatasetSplit::new("train", vec![conv])
    }

    #[test]
    fn demo_is_valid() {
        let split = DatasetSplit::new("train", vec![demo_conversation()]);
        let report = validate_split(&split);
        assert!(report.is_valid());
        assert!(report.findings.is_empty() && report.warnings.is_empty());
    }

    #[test]
    fn neutral_pair_forbidden() {
        let report = validate_split(&with_pairs(vec![EmotionCausePair::new(1, Neutral, 1)]));
        assert!(report.findings.iter().any(|f| f.message.starts_with("neutral pair forbidden")));
        // also a category mismatch: utterance 1 is joy
        assert!(report.has(Rule::CategoryMismatch));
    }

    #[test]
    fn category_mismatch_reported() {
        let report = validate_split(&with_pairs(vec![EmotionCausePair::new(4, Sadness, 2)]));
        assert_eq!(report.findings.len(), 1);
        let f = &report.findings[0];
        assert_eq!((f.conversation.as_str(), f.index, f.rule), ("conv_1", Some(4), Rule::CategoryMismatch));
        assert!(f.message.contains("category mismatch"));
    }

    #[test]
    fn self_cause_and_later_cause_allowed() {
        let report = validate_split(&with_pairs(vec![
            EmotionCausePair::new(5, Disgust, 5),
            EmotionCausePair::new(2, Surprise, 4),
        ]));
        assert!(report.is_valid());
    }

    #[test]
    fn empty_text_is_a_warning() {
        let mut conv = demo_conversation();
        conv.utterances[1].text.clear();
        let report = validate_split(&DatasetSplit::new("t", vec![conv]));
        assert!(report.is_valid());
        assert_eq!(report.warnings[0].rule, Rule::EmptyText);
    }
}
