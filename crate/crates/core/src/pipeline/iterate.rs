use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use super::PipelineError;
use crate::corpus::{DatasetSplit, EmotionCategory, EmotionCausePair};
use crate::parser::PairsByConversation;
use crate::templates::{render_training_file, LabelSource, Mode, Stage, TemplateCompiler, TemplateVariant};

pub const GOLD_TAG: &str = "gold";
pub const SELFTRAIN_TAG: &str = "selftrain";

/// A self-training JSONL and where its lines came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterativeDataset {
    pub path: PathBuf,
    pub gold_records: usize,
    pub inferred_records: usize,
}

impl IterativeDataset {
    pub fn total(&self) -> usize {
        self.gold_records + self.inferred_records
    }
}

fn check_inferred(split: &DatasetSplit, inferred: &PairsByConversation) -> Result<(), PipelineError> {
    for (id, pairs) in inferred {
        let conversation = split
            .conversation(id)
            .ok_or_else(|| PipelineError::Precondition(format!("inferred pairs name unknown conversation {id:?}")))?;
        let len = conversation.len() as u32;
        for p in pairs {
            if !(1..=len).contains(&p.emotion_index) || !(1..=len).contains(&p.cause_index) {
                return Err(PipelineError::Precondition(format!(
                    "inferred pair ({}, {}, {}) does not fit conversation {id:?} of {len} utterances",
                    p.emotion_index, p.category, p.cause_index
                )));
            }
            if p.category.is_neutral() {
                return Err(PipelineError::Precondition(format!("inferred pair in {id:?} has a neutral emotion")));
            }
        }
    }
    Ok(())
}

/// Relabels `split` so its gold annotations are the inferred ones.
///
/// Targets take the category of their inferred pairs. Other utterances keep
/// their predicted label, then their gold label, and are otherwise neutral.
fn pseudo_gold(split: &DatasetSplit, inferred: &PairsByConversation) -> Result<DatasetSplit, PipelineError> {
    let mut out = DatasetSplit::new(split.name.clone(), Vec::new());
    for (id, pairs) in inferred.iter().filter(|(_, p)| !p.is_empty()) {
        let mut conversation = split.conversation(id).expect("checked").clone();
        let mut categories: BTreeMap<u32, EmotionCategory> = BTreeMap::new();
        for p in pairs {
            if let Some(previous) = categories.insert(p.emotion_index, p.category) {
                if previous != p.category {
                    return Err(PipelineError::Precondition(format!(
                        "inferred pairs give utterance {id}:{} two emotions",
                        p.emotion_index
                    )));
                }
            }
        }
        for u in &mut conversation.utterances {
            u.gold_emotion = Some(
                categories
                    .get(&u.index)
                    .copied()
                    .or(u.predicted_emotion)
                    .or(u.gold_emotion)
                    .unwrap_or(EmotionCategory::Neutral),
            );
            u.predicted_emotion = None;
        }
        let mut pairs: Vec<EmotionCausePair> = pairs.clone();
        pairs.sort_unstable();
        pairs.dedup();
        conversation.gold_pairs = Some(pairs);
        out.conversations.push(conversation);
    }
    Ok(out)
}

/// Writes ECPE training records for `train` (gold) followed by records for
/// every target of `inference_split` that has inferred pairs.
///
/// Ids carry a `:gold` or `:selftrain` suffix so both origins can coexist
/// even when conversation ids overlap; gold annotations are never replaced.
pub fn build_iterative_dataset(
    compiler: &TemplateCompiler,
    train: &DatasetSplit,
    inference_split: &DatasetSplit,
    inferred_pairs: &PairsByConversation,
    variant: TemplateVariant,
    path: &Path,
) -> Result<IterativeDataset, PipelineError> {
    check_inferred(inference_split, inferred_pairs)?;
    let tag = |mut records: Vec<crate::templates::InstructionRecord>, tag: &str| {
        for r in &mut records {
            r.record_id = format!("{}:{tag}", r.record_id);
        }
        records
    };
    let gold = tag(
        compiler.compile_split(train, Stage::Ecpe, variant, LabelSource::Gold, Mode::Train)?,
        GOLD_TAG,
    );

    let pseudo = pseudo_gold(inference_split, inferred_pairs)?;
    let targets: BTreeSet<(String, u32)> = inferred_pairs
        .iter()
        .flat_map(|(id, pairs)| pairs.iter().map(move |p| (id.clone(), p.emotion_index)))
        .collect();
    let inferred: Vec<_> = compiler
        .compile_split(&pseudo, Stage::Ecpe, variant, LabelSource::Gold, Mode::Train)?
        .into_iter()
        .filter(|r| targets.contains(&(r.target.conversation.clone(), r.target.index)))
        .collect();
    let inferred = tag(inferred, SELFTRAIN_TAG);

    let dataset = IterativeDataset {
        path: path.to_path_buf(),
        gold_records: gold.len(),
        inferred_records: inferred.len(),
    };
    let mut all = gold;
    all.extend(inferred);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(super::io_err(dir))?;
    }
    render_training_file(&all, path)?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{demo_conversation, EmotionCategory::*};
    use crate::templates::read_record_lines;

    fn train() -> DatasetSplit {
        DatasetSplit::new("train", vec![demo_conversation()])
    }

    fn inference() -> DatasetSplit {
        let mut c = demo_conversation();
        c.id = "conv_9".into();
        c.gold_pairs = None;
        for u in &mut c.utterances {
            u.gold_emotion = None;
        }
        DatasetSplit::new("test", vec![c])
    }

    #[test]
    fn counts_add_up() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("iter.jsonl");
        // demo has five non-neutral targets; three inferred targets
        let inferred: PairsByConversation = [(
            "conv_9".to_string(),
            vec![
                EmotionCausePair::new(1, Joy, 1),
                EmotionCausePair::new(2, Surprise, 1),
                EmotionCausePair::new(4, Joy, 2),
                EmotionCausePair::new(4, Joy, 3),
            ],
        )]
        .into();
        let ds = build_iterative_dataset(&TemplateCompiler::default(), &train(), &inference(), &inferred, TemplateVariant::default(), &path).unwrap();
        assert_eq!((ds.gold_records, ds.inferred_records), (5, 3));
        let lines = read_record_lines(&path).unwrap();
        assert_eq!(lines.len(), 8);
        assert!(lines[..5].iter().all(|l| l.id.ends_with(":gold")));
        assert_eq!(lines[7].id, "conv_9:4:ECPE:selftrain");
        assert_eq!(lines[7].output, "2, 3");
    }

    #[test]
    fn no_inferred_pairs_is_gold_only_emission() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("iter.jsonl");
        let ds = build_iterative_dataset(&TemplateCompiler::default(), &train(), &inference(), &PairsByConversation::new(), TemplateVariant::default(), &path).unwrap();
        assert_eq!(ds.inferred_records, 0);
        let gold = TemplateCompiler::default()
            .compile_split(&train(), Stage::Ecpe, TemplateVariant::default(), LabelSource::Gold, Mode::Train)
            .unwrap();
        let lines = read_record_lines(&path).unwrap();
        assert_eq!(lines.len(), gold.len());
        for (line, record) in lines.iter().zip(&gold) {
            assert_eq!(line.id, format!("{}:gold", record.record_id));
            assert_eq!((&line.instruction, &line.output), (&record.prompt, &record.expected_output));
        }
    }

    #[test]
    fn dangling_inferred_pair_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let inferred: PairsByConversation = [("conv_9".to_string(), vec![EmotionCausePair::new(9, Joy, 2)])].into();
        let err = build_iterative_dataset(&TemplateCompiler::default(), &train(), &inference(), &inferred, TemplateVariant::default(), &dir.path().join("x.jsonl"));
        assert!(matches!(err, Err(PipelineError::Precondition(_))));
    }
}
