mod common;

use std::collections::BTreeMap;

use emocause::corpus::{
    apply_video_descriptions, ecf, inject_predicted_emotions, merge_splits, parse_split, validate_split, CorpusError,
    DatasetSplit, EmotionCategory, Rule, SidecarEntry, UtteranceKey,
};
use proptest::prelude::*;
use rand::Rng;

fn split_from(seed: u64, name: &str) -> DatasetSplit {
    common::split(seed, name, 1 + (seed % 6) as usize, 9)
}

fn to_ecf(split: &DatasetSplit) -> String {
    let doc: Vec<serde_json::Value> = split
        .conversations
        .iter()
        .map(|c| {
            let utterances: Vec<_> = c
                .utterances
                .iter()
                .map(|u| {
                    serde_json::json!({
                        "utterance_ID": u.index,
                        "text": u.text,
                        "speaker": u.speaker,
                        "emotion": u.gold_emotion.unwrap().as_str(),
                        "video_name": format!("dia{}utt{}.mp4", c.id, u.index),
                    })
                })
                .collect();
            let pairs: Vec<_> = c
                .gold_pairs
                .iter()
                .flatten()
                .map(|p| {
                    serde_json::json!([format!("{}_{}", p.emotion_index, p.category), format!("{}_span text", p.cause_index)])
                })
                .collect();
            serde_json::json!({"conversation_ID": c.id, "conversation": utterances, "emotion-cause_pairs": pairs})
        })
        .collect();
    serde_json::to_string(&doc).unwrap()
}

fn rule_of(result: Result<DatasetSplit, CorpusError>) -> Option<Rule> {
    result.err().and_then(|e| e.rule())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_round_trip(seed in any::<u64>()) {
        let split = split_from(seed, "train");
        prop_assert!(validate_split(&split).is_valid());
        let back = parse_split(&split.to_canonical_json(), "train").unwrap();
        prop_assert_eq!(&back, &split);
        prop_assert_eq!(back.to_canonical_json(), split.to_canonical_json());
    }

    #[test]
    fn merge_adds_sizes_and_associates(seed in any::<u64>()) {
        let (a, b, c) = (split_from(seed, "a"), split_from(seed ^ 1, "b"), split_from(seed ^ 2, "c"));
        let ab = merge_splits(&a, &b, "m").unwrap();
        prop_assert_eq!(ab.conversations.len(), a.conversations.len() + b.conversations.len());
        prop_assert_eq!(ab.utterance_count(), a.utterance_count() + b.utterance_count());
        let left = merge_splits(&ab, &c, "m").unwrap();
        let right = merge_splits(&a, &merge_splits(&b, &c, "m").unwrap(), "m").unwrap();
        prop_assert_eq!(left, right);
        prop_assert!(matches!(merge_splits(&a, &a, "m"), Err(CorpusError::IdCollision(_))));
    }

    #[test]
    fn injection_is_idempotent_and_keeps_gold(seed in any::<u64>()) {
        let split = split_from(seed, "test");
        let mut rng = common::rng(seed);
        let predictions: BTreeMap<UtteranceKey, EmotionCategory> = split
            .conversations
            .iter()
            .flat_map(|c| c.utterances.iter().map(move |u| UtteranceKey::new(c.id.clone(), u.index)))
            .filter_map(|k| rng.gen_bool(0.7).then(|| (k, EmotionCategory::ALL[rng.gen_range(0..7)])))
            .collect();
        let once = inject_predicted_emotions(&split, &predictions).unwrap();
        prop_assert_eq!(&inject_predicted_emotions(&once, &predictions).unwrap(), &once);
        for (c, orig) in once.conversations.iter().zip(&split.conversations) {
            for (u, o) in c.utterances.iter().zip(&orig.utterances) {
                prop_assert_eq!(u.gold_emotion, o.gold_emotion);
                let key = UtteranceKey::new(c.id.clone(), u.index);
                prop_assert_eq!(u.predicted_emotion, predictions.get(&key).copied());
            }
        }
    }

    #[test]
    fn sidecar_is_idempotent(seed in any::<u64>()) {
        let split = split_from(seed, "test");
        let entries: Vec<SidecarEntry> = split
            .conversations
            .iter()
            .flat_map(|c| c.utterances.iter().step_by(2).map(move |u| SidecarEntry {
                conversation: c.id.clone(),
                index: u.index,
                description: format!("{} shrugs.", u.speaker),
            }))
            .collect();
        let (once, warnings) = apply_video_descriptions(&split, &entries);
        prop_assert!(warnings.is_empty());
        prop_assert_eq!(&apply_video_descriptions(&once, &entries).0, &once);
        let described: usize = once.conversations.iter().flat_map(|c| &c.utterances).filter(|u| u.video_description.is_some()).count();
        prop_assert_eq!(described, entries.len());
    }

    #[test]
    fn mutations_are_detected(seed in any::<u64>()) {
        let split = split_from(seed, "train");
        let mut rng = common::rng(seed);
        let load = |s: &DatasetSplit| parse_split(&s.to_canonical_json(), "train");

        let mut dup = split.clone();
        dup.conversations.push(split.conversations[0].clone());
        prop_assert_eq!(rule_of(load(&dup)), Some(Rule::DuplicateConversationId));

        let mut gap = split.clone();
        let c = &mut gap.conversations[0];
        c.gold_pairs = None;
        let at = rng.gen_range(0..c.utterances.len());
        c.utterances[at].index += 1;
        prop_assert_eq!(rule_of(load(&gap)), Some(Rule::NonContiguousIndex));

        if let Some((ci, pi)) = split.conversations.iter().enumerate().find_map(|(i, c)| c.gold_pairs.as_ref().filter(|p| !p.is_empty()).map(|_| (i, 0))) {
            let mut dangling = split.clone();
            let c = &mut dangling.conversations[ci];
            let n = c.utterances.len() as u32;
            c.gold_pairs.as_mut().unwrap()[pi].cause_index = n + 1;
            prop_assert_eq!(rule_of(load(&dangling)), Some(Rule::DanglingPair));

            let mut mismatch = split.clone();
            let pair = &mut mismatch.conversations[ci].gold_pairs.as_mut().unwrap()[pi];
            pair.category = EmotionCategory::PAIRABLE.into_iter().find(|&k| k != pair.category).unwrap();
            prop_assert_eq!(rule_of(load(&mismatch)), Some(Rule::CategoryMismatch));

            let mut repeated = split.clone();
            let pairs = repeated.conversations[ci].gold_pairs.as_mut().unwrap();
            pairs.push(pairs[pi]);
            prop_assert_eq!(rule_of(load(&repeated)), Some(Rule::DuplicatePair));
        }
    }

    #[test]
    fn official_layout_converts_to_the_same_split(seed in any::<u64>()) {
        let split = split_from(seed, "train");
        let converted = ecf::convert_str(&to_ecf(&split), "train").unwrap();
        prop_assert_eq!(converted.conversations.len(), split.conversations.len());
        for (c, o) in converted.conversations.iter().zip(&split.conversations) {
            prop_assert_eq!(&c.id, &o.id);
            prop_assert_eq!(&c.gold_pairs, &o.gold_pairs);
            for (u, v) in c.utterances.iter().zip(&o.utterances) {
                prop_assert_eq!((&u.text, &u.speaker, u.gold_emotion), (&v.text, &v.speaker, v.gold_emotion));
            }
        }
    }
}
