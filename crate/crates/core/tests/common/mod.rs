#![allow(dead_code)]

use emocause::corpus::{Conversation, DatasetSplit, EmotionCategory, EmotionCausePair, Utterance};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SPEAKERS: [&str; 6] = ["Chandler", "Phoebe", "Monica", "Ross", "Rachel", "Joey"];
const WORDS: [&str; 16] = [
    "hey", "you", "made", "up", "yeah", "couldn't", "be", "mad", "at", "him", "for", "too", "long", "oh", "get", "room",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sentence(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(1..=9);
    let mut words: Vec<String> = (0..n).map(|_| WORDS.choose(rng).unwrap().to_string()).collect();
    // numerals in the text must not leak into parsed replies
    if rng.gen_bool(0.2) {
        words.push(rng.gen_range(1..40).to_string());
    }
    let mut s = words.join(" ");
    s.push(if rng.gen_bool(0.3) { '!' } else { '.' });
    s
}

/// A labeled conversation whose gold causes never follow their emotion utterance.
pub fn conversation(rng: &mut impl Rng, id: String, max_len: u32) -> Conversation {
    let n = rng.gen_range(1..=max_len);
    let utterances: Vec<Utterance> = (1..=n)
        .map(|i| {
            let label = if rng.gen_bool(0.4) {
                EmotionCategory::Neutral
            } else {
                *EmotionCategory::PAIRABLE.choose(rng).unwrap()
            };
            Utterance::new(i, *SPEAKERS.choose(rng).unwrap(), sentence(rng)).with_gold(label)
        })
        .collect();
    let mut pairs = Vec::new();
    for u in &utterances {
        let category = u.gold_emotion.unwrap();
        if category.is_neutral() || rng.gen_bool(0.25) {
            continue;
        }
        let k = rng.gen_range(1..=u.index.min(3));
        let mut causes: Vec<u32> = (1..=u.index).collect();
        causes.shuffle(rng);
        pairs.extend(causes[..k as usize].iter().map(|&c| EmotionCausePair::new(u.index, category, c)));
    }
    pairs.sort_unstable();
    Conversation {
        id,
        utterances,
        gold_pairs: Some(pairs),
    }
}

pub fn split(seed: u64, name: &str, conversations: usize, max_len: u32) -> DatasetSplit {
    let mut rng = rng(seed);
    let conversations = (0..conversations)
        .map(|i| conversation(&mut rng, format!("{name}_{i:03}"), max_len))
        .collect();
    DatasetSplit::new(name, conversations)
}

/// Writes `split` as a canonical document under `dir`.
pub fn write_split(dir: &std::path::Path, file: &str, split: &DatasetSplit) -> std::path::PathBuf {
    let path = dir.join(file);
    std::fs::write(&path, split.to_canonical_json()).unwrap();
    path
}
