//! Precision, recall and weighted-average F1 over emotion-cause pairs and
//! over emotion labels.
//!
//! A predicted pair is correct only when the whole triple matches a gold
//! triple. Per-category F1 scores are averaged with weights proportional to
//! each category's gold support; categories without gold support are left
//! out of the average. Precision is 0 for a category without predictions,
//! recall is 0 for a category without gold, and F1 is 0 when both are 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::hash::Hash;

use serde::Serialize;

use crate::corpus::{EmotionCategory, EmotionCausePair};
use crate::parser::PairsByConversation;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("gold set is empty; weighted F1 is undefined")]
    EmptyGold,
    #[error("gold and predicted label maps cover different utterances ({missing} missing, {extra} extra)")]
    KeyMismatch { missing: usize, extra: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CategoryCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl CategoryCounts {
    pub fn gold(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn predicted(&self) -> usize {
        self.tp + self.fp
    }

    pub fn prf(&self) -> Prf {
        Prf::from_counts(self.tp, self.predicted(), self.gold())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CategoryScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub gold: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    /// Every category with gold or predicted support.
    pub per_category: BTreeMap<EmotionCategory, CategoryScore>,
    pub weighted_f1: f64,
    pub micro: Prf,
    pub gold_total: usize,
    pub pred_total: usize,
}

impl ScoreReport {
    /// Sorted-key JSON document.
    pub fn to_json(&self) -> String {
        crate::io::to_sorted_json(self)
    }

    /// Plain-text table with four decimals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>9} {:>9} {:>9} {:>6} {:>6}", "category", "precision", "recall", "f1", "gold", "pred");
        for (category, s) in &self.per_category {
            let _ = writeln!(
                out,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>6} {:>6}",
                category.as_str(),
                s.precision,
                s.recall,
                s.f1,
                s.gold,
                s.predicted
            );
        }
        let _ = writeln!(
            out,
            "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>6} {:>6}",
            "micro", self.micro.precision, self.micro.recall, self.micro.f1, self.gold_total, self.pred_total
        );
        let _ = writeln!(out, "weighted f1: {:.4}", self.weighted_f1);
        out
    }
}

/// Anything scored by exact match that belongs to one category.
pub trait Categorized: Ord + Hash + Clone {
    fn category(&self) -> EmotionCategory;
}

impl Categorized for EmotionCausePair {
    fn category(&self) -> EmotionCategory {
        self.category
    }
}

/// A pair tagged with its conversation, for corpus-wide scoring.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CorpusPair {
    pub conversation: String,
    pub pair: EmotionCausePair,
}

impl Categorized for CorpusPair {
    fn category(&self) -> EmotionCategory {
        self.pair.category
    }
}

/// Per-category tp/fp/fn under set semantics.
pub fn count_by_category<T: Categorized>(gold: &[T], pred: &[T]) -> BTreeMap<EmotionCategory, CategoryCounts> {
    let gold: BTreeSet<&T> = gold.iter().collect();
    let pred: BTreeSet<&T> = pred.iter().collect();
    let mut counts: BTreeMap<EmotionCategory, CategoryCounts> = BTreeMap::new();
    for item in &pred {
        let entry = counts.entry(item.category()).or_default();
        if gold.contains(item) {
            entry.tp += 1;
        } else {
            entry.fp += 1;
        }
    }
    for item in gold.difference(&pred) {
        counts.entry(item.category()).or_default().fn_ += 1;
    }
    counts
}

fn report_from_counts(counts: &BTreeMap<EmotionCategory, CategoryCounts>) -> Result<ScoreReport, MetricsError> {
    let gold_total: usize = counts.values().map(CategoryCounts::gold).sum();
    if gold_total == 0 {
        return Err(MetricsError::EmptyGold);
    }
    let pred_total: usize = counts.values().map(CategoryCounts::predicted).sum();
    let tp_total: usize = counts.values().map(|c| c.tp).sum();
    let mut per_category = BTreeMap::new();
    let mut weighted_sum = 0.0;
    for (&category, c) in counts {
        let prf = c.prf();
        if c.gold() > 0 {
            weighted_sum += prf.f1 * c.gold() as f64;
        }
        per_category.insert(
            category,
            CategoryScore {
                precision: prf.precision,
                recall: prf.recall,
                f1: prf.f1,
                tp: c.tp,
                gold: c.gold(),
                predicted: c.predicted(),
            },
        );
    }
    Ok(ScoreReport {
        per_category,
        weighted_f1: weighted_sum / gold_total as f64,
        micro: Prf::from_counts(tp_total, pred_total, gold_total),
        gold_total,
        pred_total,
    })
}

/// Scores predicted pairs of one conversation (or any flat pair list).
pub fn score_pairs(gold: &[EmotionCausePair], pred: &[EmotionCausePair]) -> Result<ScoreReport, MetricsError> {
    report_from_counts(&count_by_category(gold, pred))
}

fn flatten(pairs: &PairsByConversation) -> Vec<CorpusPair> {
    pairs
        .iter()
        .flat_map(|(conversation, pairs)| {
            pairs.iter().map(move |&pair| CorpusPair {
                conversation: conversation.clone(),
                pair,
            })
        })
        .collect()
}

/// Scores pairs across a corpus; pairs only match within the same conversation.
pub fn score_corpus(gold: &PairsByConversation, pred: &PairsByConversation) -> Result<ScoreReport, MetricsError> {
    report_from_counts(&count_by_category(&flatten(gold), &flatten(pred)))
}

/// Per-label scoring of emotion predictions over identical key sets.
pub fn score_erc<K: Ord>(
    gold: &BTreeMap<K, EmotionCategory>,
    pred: &BTreeMap<K, EmotionCategory>,
) -> Result<ScoreReport, MetricsError> {
    let missing = gold.keys().filter(|k| !pred.contains_key(k)).count();
    let extra = pred.keys().filter(|k| !gold.contains_key(k)).count();
    if missing + extra > 0 {
        return Err(MetricsError::KeyMismatch { missing, extra });
    }
    let mut counts: BTreeMap<EmotionCategory, CategoryCounts> = BTreeMap::new();
    for (key, &g) in gold {
        let p = pred[key];
        if g == p {
            counts.entry(g).or_default().tp += 1;
        } else {
            counts.entry(g).or_default().fn_ += 1;
            counts.entry(p).or_default().fp += 1;
        }
    }
    report_from_counts(&counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EmotionCategory::*;
    use proptest::prelude::*;

    fn gold() -> Vec<EmotionCausePair> {
        vec![
            EmotionCausePair::new(4, Joy, 2),
            EmotionCausePair::new(4, Joy, 3),
            EmotionCausePair::new(5, Disgust, 5),
        ]
    }

    // Brute force: compare every predicted triple with every gold triple.
    fn oracle_weighted_f1(gold: &[EmotionCausePair], pred: &[EmotionCausePair]) -> f64 {
        let mut g = gold.to_vec();
        g.sort();
        g.dedup();
        let mut p = pred.to_vec();
        p.sort();
        p.dedup();
        let mut total = 0.0;
        for category in EmotionCategory::ALL {
            let gc: Vec<_> = g.iter().filter(|x| x.category == category).collect();
            let pc: Vec<_> = p.iter().filter(|x| x.category == category).collect();
            let tp = pc.iter().filter(|x| gc.iter().any(|y| y == *x)).count() as f64;
            if gc.is_empty() {
                continue;
            }
            let precision = if pc.is_empty() { 0.0 } else { tp / pc.len() as f64 };
            let recall = tp / gc.len() as f64;
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            total += f1 * gc.len() as f64 / g.len() as f64;
        }
        total
    }

    #[test]
    fn worked_values() {
        assert_eq!(score_pairs(&gold(), &gold()).unwrap().weighted_f1, 1.0);
        assert_eq!(score_pairs(&gold(), &[]).unwrap().weighted_f1, 0.0);

        let one = score_pairs(&gold(), &[EmotionCausePair::new(4, Joy, 2)]).unwrap();
        assert!((one.per_category[&Joy].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(one.per_category[&Disgust].f1, 0.0);
        assert!((one.weighted_f1 - 4.0 / 9.0).abs() < 1e-12);
        assert_eq!(format!("{:.4}", one.weighted_f1), "0.4444");

        let three = score_pairs(
            &gold(),
            &[EmotionCausePair::new(4, Joy, 2), EmotionCausePair::new(4, Joy, 1), EmotionCausePair::new(5, Disgust, 5)],
        )
        .unwrap();
        assert!((three.per_category[&Joy].f1 - 0.5).abs() < 1e-12);
        assert_eq!(three.per_category[&Disgust].f1, 1.0);
        assert!((three.weighted_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_agrees_on_worked_values() {
        assert!((oracle_weighted_f1(&gold(), &[EmotionCausePair::new(4, Joy, 2)]) - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn empty_gold_is_an_error() {
        assert_eq!(score_pairs(&[], &gold()), Err(MetricsError::EmptyGold));
    }

    #[test]
    fn duplicates_and_wrong_category_predictions() {
        let mut pred = gold();
        pred.extend(gold());
        let report = score_pairs(&gold(), &pred).unwrap();
        assert_eq!((report.pred_total, report.weighted_f1), (3, 1.0));

        let report = score_pairs(&gold(), &[EmotionCausePair::new(4, Anger, 2)]).unwrap();
        assert_eq!(report.per_category[&Anger].precision, 0.0);
        assert_eq!(report.weighted_f1, 0.0);
        assert_eq!(report.micro.precision, 0.0);
    }

    #[test]
    fn corpus_pairs_match_within_conversation_only() {
        let gold: PairsByConversation = [("a".to_string(), vec![EmotionCausePair::new(2, Joy, 1)])].into();
        let pred: PairsByConversation = [("b".to_string(), vec![EmotionCausePair::new(2, Joy, 1)])].into();
        assert_eq!(score_corpus(&gold, &pred).unwrap().weighted_f1, 0.0);
        assert_eq!(score_corpus(&gold, &gold).unwrap().weighted_f1, 1.0);
    }

    #[test]
    fn erc_examples() {
        let labels = |xs: &[EmotionCategory]| xs.iter().copied().enumerate().collect::<BTreeMap<_, _>>();
        let g = labels(&[Joy, Surprise, Neutral]);
        assert_eq!(score_erc(&g, &g).unwrap().weighted_f1, 1.0);
        assert_eq!(score_erc(&labels(&[Joy; 4]), &labels(&[Sadness; 4])).unwrap().weighted_f1, 0.0);
        let report = score_erc(&labels(&[Joy, Joy, Anger]), &labels(&[Joy, Anger, Anger])).unwrap();
        assert!((report.per_category[&Joy].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.per_category[&Anger].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.weighted_f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            score_erc(&labels(&[Joy]), &labels(&[Joy, Joy])),
            Err(MetricsError::KeyMismatch { missing: 0, extra: 1 })
        );
    }

    #[test]
    fn report_json_has_sorted_keys() {
        let json = score_pairs(&gold(), &gold()).unwrap().to_json();
        let keys = ["gold_total", "micro", "per_category", "pred_total", "weighted_f1"];
        let positions: Vec<_> = keys.iter().map(|k| json.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    fn arb_pair() -> impl Strategy<Value = EmotionCausePair> {
        (1u32..=8, prop::sample::select(EmotionCategory::PAIRABLE.to_vec()), 1u32..=8)
            .prop_map(|(e, c, k)| EmotionCausePair::new(e, c, k))
    }

    proptest! {
        #[test]
        fn matches_bruteforce(gold in prop::collection::vec(arb_pair(), 1..=6), pred in prop::collection::vec(arb_pair(), 0..=6)) {
            let report = score_pairs(&gold, &pred).unwrap();
            prop_assert!((report.weighted_f1 - oracle_weighted_f1(&gold, &pred)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&report.weighted_f1));
        }

        #[test]
        fn monotone_in_matching_and_spurious(gold in prop::collection::vec(arb_pair(), 1..=6), pred in prop::collection::vec(arb_pair(), 0..=6), extra in arb_pair(), pick in 0usize..6) {
            let base = score_pairs(&gold, &pred).unwrap().weighted_f1;
            let mut with_hit = pred.clone();
            with_hit.push(gold[pick % gold.len()]);
            prop_assert!(score_pairs(&gold, &with_hit).unwrap().weighted_f1 >= base - 1e-12);
            if !gold.contains(&extra) {
                let mut with_miss = pred.clone();
                with_miss.push(extra);
                prop_assert!(score_pairs(&gold, &with_miss).unwrap().weighted_f1 <= base + 1e-12);
            }
        }

        #[test]
        fn order_free_and_perfect_on_self(gold in prop::collection::vec(arb_pair(), 1..=6), pred in prop::collection::vec(arb_pair(), 0..=6)) {
            let mut reversed = pred.clone();
            reversed.reverse();
            prop_assert_eq!(score_pairs(&gold, &pred).unwrap(), score_pairs(&gold, &reversed).unwrap());
            prop_assert_eq!(score_pairs(&gold, &gold).unwrap().weighted_f1, 1.0);
        }
    }
}
