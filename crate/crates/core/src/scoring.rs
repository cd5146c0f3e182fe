//! Hard and soft quadruplet F1.
//!
//! A hard match requires all four fields to be equal. A soft match requires
//! equal targeted group and hatefulness, and target and argument similarity
//! above a threshold. Predictions are matched greedily, in order, to the first
//! still-unmatched gold record of the same sample; scores are micro-averaged
//! over the whole split and reported on a 0-100 scale.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Quadruplet;

/// Longest common subsequence length over Unicode scalar values.
pub fn lcs_len(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &ca in &a {
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `2 * LCS(a, b) / (|a| + |b|)` in characters; two empty strings score 1.
pub fn similarity(a: &str, b: &str) -> f64 {
    let total = a.chars().count() + b.chars().count();
    if total == 0 {
        return 1.0;
    }
    2.0 * lcs_len(a, b) as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    #[default]
    StrictGt,
    Gte,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchPolicy {
    pub threshold: f64,
    pub comparison: Comparison,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            comparison: Comparison::StrictGt,
        }
    }
}

impl MatchPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(format!("similarity threshold must be in (0, 1], got {}", self.threshold));
        }
        Ok(())
    }

    pub fn passes(&self, sim: f64) -> bool {
        match self.comparison {
            Comparison::StrictGt => sim > self.threshold,
            Comparison::Gte => sim >= self.threshold,
        }
    }
}

pub fn hard_match(p: &Quadruplet, g: &Quadruplet) -> bool {
    p.target.trim() == g.target.trim()
        && p.argument.trim() == g.argument.trim()
        && p.targeted_group.trim() == g.targeted_group.trim()
        && p.hateful == g.hateful
}

pub fn soft_match(p: &Quadruplet, g: &Quadruplet, policy: &MatchPolicy) -> bool {
    p.targeted_group.trim() == g.targeted_group.trim()
        && p.hateful == g.hateful
        && policy.passes(similarity(p.target.trim(), g.target.trim()))
        && policy.passes(similarity(p.argument.trim(), g.argument.trim()))
}

/// Greedy first-fit matching; returns the number of matched pairs.
pub fn greedy_matches<F>(preds: &[Quadruplet], golds: &[Quadruplet], matcher: F) -> usize
where
    F: Fn(&Quadruplet, &Quadruplet) -> bool,
{
    let mut used = vec![false; golds.len()];
    let mut tp = 0;
    for p in preds {
        if let Some(j) = (0..golds.len()).find(|&j| !used[j] && matcher(p, &golds[j])) {
            used[j] = true;
            tp += 1;
        }
    }
    tp
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub tp: usize,
    pub pred_total: usize,
    pub gold_total: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Scores on a 0-100 scale; empty denominators give 0.
    pub fn from_counts(tp: usize, pred_total: usize, gold_total: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let p = ratio(tp, pred_total);
        let r = ratio(tp, gold_total);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Self {
            tp,
            pred_total,
            gold_total,
            precision: 100.0 * p,
            recall: 100.0 * r,
            f1: 100.0 * f1,
        }
    }
}

pub fn average_score(hard_f1: f64, soft_f1: f64) -> f64 {
    (hard_f1 + soft_f1) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub hard: Prf,
    pub soft: Prf,
    pub average_score: f64,
}

impl EvalReport {
    pub fn from_counts(samples: usize, hard_tp: usize, soft_tp: usize, pred_total: usize, gold_total: usize) -> Self {
        let hard = Prf::from_counts(hard_tp, pred_total, gold_total);
        let soft = Prf::from_counts(soft_tp, pred_total, gold_total);
        Self {
            samples,
            hard,
            soft,
            average_score: average_score(hard.f1, soft.f1),
        }
    }

    pub fn table(&self) -> String {
        let row = |name: &str, m: &Prf| {
            format!(
                "{name:<8} {:>9.2} {:>9.2} {:>9.2} {:>7} {:>7} {:>7}\n",
                m.precision, m.recall, m.f1, m.tp, m.pred_total, m.gold_total
            )
        };
        let mut out = format!(
            "{:<8} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7}\n",
            "metric", "P", "R", "F1", "tp", "pred", "gold"
        );
        out.push_str(&row("hard", &self.hard));
        out.push_str(&row("soft", &self.soft));
        out.push_str(&format!("average  {:>29.3}\n", self.average_score));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: u64,
    pub hard: MatchCounts,
    pub soft: MatchCounts,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoreError {
    #[error("prediction for unknown sample id {0}")]
    IdMismatch(u64),
}

/// Scores predictions against golds. Samples without a prediction count as
/// empty predictions.
pub fn score_dataset(
    preds: &HashMap<u64, Vec<Quadruplet>>,
    golds: &BTreeMap<u64, Vec<Quadruplet>>,
    policy: &MatchPolicy,
) -> Result<(EvalReport, Vec<SampleScore>), ScoreError> {
    if let Some(id) = preds.keys().find(|id| !golds.contains_key(id)) {
        return Err(ScoreError::IdMismatch(*id));
    }
    let (mut hard_tp, mut soft_tp, mut pred_total, mut gold_total) = (0, 0, 0, 0);
    let mut per_sample = Vec::with_capacity(golds.len());
    for (&id, gold) in golds {
        let pred = preds.get(&id).map_or(&[][..], Vec::as_slice);
        let h = greedy_matches(pred, gold, hard_match);
        let s = greedy_matches(pred, gold, |p, g| soft_match(p, g, policy));
        hard_tp += h;
        soft_tp += s;
        pred_total += pred.len();
        gold_total += gold.len();
        let counts = |tp| MatchCounts {
            tp,
            fp: pred.len() - tp,
            fn_: gold.len() - tp,
        };
        per_sample.push(SampleScore {
            id,
            hard: counts(h),
            soft: counts(s),
        });
    }
    Ok((
        EvalReport::from_counts(golds.len(), hard_tp, soft_tp, pred_total, gold_total),
        per_sample,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Hatefulness;
    use proptest::prelude::*;

    /// Longest common subsequence by enumerating every subsequence of `a`.
    fn brute_lcs(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let is_subseq = |s: &[char]| {
            let mut it = b.iter();
            s.iter().all(|c| it.any(|x| x == c))
        };
        (0u32..1 << a.len())
            .filter_map(|mask| {
                let s: Vec<char> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
                is_subseq(&s).then_some(s.len())
            })
            .max()
            .unwrap_or(0)
    }

    fn q(t: &str, a: &str, g: &str, h: Hatefulness) -> Quadruplet {
        Quadruplet::new(t, a, g, h).unwrap()
    }

    #[test]
    fn greedy_can_fall_two_short_of_the_optimum() {
        // p1 fits g1 or g3, p2 fits g2 or g4, p3 only g1, p4 only g2.
        let golds: Vec<_> = ["g1", "g2", "g3", "g4"]
            .iter()
            .map(|t| q(t, "x", "Region", Hatefulness::Hate))
            .collect();
        let preds: Vec<_> = ["p1", "p2", "p3", "p4"]
            .iter()
            .map(|t| q(t, "x", "Region", Hatefulness::Hate))
            .collect();
        let fits = |p: &Quadruplet, g: &Quadruplet| {
            matches!(
                (p.target.as_str(), g.target.as_str()),
                ("p1", "g1" | "g3") | ("p2", "g2" | "g4") | ("p3", "g1") | ("p4", "g2")
            )
        };
        assert_eq!(greedy_matches(&preds, &golds, fits), 2);
        let reordered = [preds[2].clone(), preds[3].clone(), preds[0].clone(), preds[1].clone()];
        assert_eq!(greedy_matches(&reordered, &golds, fits), 4);
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity("abcd", "abcd"), 1.0);
        assert_eq!(brute_lcs("abcd", "abef"), 2);
        assert_eq!(similarity("abcd", "abef"), 0.5);
        assert_eq!(similarity("", "x"), 0.0);
        assert_eq!(similarity("", ""), 1.0);
        assert_eq!(similarity("他们都是", "她们都是"), 0.75);
    }

    #[test]
    fn hard_and_soft_examples() {
        let g = q("abcde", "abcdefghij", "Racism", Hatefulness::Hate);
        assert!(hard_match(&g.clone(), &g));
        let other_group = q("abcde", "abcdefghij", "Sexism", Hatefulness::Hate);
        assert!(!hard_match(&other_group, &g));

        // target: LCS 3 of 5+5 -> 0.6; argument: LCS 26 of 51+51 ~ 0.5098
        let p = q("abcxy", "abcdefghij", "Racism", Hatefulness::Hate);
        assert!((similarity(&p.target, &g.target) - 0.6).abs() < 1e-12);
        let g2 = q("abcde", &"a".repeat(51), "Racism", Hatefulness::Hate);
        let p2 = q("abcxy", &format!("{}{}", "a".repeat(26), "b".repeat(25)), "Racism", Hatefulness::Hate);
        let sa = similarity(&p2.argument, &g2.argument);
        assert!((sa - 52.0 / 102.0).abs() < 1e-12 && sa > 0.5);
        assert!(soft_match(&p2, &g2, &MatchPolicy::default()));

        // exactly 0.5 fails the strict gate, passes the inclusive one
        let half = q("abcd", "abcdefghij", "Racism", Hatefulness::Hate);
        let gold = q("abef", "abcdefghij", "Racism", Hatefulness::Hate);
        assert!(!soft_match(&half, &gold, &MatchPolicy::default()));
        let gte = MatchPolicy {
            comparison: Comparison::Gte,
            ..MatchPolicy::default()
        };
        assert!(soft_match(&half, &gold, &gte));

        let mut flipped = g.clone();
        flipped.hateful = Hatefulness::NonHate;
        assert!(!soft_match(&flipped, &g, &MatchPolicy::default()));
    }

    #[test]
    fn perfect_prediction_scores_100() {
        let gold = q("A", "x", "Racism", Hatefulness::Hate);
        let golds: BTreeMap<_, _> = [(1, vec![gold.clone()])].into_iter().collect();
        let preds: HashMap<_, _> = [(1, vec![gold])].into_iter().collect();
        let (r, per) = score_dataset(&preds, &golds, &MatchPolicy::default()).unwrap();
        assert_eq!(r.hard.f1, 100.0);
        assert_eq!(r.soft.f1, 100.0);
        assert_eq!(r.average_score, 100.0);
        assert_eq!(per[0].hard, MatchCounts { tp: 1, fp: 0, fn_: 0 });
    }

    #[test]
    fn one_of_two_predictions_correct() {
        let gold = q("A", "x", "Racism", Hatefulness::Hate);
        let wrong = q("Z", "zzz", "Sexism", Hatefulness::Hate);
        let golds: BTreeMap<_, _> = [(1, vec![gold.clone()])].into_iter().collect();
        let preds: HashMap<_, _> = [(1, vec![wrong, gold])].into_iter().collect();
        let (r, _) = score_dataset(&preds, &golds, &MatchPolicy::default()).unwrap();
        assert!((r.hard.precision - 50.0).abs() < 1e-9);
        assert!((r.hard.recall - 100.0).abs() < 1e-9);
        // F1 = 2 * 0.5 * 1 / 1.5 = 2/3
        assert!((r.hard.f1 - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn gold_used_once_and_missing_preds_are_empty() {
        let gold = q("A", "x", "Racism", Hatefulness::Hate);
        let golds: BTreeMap<_, _> = [(1, vec![gold.clone()]), (2, vec![gold.clone()])].into_iter().collect();
        let preds: HashMap<_, _> = [(1, vec![gold.clone(), gold.clone()])].into_iter().collect();
        let (r, per) = score_dataset(&preds, &golds, &MatchPolicy::default()).unwrap();
        assert_eq!(r.hard.tp, 1);
        assert_eq!(r.hard.pred_total, 2);
        assert_eq!(r.hard.gold_total, 2);
        assert_eq!(per[1].hard, MatchCounts { tp: 0, fp: 0, fn_: 1 });
    }

    #[test]
    fn unknown_prediction_id_is_rejected() {
        let golds: BTreeMap<u64, Vec<Quadruplet>> = BTreeMap::new();
        let preds: HashMap<_, _> = [(5, vec![])].into_iter().collect();
        assert_eq!(
            score_dataset(&preds, &golds, &MatchPolicy::default()).unwrap_err(),
            ScoreError::IdMismatch(5)
        );
    }

    #[test]
    fn table_renders() {
        let r = EvalReport::from_counts(1, 1, 1, 2, 1);
        let t = r.table();
        assert!(t.contains("hard") && t.contains("66.67"));
    }

    proptest! {
        #[test]
        fn lcs_matches_brute_force(a in "[abc]{0,8}", b in "[abc]{0,8}") {
            prop_assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
        }

        #[test]
        fn similarity_symmetric_and_bounded(a in "[ab\u{4e00}]{0,10}", b in "[ab\u{4e00}]{0,10}") {
            let s = similarity(&a, &b);
            prop_assert_eq!(s, similarity(&b, &a));
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(similarity(&a, &a), 1.0);
        }

        #[test]
        fn hard_implies_soft(
            t in "[ab]{1,3}", a in "[ab]{1,3}", t2 in "[ab]{1,3}", a2 in "[ab]{1,3}",
            g in prop::sample::select(vec!["G1", "G2"]), g2 in prop::sample::select(vec!["G1", "G2"])
        ) {
            let p = q(&t, &a, g, Hatefulness::Hate);
            let gold = q(&t2, &a2, g2, Hatefulness::Hate);
            if hard_match(&p, &gold) {
                prop_assert!(soft_match(&p, &gold, &MatchPolicy::default()));
            }
        }
    }
}
