//! Metrics, the majority-answer baseline, bias-group reports and the unbiased
//! test-set resampler.
//!
//! The resampler draws, for every question in the test pool, as many scoring
//! targets as the pool holds, split evenly between correct and incorrect
//! answers and sampled with replacement inside each class. Histories are left
//! untouched: only the set of scored positions changes.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnswerStats, BiasGroup, Interaction};
use crate::debias::{InferenceMode, PredictionRecord};
use crate::error::{Error, Result};

/// Anything that can be a scoring target.
pub trait TestItem {
    fn student(&self) -> usize;
    fn step(&self) -> usize;
    fn question(&self) -> usize;
    fn label(&self) -> bool;
}

impl TestItem for Interaction {
    fn student(&self) -> usize {
        self.student
    }
    fn step(&self) -> usize {
        self.step
    }
    fn question(&self) -> usize {
        self.question
    }
    fn label(&self) -> bool {
        self.correct
    }
}

impl TestItem for PredictionRecord {
    fn student(&self) -> usize {
        self.student
    }
    fn step(&self) -> usize {
        self.step
    }
    fn question(&self) -> usize {
        self.question
    }
    fn label(&self) -> bool {
        self.label
    }
}

/// A target with a ranking score and a hard prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTarget {
    pub student: usize,
    pub step: usize,
    pub question: usize,
    pub label: bool,
    pub score: f64,
    pub predicted: bool,
}

impl TestItem for ScoredTarget {
    fn student(&self) -> usize {
        self.student
    }
    fn step(&self) -> usize {
        self.step
    }
    fn question(&self) -> usize {
        self.question
    }
    fn label(&self) -> bool {
        self.label
    }
}

/// Fraction of positions where `score > threshold` agrees with the label.
pub fn accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    if scores.is_empty() {
        return Err(Error::Empty("accuracy of no records"));
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s > threshold) == l)
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!("{a} scores for {b} labels")));
    }
    Ok(())
}

/// Area under the ROC curve as the Mann-Whitney statistic, with average ranks
/// for tied scores (a tied positive/negative pair counts one half).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc("needs at least one positive and one negative label"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("AUC of NaN scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean.
        let rank = (i + j + 2) as f64 / 2.0;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += rank * pos_in_tie as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Threshold maximizing accuracy on held-out scores; candidates are midpoints
/// between consecutive distinct scores plus both ends.
pub fn calibrate_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    if scores.is_empty() {
        return Err(Error::Empty("threshold calibration without records"));
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Start below every score: everything predicted correct.
    let mut hits = labels.iter().filter(|&&l| l).count() as i64;
    let mut best = (hits, pairs[0].0 - 1.0);
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            // Moving the threshold past this score flips its prediction to incorrect.
            hits += if pairs[j].1 { -1 } else { 1 };
            j += 1;
        }
        let cut = if j < pairs.len() {
            0.5 * (pairs[i].0 + pairs[j].0)
        } else {
            pairs[i].0 + 1.0
        };
        if hits > best.0 {
            best = (hits, cut);
        }
        i = j;
    }
    Ok(best.1)
}

/// Turns model records into scored targets under `mode`.
pub fn score_records(records: &[PredictionRecord], mode: InferenceMode, threshold: f64) -> Vec<ScoredTarget> {
    records
        .iter()
        .map(|r| {
            let score = r.score(mode);
            ScoredTarget {
                student: r.student,
                step: r.step,
                question: r.question,
                label: r.label,
                score,
                predicted: score > threshold,
            }
        })
        .collect()
}

/// Predicts each target's question by its more frequent training answer.
///
/// The ranking score is the training correct rate. Unseen questions and exact
/// ties predict "correct" (score 0.5).
pub fn majority_baseline<T: TestItem>(stats: &AnswerStats, targets: &[T]) -> Vec<ScoredTarget> {
    targets
        .iter()
        .map(|t| {
            let c = stats.counts(t.question());
            let (score, predicted) = match c.correct_rate() {
                Some(rate) => (rate, c.n_correct >= c.n_incorrect),
                None => (0.5, true),
            };
            ScoredTarget {
                student: t.student(),
                step: t.step(),
                question: t.question(),
                label: t.label(),
                score,
                predicted,
            }
        })
        .collect()
}

/// Balanced scoring targets drawn from a test pool.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnbiasedTestSet {
    pub seed: u64,
    /// Indices into the pool; repeats allowed. Grouped by question.
    pub indices: Vec<usize>,
    /// Questions whose pool lacks one of the two answers.
    pub excluded: Vec<usize>,
}

impl UnbiasedTestSet {
    pub fn select<T: Clone>(&self, pool: &[T]) -> Vec<T> {
        self.indices.iter().map(|&i| pool[i].clone()).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(f)?)
    }
}

/// Resamples `pool` into a class-balanced set of the same per-question size.
///
/// For a question with `n` targets, draws `ceil(n/2)` from one class and
/// `floor(n/2)` from the other, uniformly with replacement within each class.
/// When `n` is odd a fair coin picks the larger class.
pub fn resample_unbiased<T: TestItem>(pool: &[T], seed: u64) -> Result<UnbiasedTestSet> {
    if pool.is_empty() {
        return Err(Error::Empty("resampling an empty test log"));
    }
    let mut by_question: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, item) in pool.iter().enumerate() {
        let entry = by_question.entry(item.question()).or_default();
        if item.label() {
            entry.0.push(i);
        } else {
            entry.1.push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = Vec::with_capacity(pool.len());
    let mut excluded = Vec::new();
    for (question, (correct, incorrect)) in by_question {
        if correct.is_empty() || incorrect.is_empty() {
            excluded.push(question);
            continue;
        }
        let n = correct.len() + incorrect.len();
        let (mut n_correct, mut n_incorrect) = (n / 2, n / 2);
        if n % 2 == 1 {
            if rng.gen_bool(0.5) {
                n_correct += 1;
            } else {
                n_incorrect += 1;
            }
        }
        indices.extend((0..n_correct).map(|_| *correct.choose(&mut rng).expect("non-empty")));
        indices.extend((0..n_incorrect).map(|_| *incorrect.choose(&mut rng).expect("non-empty")));
    }
    Ok(UnbiasedTestSet {
        seed,
        indices,
        excluded,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub count: usize,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
}

impl GroupMetrics {
    pub fn of(items: &[&ScoredTarget]) -> Self {
        if items.is_empty() {
            return GroupMetrics::default();
        }
        let hits = items.iter().filter(|t| t.predicted == t.label).count();
        let scores: Vec<f64> = items.iter().map(|t| t.score).collect();
        let labels: Vec<bool> = items.iter().map(|t| t.label).collect();
        GroupMetrics {
            count: items.len(),
            accuracy: Some(hits as f64 / items.len() as f64),
            auc: auc(&scores, &labels).ok(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub test_set: String,
    pub threshold: Option<f64>,
    pub seed: Option<u64>,
    pub overall: GroupMetrics,
    pub low: GroupMetrics,
    pub medium: GroupMetrics,
    pub high: GroupMetrics,
    /// Targets whose question had no training answers.
    pub unseen: GroupMetrics,
}

impl EvalReport {
    pub fn group(&self, group: BiasGroup) -> &GroupMetrics {
        match group {
            BiasGroup::Low => &self.low,
            BiasGroup::Medium => &self.medium,
            BiasGroup::High => &self.high,
        }
    }

    /// One row per group (`all`, `low`, `medium`, `high`, `unseen`).
    pub fn rows(&self) -> Vec<ReportRow> {
        [
            ("all", &self.overall),
            ("low", &self.low),
            ("medium", &self.medium),
            ("high", &self.high),
            ("unseen", &self.unseen),
        ]
        .into_iter()
        .map(|(group, m)| ReportRow {
            model: self.model.clone(),
            test_set: self.test_set.clone(),
            group: group.to_string(),
            count: m.count,
            accuracy: m.accuracy,
            auc: m.auc,
        })
        .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        write_rows(&self.rows(), writer)
    }
}

/// Flat row for experiment tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub test_set: String,
    pub group: String,
    pub count: usize,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
}

pub fn write_rows<W: std::io::Write>(rows: &[ReportRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Metrics overall and per training bias group of each target's question.
pub fn group_report(scored: &[ScoredTarget], stats: &AnswerStats) -> EvalReport {
    let all: Vec<&ScoredTarget> = scored.iter().collect();
    let pick = |g: Option<BiasGroup>| -> Vec<&ScoredTarget> {
        scored.iter().filter(|t| stats.group(t.question) == g).collect()
    };
    EvalReport {
        overall: GroupMetrics::of(&all),
        low: GroupMetrics::of(&pick(Some(BiasGroup::Low))),
        medium: GroupMetrics::of(&pick(Some(BiasGroup::Medium))),
        high: GroupMetrics::of(&pick(Some(BiasGroup::High))),
        unseen: GroupMetrics::of(&pick(None)),
        ..EvalReport::default()
    }
}
