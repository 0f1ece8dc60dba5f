//! Interaction logs: CSV ingestion, per-student sequences, student-level
//! splits and per-question answer statistics.
//!
//! The input schema is a UTF-8 CSV with a header row:
//!
//! ```text
//! student_id,question_id,concept_ids,correct[,order]
//! s1,1045,12;31,1
//! ```
//!
//! `concept_ids` is a `;`-separated list of integers and `correct` is `0` or
//! `1`. Without an `order` column the row order within a student is the
//! chronology.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Students need at least this many interactions to be kept.
pub const MIN_INTERACTIONS: usize = 3;
pub const DEFAULT_MAX_LEN: usize = 200;

/// One answer of one student, with all ids densely re-indexed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub student: usize,
    pub question: usize,
    pub concepts: Vec<usize>,
    pub correct: bool,
    /// 0-based position in the student's chronology.
    pub step: usize,
}

/// Maps dense indices back to the identifiers found in the source file.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub students: Vec<String>,
    pub questions: Vec<i64>,
    pub concepts: Vec<i64>,
}

impl Vocabulary {
    pub fn question_index(&self, raw: i64) -> Option<usize> {
        self.questions.binary_search(&raw).ok()
    }

    pub fn concept_index(&self, raw: i64) -> Option<usize> {
        self.concepts.binary_search(&raw).ok()
    }

    pub fn student_index(&self, name: &str) -> Option<usize> {
        self.students.binary_search_by(|s| s.as_str().cmp(name)).ok()
    }

    pub fn n_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn n_concepts(&self) -> usize {
        self.concepts.len()
    }

    /// SHA-256 over the question and concept tables, which fix the meaning of
    /// every embedding row.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Tables<'a> {
            questions: &'a [i64],
            concepts: &'a [i64],
        }
        let bytes = serde_json::to_vec(&Tables {
            questions: &self.questions,
            concepts: &self.concepts,
        })
        .expect("vocabulary serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub interactions: Vec<Interaction>,
    pub vocab: Vocabulary,
}

impl Corpus {
    pub fn n_students(&self) -> usize {
        self.vocab.students.len()
    }
}

struct RawRow {
    student: String,
    question: i64,
    concepts: Vec<i64>,
    correct: bool,
    order: Option<i64>,
}

pub fn load_interactions(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_interactions(file, path)
}

/// Parses a log, drops concept-less rows and students with fewer than
/// [`MIN_INTERACTIONS`] answers, and re-indexes ids densely in sorted order.
pub fn read_interactions<R: Read>(reader: R, source: impl AsRef<Path>) -> Result<Corpus> {
    let source = source.as_ref();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| Error::MalformedRow {
        path: source.to_path_buf(),
        line: 1,
        message: format!("missing column `{name}`"),
    };
    let c_student = column("student_id").ok_or_else(|| missing("student_id"))?;
    let c_question = column("question_id").ok_or_else(|| missing("question_id"))?;
    let c_concepts = column("concept_ids").ok_or_else(|| missing("concept_ids"))?;
    let c_correct = column("correct").ok_or_else(|| missing("correct"))?;
    let c_order = column("order");

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::MalformedRow {
            path: source.to_path_buf(),
            line,
            message,
        };
        let field = |i: usize| record.get(i).unwrap_or("");

        let student = field(c_student).to_string();
        if student.is_empty() {
            return Err(bad("empty student_id".into()));
        }
        let question: i64 = field(c_question)
            .parse()
            .map_err(|_| bad(format!("question_id `{}` is not an integer", field(c_question))))?;
        let concepts = field(c_concepts)
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<i64>()
                    .map_err(|_| bad(format!("concept id `{s}` is not an integer")))
            })
            .collect::<Result<Vec<_>>>()?;
        let correct = match field(c_correct) {
            "1" => true,
            "0" => false,
            other => return Err(bad(format!("correct must be 0 or 1, got `{other}`"))),
        };
        let order = match c_order.map(field) {
            Some(s) if !s.is_empty() => Some(
                s.parse::<i64>()
                    .map_err(|_| bad(format!("order `{s}` is not an integer")))?,
            ),
            _ => None,
        };
        if concepts.is_empty() {
            continue;
        }
        rows.push(RawRow {
            student,
            question,
            concepts,
            correct,
            order,
        });
    }
    corpus_from_rows(rows)
}

fn corpus_from_rows(rows: Vec<RawRow>) -> Result<Corpus> {
    let mut by_student: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    for row in rows {
        by_student.entry(row.student.clone()).or_default().push(row);
    }
    by_student.retain(|_, rows| rows.len() >= MIN_INTERACTIONS);
    if by_student.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut questions = BTreeSet::new();
    let mut concepts = BTreeSet::new();
    for row in by_student.values().flatten() {
        questions.insert(row.question);
        concepts.extend(row.concepts.iter().copied());
    }
    let vocab = Vocabulary {
        students: by_student.keys().cloned().collect(),
        questions: questions.into_iter().collect(),
        concepts: concepts.into_iter().collect(),
    };

    let mut interactions = Vec::new();
    for (student, (_, mut rows)) in by_student.into_iter().enumerate() {
        // Stable: rows sharing an order value keep file order.
        rows.sort_by_key(|r| r.order.unwrap_or(i64::MIN));
        for (step, row) in rows.into_iter().enumerate() {
            let mut cs: Vec<usize> = row
                .concepts
                .iter()
                .map(|&c| vocab.concept_index(c).expect("concept in vocabulary"))
                .collect();
            cs.sort_unstable();
            cs.dedup();
            interactions.push(Interaction {
                student,
                question: vocab.question_index(row.question).expect("question in vocabulary"),
                concepts: cs,
                correct: row.correct,
                step,
            });
        }
    }
    Ok(Corpus {
        interactions,
        vocab,
    })
}

/// Writes a corpus back out in the input schema, with raw identifiers and an
/// explicit `order` column.
pub fn write_interactions<W: Write>(corpus: &Corpus, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["student_id", "question_id", "concept_ids", "correct", "order"])?;
    for it in &corpus.interactions {
        let concepts = it
            .concepts
            .iter()
            .map(|&c| corpus.vocab.concepts[c].to_string())
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            corpus.vocab.students[it.student].clone(),
            corpus.vocab.questions[it.question].to_string(),
            concepts,
            u8::from(it.correct).to_string(),
            it.step.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Consecutive interactions of one student, at most `max_len` long.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearningSequence {
    pub student: usize,
    pub interactions: Vec<Interaction>,
}

impl LearningSequence {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

/// Groups interactions per student in step order and cuts each chronology into
/// consecutive chunks of at most `max_len`. A final chunk may be shorter than
/// [`MIN_INTERACTIONS`]; nothing is dropped.
pub fn build_sequences(interactions: &[Interaction], max_len: usize) -> Vec<LearningSequence> {
    assert!(max_len > 0, "max_len must be positive");
    let mut by_student: BTreeMap<usize, Vec<&Interaction>> = BTreeMap::new();
    for it in interactions {
        by_student.entry(it.student).or_default().push(it);
    }
    let mut out = Vec::new();
    for (student, mut its) in by_student {
        its.sort_by_key(|it| it.step);
        for chunk in its.chunks(max_len) {
            out.push(LearningSequence {
                student,
                interactions: chunk.iter().map(|&it| it.clone()).collect(),
            });
        }
    }
    out
}

/// Student-disjoint partition of a set of sequences.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<LearningSequence>,
    pub test: Vec<LearningSequence>,
}

impl Split {
    pub fn students(seqs: &[LearningSequence]) -> BTreeSet<usize> {
        seqs.iter().map(|s| s.student).collect()
    }
}

/// Shuffles students with `seed` and assigns `floor(n * (1 - train_ratio))`
/// of them (at least one, at most `n - 1`) to the test side.
pub fn split_by_student(sequences: &[LearningSequence], train_ratio: f64, seed: u64) -> Result<Split> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::Split(format!("train ratio must lie in (0, 1), got {train_ratio}")));
    }
    let mut students: Vec<usize> = Split::students(sequences).into_iter().collect();
    if students.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 students, got {}",
            students.len()
        )));
    }
    let n = students.len();
    // The epsilon keeps 10 * (1 - 0.8) from rounding down to 1.
    let n_test = ((n as f64 * (1.0 - train_ratio)) + 1e-9).floor() as usize;
    let n_test = n_test.clamp(1, n - 1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    students.shuffle(&mut rng);
    let test_students: BTreeSet<usize> = students[..n_test].iter().copied().collect();

    let (test, train) = sequences
        .iter()
        .cloned()
        .partition(|s| test_students.contains(&s.student));
    Ok(Split { train, test })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasGroup {
    Low,
    Medium,
    High,
}

impl BiasGroup {
    pub const ALL: [BiasGroup; 3] = [BiasGroup::Low, BiasGroup::Medium, BiasGroup::High];

    pub fn name(self) -> &'static str {
        match self {
            BiasGroup::Low => "low",
            BiasGroup::Medium => "medium",
            BiasGroup::High => "high",
        }
    }
}

impl std::fmt::Display for BiasGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionCounts {
    pub n_correct: u64,
    pub n_incorrect: u64,
}

impl QuestionCounts {
    pub fn total(&self) -> u64 {
        self.n_correct + self.n_incorrect
    }

    /// Share of the more frequent answer; `None` for an unseen question.
    pub fn bias_strength(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.n_correct.max(self.n_incorrect) as f64 / total as f64)
    }

    /// Strength below 0.6 is low, above 0.8 high, anything in between
    /// (both ends included) medium. Compared in exact integer arithmetic.
    pub fn group(&self) -> Option<BiasGroup> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        let major = self.n_correct.max(self.n_incorrect);
        Some(if 5 * major < 3 * total {
            BiasGroup::Low
        } else if 5 * major > 4 * total {
            BiasGroup::High
        } else {
            BiasGroup::Medium
        })
    }

    pub fn correct_rate(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.n_correct as f64 / total as f64)
    }
}

/// Per-question answer counts over a set of training interactions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerStats {
    counts: Vec<QuestionCounts>,
}

impl AnswerStats {
    pub fn counts(&self, question: usize) -> QuestionCounts {
        self.counts.get(question).copied().unwrap_or_default()
    }

    pub fn bias_strength(&self, question: usize) -> Option<f64> {
        self.counts(question).bias_strength()
    }

    pub fn group(&self, question: usize) -> Option<BiasGroup> {
        self.counts(question).group()
    }

    pub fn n_questions(&self) -> usize {
        self.counts.len()
    }

    pub fn total_answers(&self) -> u64 {
        self.counts.iter().map(QuestionCounts::total).sum()
    }

    /// Unweighted mean of the bias strength over questions with answers.
    pub fn mean_bias_strength(&self) -> Option<f64> {
        let strengths: Vec<f64> = self.counts.iter().filter_map(|c| c.bias_strength()).collect();
        (!strengths.is_empty()).then(|| strengths.iter().sum::<f64>() / strengths.len() as f64)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, QuestionCounts)> + '_ {
        self.counts.iter().copied().enumerate()
    }
}

/// Counts answers per question. Feed it training interactions only.
pub fn compute_answer_stats<'a>(interactions: impl IntoIterator<Item = &'a Interaction>) -> AnswerStats {
    let mut counts: Vec<QuestionCounts> = Vec::new();
    for it in interactions {
        if it.question >= counts.len() {
            counts.resize(it.question + 1, QuestionCounts::default());
        }
        let c = &mut counts[it.question];
        if it.correct {
            c.n_correct += 1;
        } else {
            c.n_incorrect += 1;
        }
    }
    AnswerStats { counts }
}

/// Row of the stats table written by the `ingest` command.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuestionStatsRow {
    pub question_id: i64,
    pub n_correct: u64,
    pub n_incorrect: u64,
    pub bias_strength: Option<f64>,
    pub group: Option<BiasGroup>,
}

pub fn stats_table(stats: &AnswerStats, vocab: &Vocabulary) -> Vec<QuestionStatsRow> {
    (0..vocab.n_questions())
        .map(|q| {
            let c = stats.counts(q);
            QuestionStatsRow {
                question_id: vocab.questions[q],
                n_correct: c.n_correct,
                n_incorrect: c.n_incorrect,
                bias_strength: c.bias_strength(),
                group: c.group(),
            }
        })
        .collect()
}
