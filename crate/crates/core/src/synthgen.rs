//! Synthetic student logs with controllable per-question answer bias.
//!
//! Each student carries a binary mastery flag per concept. A question counts as
//! mastered when all of its concepts are. The answer is correct with
//! probability `guess` (unmastered) or `1 - slip` (mastered), shifted on the
//! log-odds scale by a per-question offset whose magnitude is set by
//! `difficulty_spread`. After answering, each unmastered concept of the
//! question becomes mastered with that concept's learn rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Interaction, Vocabulary};
use crate::error::{Error, Result};

/// Log-odds shift applied to a question at `difficulty_spread = 1`.
pub const MAX_LOGIT_SHIFT: f64 = 7.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DifficultyFamily {
    /// Offsets uniform in `[-s, s]`.
    Uniform,
    /// Offsets `+s` or `-s` with equal probability.
    TwoPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_students: usize,
    pub n_questions: usize,
    pub n_concepts: usize,
    pub seq_len: usize,
    pub concepts_per_question: usize,
    /// One entry per concept.
    pub learn_rates: Vec<f64>,
    /// Chance that a concept is mastered before the first answer.
    pub prior_mastery: f64,
    pub guess: f64,
    pub slip: f64,
    pub difficulty_spread: f64,
    pub difficulty_family: DifficultyFamily,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_students: usize, n_questions: usize, n_concepts: usize, seq_len: usize) -> Self {
        SynthConfig {
            n_students,
            n_questions,
            n_concepts,
            seq_len,
            concepts_per_question: 1,
            learn_rates: vec![0.15; n_concepts],
            prior_mastery: 0.3,
            guess: 0.2,
            slip: 0.1,
            difficulty_spread: 0.5,
            difficulty_family: DifficultyFamily::Uniform,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_students == 0 || self.n_questions == 0 || self.n_concepts == 0 || self.seq_len == 0 {
            return fail("students, questions, concepts and seq_len must all be positive".into());
        }
        if self.concepts_per_question == 0 || self.concepts_per_question > self.n_concepts {
            return fail(format!(
                "concepts_per_question must lie in 1..={}, got {}",
                self.n_concepts, self.concepts_per_question
            ));
        }
        if self.learn_rates.len() != self.n_concepts {
            return fail(format!(
                "expected {} learn rates, got {}",
                self.n_concepts,
                self.learn_rates.len()
            ));
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !self.learn_rates.iter().all(|&r| unit(r)) {
            return fail("learn rates must lie in [0, 1]".into());
        }
        if !unit(self.prior_mastery) || !unit(self.difficulty_spread) {
            return fail("prior_mastery and difficulty_spread must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.guess) || !(0.0..1.0).contains(&self.slip) {
            return fail("guess and slip must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Per-question parameters drawn from the seed, independent of the spread.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionBank {
    pub concepts: Vec<Vec<usize>>,
    /// Offset direction and relative size in `[-1, 1]`.
    pub unit_offsets: Vec<f64>,
}

impl QuestionBank {
    pub fn draw(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0);
        let mut concepts = Vec::with_capacity(cfg.n_questions);
        let mut unit_offsets = Vec::with_capacity(cfg.n_questions);
        for q in 0..cfg.n_questions {
            let mut cs = vec![q % cfg.n_concepts];
            while cs.len() < cfg.concepts_per_question {
                let c = rng.gen_range(0..cfg.n_concepts);
                if !cs.contains(&c) {
                    cs.push(c);
                }
            }
            cs.sort_unstable();
            concepts.push(cs);
            unit_offsets.push(match cfg.difficulty_family {
                DifficultyFamily::Uniform => rng.gen_range(-1.0..=1.0),
                DifficultyFamily::TwoPoint => {
                    if rng.gen_bool(0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                }
            });
        }
        QuestionBank {
            concepts,
            unit_offsets,
        }
    }

    pub fn offset(&self, cfg: &SynthConfig, question: usize) -> f64 {
        self.unit_offsets[question] * cfg.difficulty_spread * MAX_LOGIT_SHIFT
    }
}

/// Shifts a probability by `offset` on the log-odds scale; 0 and 1 are fixed points.
pub fn shift_probability(base: f64, offset: f64) -> f64 {
    if base <= 0.0 || base >= 1.0 {
        return base.clamp(0.0, 1.0);
    }
    let scaled = base * offset.exp();
    scaled / (scaled + 1.0 - base)
}

/// Correct-answer probability of `question` given the mastery state.
pub fn answer_probability(cfg: &SynthConfig, bank: &QuestionBank, question: usize, mastered: bool) -> f64 {
    let base = if mastered { 1.0 - cfg.slip } else { cfg.guess };
    shift_probability(base, bank.offset(cfg, question))
}

/// Ground truth alongside a generated log. Never shown to models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub bank: QuestionBank,
    pub question_offsets: Vec<f64>,
    /// Whether the answered question was mastered, per interaction.
    pub mastered: Vec<bool>,
    /// Correct-answer probability used for each interaction.
    pub answer_probability: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SynthLog {
    pub corpus: Corpus,
    pub truth: GroundTruth,
}

/// Generates one log. Each student draws from its own ChaCha stream, so the
/// output for a student depends only on the seed and the student index.
pub fn generate(cfg: &SynthConfig) -> Result<SynthLog> {
    cfg.validate()?;
    let bank = QuestionBank::draw(cfg);
    let n = cfg.n_students * cfg.seq_len;
    let mut interactions = Vec::with_capacity(n);
    let mut mastered_flags = Vec::with_capacity(n);
    let mut probabilities = Vec::with_capacity(n);

    for student in 0..cfg.n_students {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(student as u64 + 1);
        let mut mastery: Vec<bool> = (0..cfg.n_concepts)
            .map(|_| rng.gen_bool(cfg.prior_mastery))
            .collect();
        for step in 0..cfg.seq_len {
            let question = rng.gen_range(0..cfg.n_questions);
            let concepts = &bank.concepts[question];
            let mastered = concepts.iter().all(|&c| mastery[c]);
            let p = answer_probability(cfg, &bank, question, mastered);
            let correct = rng.gen_bool(p);
            for &c in concepts {
                if !mastery[c] && rng.gen_bool(cfg.learn_rates[c]) {
                    mastery[c] = true;
                }
            }
            interactions.push(Interaction {
                student,
                question,
                concepts: concepts.clone(),
                correct,
                step,
            });
            mastered_flags.push(mastered);
            probabilities.push(p);
        }
    }

    let vocab = Vocabulary {
        students: (0..cfg.n_students).map(|s| format!("s{s:06}")).collect(),
        questions: (0..cfg.n_questions as i64).collect(),
        concepts: (0..cfg.n_concepts as i64).collect(),
    };
    let question_offsets = (0..cfg.n_questions).map(|q| bank.offset(cfg, q)).collect();
    Ok(SynthLog {
        corpus: Corpus {
            interactions,
            vocab,
        },
        truth: GroundTruth {
            config: cfg.clone(),
            bank,
            question_offsets,
            mastered: mastered_flags,
            answer_probability: probabilities,
        },
    })
}

/// Probability that every concept of `question` is mastered just before the
/// answer at `step`.
///
/// Inclusion-exclusion over concept subsets: a subset `S` stays entirely
/// unmastered with probability `(1 - prior)^|S| * g_S^step`, where `g_S` is
/// the per-step chance, averaged over the uniformly drawn question, that no
/// concept of `S` is learned.
pub fn mastery_probability(cfg: &SynthConfig, bank: &QuestionBank, question: usize, step: usize) -> f64 {
    let concepts = &bank.concepts[question];
    let k = concepts.len();
    let mut total = 0.0;
    for mask in 0u32..(1 << k) {
        let subset: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).map(|i| concepts[i]).collect();
        let g = bank
            .concepts
            .iter()
            .map(|cs| {
                subset
                    .iter()
                    .filter(|c| cs.contains(c))
                    .map(|&c| 1.0 - cfg.learn_rates[c])
                    .product::<f64>()
            })
            .sum::<f64>()
            / cfg.n_questions as f64;
        let sign = if subset.len() % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * (1.0 - cfg.prior_mastery).powi(subset.len() as i32) * g.powi(step as i32);
    }
    total
}

/// Closed-form correct rate of `question` averaged over all steps.
pub fn expected_correct_rate(cfg: &SynthConfig, bank: &QuestionBank, question: usize) -> f64 {
    let hit = answer_probability(cfg, bank, question, true);
    let miss = answer_probability(cfg, bank, question, false);
    (0..cfg.seq_len)
        .map(|step| {
            let m = mastery_probability(cfg, bank, question, step);
            m * hit + (1.0 - m) * miss
        })
        .sum::<f64>()
        / cfg.seq_len as f64
}

/// Closed-form mean over questions of `max(rate, 1 - rate)`.
pub fn expected_mean_bias(cfg: &SynthConfig) -> f64 {
    let bank = QuestionBank::draw(cfg);
    (0..cfg.n_questions)
        .map(|q| {
            let r = expected_correct_rate(cfg, &bank, q);
            r.max(1.0 - r)
        })
        .sum::<f64>()
        / cfg.n_questions as f64
}

/// Finds the `difficulty_spread` whose closed-form mean bias equals `target`,
/// by bisection over `[0, 1]`.
pub fn tune_difficulty_spread(cfg: &SynthConfig, target: f64) -> Result<f64> {
    let at = |s: f64| {
        let mut c = cfg.clone();
        c.difficulty_spread = s;
        expected_mean_bias(&c)
    };
    let (lo_bias, hi_bias) = (at(0.0), at(1.0));
    if !(lo_bias..=hi_bias).contains(&target) {
        return Err(Error::Config(format!(
            "mean bias {target} is out of reach: spread 0 gives {lo_bias:.4}, spread 1 gives {hi_bias:.4}"
        )));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
