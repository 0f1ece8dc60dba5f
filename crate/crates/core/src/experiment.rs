//! End-to-end runs: split a corpus, train models, and score them on the
//! original and the resampled test sets.

use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_sequences, compute_answer_stats, split_by_student, AnswerStats, Corpus, Interaction, LearningSequence,
    Vocabulary,
};
use crate::debias::{train, CoreModel, InferenceMode, ModelConfig, ModelKind, TrainConfig, TrainHistory};
use crate::error::Result;
use crate::eval::{group_report, majority_baseline, resample_unbiased, score_records, EvalReport, ScoredTarget, UnbiasedTestSet};
use crate::synthgen::{generate, tune_difficulty_spread, SynthConfig};

/// A corpus split by student, with answer statistics of the training part.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<LearningSequence>,
    pub test: Vec<LearningSequence>,
    pub stats: AnswerStats,
}

impl Dataset {
    pub fn from_corpus(corpus: &Corpus, max_len: usize, train_ratio: f64, seed: u64) -> Result<Self> {
        let sequences = build_sequences(&corpus.interactions, max_len);
        let split = split_by_student(&sequences, train_ratio, seed)?;
        let stats = compute_answer_stats(split.train.iter().flat_map(|s| &s.interactions));
        Ok(Dataset {
            vocab: corpus.vocab.clone(),
            train: split.train,
            test: split.test,
            stats,
        })
    }

    pub fn test_targets(&self) -> Vec<Interaction> {
        scoring_targets(&self.test)
    }
}

/// Interactions scored by a model, ordered by student and step: every
/// position of a sequence except its first.
pub fn scoring_targets(sequences: &[LearningSequence]) -> Vec<Interaction> {
    let mut out: Vec<Interaction> = sequences
        .iter()
        .flat_map(|s| s.interactions.iter().skip(1).cloned())
        .collect();
    out.sort_by_key(|i| (i.student, i.step));
    out
}

/// Scores of one predictor on the original and the resampled test sets.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Evaluation {
    pub biased: EvalReport,
    pub unbiased: EvalReport,
}

impl Evaluation {
    /// `scored` must follow the order of [`scoring_targets`].
    pub fn new(name: &str, scored: &[ScoredTarget], unbiased: &UnbiasedTestSet, stats: &AnswerStats, threshold: Option<f64>) -> Self {
        let label = |mut r: EvalReport, set: &str| {
            r.model = name.to_string();
            r.test_set = set.to_string();
            r.threshold = threshold;
            r
        };
        let mut u = label(group_report(&unbiased.select(scored), stats), "unbiased");
        u.seed = Some(unbiased.seed);
        Evaluation {
            biased: label(group_report(scored, stats), "biased"),
            unbiased: u,
        }
    }
}

/// Scores a trained model on `dataset.test` under `mode`.
pub fn score_model(model: &CoreModel, dataset: &Dataset, mode: InferenceMode, threshold: f64, batch_size: usize) -> Result<Vec<ScoredTarget>> {
    let records = model.predict_sequences(&dataset.test, batch_size)?;
    Ok(score_records(&records, mode, threshold))
}

/// Synthetic comparison of the majority baseline, the bare backbone and the
/// counterfactual model, plus two ablations of the latter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicationConfig {
    pub synth: SynthConfig,
    /// Overrides `synth.difficulty_spread` with the spread reaching this mean
    /// bias strength.
    pub target_bias: Option<f64>,
    pub train_ratio: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub resample_seed: u64,
    pub ablations: bool,
}

impl Default for ReplicationConfig {
    /// 500 students, 60 questions, 12 concepts, 50 answers each, mean bias
    /// 0.75, fast learners, batches of 16 sequences.
    fn default() -> Self {
        let mut synth = SynthConfig::new(500, 60, 12, 50).with_seed(7);
        synth.learn_rates = vec![0.5; 12];
        synth.guess = 0.1;
        synth.slip = 0.05;
        ReplicationConfig {
            synth,
            target_bias: Some(0.75),
            train_ratio: 0.8,
            model: ModelConfig::default(),
            train: TrainConfig {
                batch_size: 16,
                epochs: 40,
                patience: Some(8),
                adam: crate::ndmath::AdamConfig::with_lr(3e-3),
                ..TrainConfig::default()
            },
            resample_seed: 11,
            ablations: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub difficulty_spread: f64,
    /// Mean per-question bias strength of the training split.
    pub mean_bias: f64,
    pub majority: Evaluation,
    pub backbone: Evaluation,
    pub core: Evaluation,
    pub te_only: Option<Evaluation>,
    pub no_q_loss: Option<Evaluation>,
    pub histories: Vec<(String, TrainHistory)>,
}

impl ReplicationReport {
    pub fn evaluations(&self) -> Vec<&Evaluation> {
        let mut out = vec![&self.majority, &self.backbone, &self.core];
        out.extend(self.te_only.as_ref());
        out.extend(self.no_q_loss.as_ref());
        out
    }
}

pub fn run_replication(cfg: &ReplicationConfig) -> Result<ReplicationReport> {
    let mut synth = cfg.synth.clone();
    if let Some(target) = cfg.target_bias {
        synth.difficulty_spread = tune_difficulty_spread(&synth, target)?;
    }
    let log = generate(&synth)?;
    let data = Dataset::from_corpus(&log.corpus, crate::corpus::DEFAULT_MAX_LEN, cfg.train_ratio, synth.seed)?;
    let pool = data.test_targets();
    let unbiased = resample_unbiased(&pool, cfg.resample_seed)?;
    let mean_bias = data.stats.mean_bias_strength().unwrap_or(0.5);
    log::info!("spread {:.4}, training mean bias {mean_bias:.4}", synth.difficulty_spread);

    let majority = Evaluation::new("majority", &majority_baseline(&data.stats, &pool), &unbiased, &data.stats, None);

    let mut histories = Vec::new();
    let mut fit = |name: &str, kind: ModelKind, question_loss: bool| -> Result<CoreModel> {
        let mut model = CoreModel::new(ModelConfig { kind, ..cfg.model }, data.vocab.n_questions(), data.vocab.n_concepts());
        let tc = TrainConfig {
            question_loss,
            ..cfg.train.clone()
        };
        let history = train(&mut model, &data.train, &tc)?;
        log::info!("{name}: best epoch {:?} of {}, p = {:.4}", history.best_epoch, history.epochs.len(), model.p);
        histories.push((name.to_string(), history));
        Ok(model)
    };
    let eval = |name: &str, model: &CoreModel, mode: InferenceMode| -> Result<Evaluation> {
        let t = mode.default_threshold();
        let scored = score_model(model, &data, mode, t, cfg.train.batch_size)?;
        Ok(Evaluation::new(name, &scored, &unbiased, &data.stats, Some(t)))
    };

    let backbone_model = fit("backbone", ModelKind::BackboneOnly, true)?;
    let backbone = eval("backbone", &backbone_model, InferenceMode::Debiased)?;
    let core_model = fit("core", ModelKind::Core, true)?;
    let core = eval("core", &core_model, InferenceMode::Debiased)?;
    let (te_only, no_q_loss) = if cfg.ablations {
        let te = eval("te_only", &core_model, InferenceMode::TotalEffect)?;
        let nq_model = fit("no_q_loss", ModelKind::Core, false)?;
        (Some(te), Some(eval("no_q_loss", &nq_model, InferenceMode::Debiased)?))
    } else {
        (None, None)
    };

    Ok(ReplicationReport {
        difficulty_spread: synth.difficulty_spread,
        mean_bias,
        majority,
        backbone,
        core,
        te_only,
        no_q_loss,
        histories,
    })
}
