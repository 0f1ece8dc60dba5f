use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{bce_with_logits, bernoulli_kl, LossValues, PredictionRecord};
use crate::backbone::{encode_interactions, Backbone, Embeddings, GruBackbone};
use crate::corpus::{Interaction, LearningSequence};
use crate::error::{Error, Result};
use crate::ndmath::{Tape, Tensor, Var};
use crate::params::{Bound, Mlp, ParamStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Three branches, counterfactual parameter, debiased inference.
    #[default]
    Core,
    /// The knowledge logit alone with a plain BCE loss.
    BackboneOnly,
}

/// How the training losses read a probability off the fused score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbabilityMode {
    /// `σ(R_s + R_q + R_k)`, spanning `(0, 1)`.
    #[default]
    Logit,
    /// `σ(log σ(R_s + R_q + R_k))`, confined to `(0, 0.5]`.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding and state width; a question encoding is `2 * dim` wide.
    pub dim: usize,
    /// Hidden width of the student-only and question-only perceptrons.
    pub branch_hidden: usize,
    pub kind: ModelKind,
    pub probability: ProbabilityMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            branch_hidden: 64,
            kind: ModelKind::Core,
            probability: ProbabilityMode::Logit,
            seed: 0,
        }
    }
}

/// One scored position inside a [`Batch`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Target {
    /// Row in the time-major layout, `step * batch + sequence`.
    pub row: usize,
    pub student: usize,
    pub step: usize,
    pub question: usize,
    pub label: bool,
}

/// Sequences padded to a common length and laid out time-major.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub steps: usize,
    pub questions: Vec<usize>,
    pub concepts: Vec<Vec<usize>>,
    pub correct: Vec<bool>,
    pub targets: Vec<Target>,
}

impl Batch {
    /// Every position after the first of each sequence is a target: the first
    /// interaction only provides context.
    pub fn from_sequences(seqs: &[&LearningSequence]) -> Self {
        Self::build(seqs, |s| 1..s.len())
    }

    /// Scores only the last interaction of each sequence.
    pub fn last_positions(seqs: &[&LearningSequence]) -> Self {
        Self::build(seqs, |s| s.len().saturating_sub(1)..s.len())
    }

    fn build(seqs: &[&LearningSequence], targets: impl Fn(&LearningSequence) -> std::ops::Range<usize>) -> Self {
        let size = seqs.len();
        let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let cells = size * steps;
        // Padding reads the reserved rows; its states are never scored.
        let mut questions = vec![usize::MAX; cells];
        let mut concepts = vec![Vec::new(); cells];
        let mut correct = vec![false; cells];
        for (b, seq) in seqs.iter().enumerate() {
            for (t, it) in seq.interactions.iter().enumerate() {
                let row = t * size + b;
                questions[row] = it.question;
                concepts[row] = it.concepts.clone();
                correct[row] = it.correct;
            }
        }
        let mut out = Vec::new();
        for t in 0..steps {
            for (b, seq) in seqs.iter().enumerate() {
                if targets(seq).contains(&t) {
                    let it = &seq.interactions[t];
                    out.push(Target {
                        row: t * size + b,
                        student: seq.student,
                        step: it.step,
                        question: it.question,
                        label: it.correct,
                    });
                }
            }
        }
        Batch {
            size,
            steps,
            questions,
            concepts,
            correct,
            targets: out,
        }
    }

    pub fn labels(&self) -> Vec<bool> {
        self.targets.iter().map(|t| t.label).collect()
    }
}

/// Branch logits for every target of a batch, as tape nodes (`[n, 1]` each).
#[derive(Clone, Copy, Debug)]
pub struct BranchOutputs {
    pub r_s: Option<Var>,
    pub r_q: Option<Var>,
    pub r_k: Var,
    /// `R_s + R_q + R_k`, or `R_k` for a backbone-only model.
    pub fused_logit: Var,
}

/// Nodes of the two training objectives recorded on one tape.
#[derive(Clone, Copy, Debug)]
pub struct Objectives {
    /// Minimized over every parameter in the store.
    pub branch_loss: Var,
    /// Minimized over `p` alone; `None` for backbone-only models.
    pub kl_loss: Option<Var>,
    pub p: Option<Var>,
    pub values: LossValues,
}

#[derive(Clone, Debug)]
pub struct CoreModel<B = GruBackbone> {
    pub config: ModelConfig,
    pub n_questions: usize,
    pub n_concepts: usize,
    pub params: ParamStore,
    pub embeddings: Embeddings,
    pub backbone: B,
    pub branch_s: Mlp,
    pub branch_q: Mlp,
    /// Stands in for both the student-only and the knowledge output when they
    /// are voided.
    pub p: f64,
}

impl CoreModel<GruBackbone> {
    pub fn new(config: ModelConfig, n_questions: usize, n_concepts: usize) -> Self {
        Self::with_backbone(config, n_questions, n_concepts, |store, rng| {
            GruBackbone::new(store, config.dim, rng)
        })
    }
}

impl<B: Backbone> CoreModel<B> {
    pub fn with_backbone(
        config: ModelConfig,
        n_questions: usize,
        n_concepts: usize,
        build: impl FnOnce(&mut ParamStore, &mut ChaCha8Rng) -> B,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let embeddings = Embeddings::new(&mut params, n_questions, n_concepts, config.dim, &mut rng);
        let backbone = build(&mut params, &mut rng);
        let d = backbone.state_dim();
        let branch_s = Mlp::new(&mut params, "branch_s", d, config.branch_hidden, &mut rng);
        let branch_q = Mlp::new(&mut params, "branch_q", 2 * config.dim, config.branch_hidden, &mut rng);
        CoreModel {
            config,
            n_questions,
            n_concepts,
            params,
            embeddings,
            backbone,
            branch_s,
            branch_q,
            p: 0.0,
        }
    }

    /// Sets every weight, bias, embedding and `p` to zero.
    pub fn zero_init(&mut self) {
        self.params.zero_all();
        self.p = 0.0;
    }

    pub fn is_core(&self) -> bool {
        self.config.kind == ModelKind::Core
    }

    /// Records the three branches for every target of `batch`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, batch: &Batch) -> Result<BranchOutputs> {
        if batch.targets.is_empty() {
            return Err(Error::Empty("batch has no targets"));
        }
        let q_all = self
            .embeddings
            .encode_questions(tape, bound, &batch.questions, &batch.concepts)?;
        let x_all = encode_interactions(tape, q_all, &batch.correct)?;
        let states = self.backbone.unroll(tape, bound, x_all, batch.size)?;

        let rows: Vec<usize> = batch.targets.iter().map(|t| t.row).collect();
        // State block t holds the state after t interactions, so the same row
        // index picks the state that precedes the target.
        let s = tape.gather_rows(states, &rows)?;
        let q = tape.gather_rows(q_all, &rows)?;
        let r_k = self.backbone.knowledge_logit(tape, bound, s, q)?;

        match self.config.kind {
            ModelKind::BackboneOnly => Ok(BranchOutputs {
                r_s: None,
                r_q: None,
                r_k,
                fused_logit: r_k,
            }),
            ModelKind::Core => {
                let r_s = self.branch_s.forward(tape, bound, s)?;
                let r_q = self.branch_q.forward(tape, bound, q)?;
                let sq = tape.add(r_s, r_q)?;
                let fused = tape.add(sq, r_k)?;
                Ok(BranchOutputs {
                    r_s: Some(r_s),
                    r_q: Some(r_q),
                    r_k,
                    fused_logit: fused,
                })
            }
        }
    }

    /// Records both objectives. The KL term sees the factual side and `R_q` as
    /// constants, so its only trainable input is `p`.
    pub fn objectives(
        &self,
        tape: &mut Tape,
        out: &BranchOutputs,
        labels: &[bool],
        with_question_loss: bool,
    ) -> Result<Objectives> {
        let mode = self.config.probability;
        let factual = match (self.config.kind, mode) {
            (ModelKind::Core, ProbabilityMode::Literal) => tape.log_sigmoid(out.fused_logit),
            _ => out.fused_logit,
        };
        let bce_sq = bce_with_logits(tape, factual, labels)?;
        let mut values = LossValues {
            bce_sq: tape.value(bce_sq).item()?,
            ..LossValues::default()
        };
        let (Some(r_q), ModelKind::Core) = (out.r_q, self.config.kind) else {
            return Ok(Objectives {
                branch_loss: bce_sq,
                kl_loss: None,
                p: None,
                values,
            });
        };

        let bce_q = bce_with_logits(tape, r_q, labels)?;
        values.bce_q = tape.value(bce_q).item()?;
        let branch_loss = if with_question_loss {
            tape.add(bce_sq, bce_q)?
        } else {
            bce_sq
        };

        let target = tape.value(factual).clone();
        let p = tape.param(Tensor::scalar(self.p));
        let r_q_fixed = tape.detach(r_q);
        let two_p = tape.scale(p, 2.0);
        let cf = tape.add_row(r_q_fixed, two_p)?;
        let cf = match mode {
            ProbabilityMode::Logit => cf,
            ProbabilityMode::Literal => tape.log_sigmoid(cf),
        };
        let kl = bernoulli_kl(tape, &target, cf)?;
        values.kl = tape.value(kl).item()?;
        Ok(Objectives {
            branch_loss,
            kl_loss: Some(kl),
            p: Some(p),
            values,
        })
    }

    /// Prediction records for every target of `batch`.
    pub fn predict_batch(&self, batch: &Batch) -> Result<Vec<PredictionRecord>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let out = self.forward(&mut tape, &bound, batch)?;
        let r_k = tape.value(out.r_k).data();
        let zeros = vec![0.0; r_k.len()];
        let r_s = out.r_s.map_or(&zeros[..], |v| tape.value(v).data());
        let r_q = out.r_q.map_or(&zeros[..], |v| tape.value(v).data());
        let p = if self.is_core() { self.p } else { 0.0 };
        Ok(batch
            .targets
            .iter()
            .enumerate()
            .map(|(i, t)| {
                PredictionRecord::from_branches(t.student, t.step, t.question, t.label, (r_s[i], r_q[i], r_k[i]), p)
            })
            .collect())
    }

    /// Records for every non-initial position of every sequence, computed in
    /// batches of `batch_size` sequences and ordered by student and step.
    pub fn predict_sequences(&self, seqs: &[LearningSequence], batch_size: usize) -> Result<Vec<PredictionRecord>> {
        let refs: Vec<&LearningSequence> = seqs.iter().filter(|s| s.len() > 1).collect();
        let mut records = Vec::new();
        for chunk in refs.chunks(batch_size.max(1)) {
            records.extend(self.predict_batch(&Batch::from_sequences(chunk))?);
        }
        records.sort_by_key(|r| (r.student, r.step));
        Ok(records)
    }

    /// Scores `target` after `history`; an empty history uses the initial state.
    pub fn predict(&self, history: &[Interaction], target: &Interaction) -> Result<PredictionRecord> {
        let mut interactions = history.to_vec();
        interactions.push(target.clone());
        let seq = LearningSequence {
            student: target.student,
            interactions,
        };
        let mut records = self.predict_batch(&Batch::last_positions(&[&seq]))?;
        Ok(records.remove(0))
    }
}
