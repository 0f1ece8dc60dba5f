//! Counterfactual debiasing on top of a knowledge-tracing backbone.
//!
//! Three branches score a target: a student-only branch `R_s`, a question-only
//! branch `R_q` and the backbone's knowledge logit `R_k`. The factual score is
//! `log σ(R_s + R_q + R_k)`. The counterfactual score replaces both the student
//! and the knowledge outputs with one learned scalar `p`, leaving only the
//! question to speak: `log σ(p + R_q + p)`. Inference ranks by the difference
//! of the two, which removes the question-only pathway.

mod model;
mod train;

pub use model::{Batch, BranchOutputs, CoreModel, ModelConfig, ModelKind, Objectives, ProbabilityMode, Target};
pub use train::{train, validation_split, EpochRecord, TrainConfig, TrainHistory};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{log_sigmoid, Tape, Tensor, Var};

/// Factual score `log σ(r_s + r_q + r_k)`.
pub fn fuse(r_s: f64, r_q: f64, r_k: f64) -> f64 {
    log_sigmoid(r_s + r_q + r_k)
}

/// Counterfactual score `log σ(p + r_q + p)`; the student and knowledge
/// branches are voided.
pub fn counterfactual_fuse(p: f64, r_q: f64) -> f64 {
    log_sigmoid(p + r_q + p)
}

/// Which effect a prediction is ranked by.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    /// Total effect minus the question's natural direct effect.
    #[default]
    Debiased,
    /// Total effect alone: the factual score.
    TotalEffect,
}

impl InferenceMode {
    /// Threshold at which the score says "correct" more than "incorrect".
    ///
    /// The debiased score is positive when the factual probability beats the
    /// counterfactual one; the factual score is a log-probability compared
    /// against `log 0.5`.
    pub fn default_threshold(self) -> f64 {
        match self {
            InferenceMode::Debiased => 0.0,
            InferenceMode::TotalEffect => -std::f64::consts::LN_2,
        }
    }
}

/// All scores produced for one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub student: usize,
    pub step: usize,
    pub question: usize,
    pub label: bool,
    pub r_s: f64,
    pub r_q: f64,
    pub r_k: f64,
    pub factual: f64,
    pub counterfactual: f64,
    pub debiased: f64,
}

impl PredictionRecord {
    pub fn from_branches(
        student: usize,
        step: usize,
        question: usize,
        label: bool,
        (r_s, r_q, r_k): (f64, f64, f64),
        p: f64,
    ) -> Self {
        let factual = fuse(r_s, r_q, r_k);
        let counterfactual = counterfactual_fuse(p, r_q);
        PredictionRecord {
            student,
            step,
            question,
            label,
            r_s,
            r_q,
            r_k,
            factual,
            counterfactual,
            debiased: debiased_score(factual, counterfactual),
        }
    }

    pub fn score(&self, mode: InferenceMode) -> f64 {
        match mode {
            InferenceMode::Debiased => self.debiased,
            InferenceMode::TotalEffect => self.factual,
        }
    }
}

/// TE − NDE, given factual and counterfactual scores built from the same `R_q`.
pub fn debiased_score(factual: f64, counterfactual: f64) -> f64 {
    factual - counterfactual
}

/// Loss values for a batch, each averaged over the scored targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub bce_sq: f64,
    pub bce_q: f64,
    pub kl: f64,
}

/// Mean binary cross-entropy of `σ(u)` against `labels`, written with
/// `log σ(u)` and `log σ(-u)` so that it never overflows.
pub fn bce_with_logits(tape: &mut Tape, logits: Var, labels: &[bool]) -> Result<Var> {
    let [n, cols] = tape.value(logits).shape();
    if cols != 1 || n != labels.len() {
        return Err(Error::Contract(format!(
            "bce: {n}x{cols} logits for {} labels",
            labels.len()
        )));
    }
    let pos: Vec<f64> = labels.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect();
    let neg: Vec<f64> = pos.iter().map(|r| 1.0 - r).collect();
    let pos = tape.constant(Tensor::column(pos));
    let neg = tape.constant(Tensor::column(neg));
    let log_p = tape.log_sigmoid(logits);
    let flipped = tape.neg(logits);
    let log_not_p = tape.log_sigmoid(flipped);
    let a = tape.mul(pos, log_p)?;
    let b = tape.mul(neg, log_not_p)?;
    let ll = tape.add(a, b)?;
    let mean = tape.mean(ll)?;
    Ok(tape.neg(mean))
}

/// Mean `KL(Bernoulli(σ(target)) ‖ Bernoulli(σ(logits)))` where `target` is a
/// constant: gradient reaches `logits` only.
pub fn bernoulli_kl(tape: &mut Tape, target: &Tensor, logits: Var) -> Result<Var> {
    let shape = tape.value(logits).shape();
    if target.shape() != shape || shape[1] != 1 {
        return Err(Error::shape(
            "bernoulli_kl",
            format!("{:?} vs {:?}", target.shape(), shape),
        ));
    }
    let a = tape.constant(target.map(crate::ndmath::sigmoid));
    let b = tape.constant(target.map(|u| crate::ndmath::sigmoid(-u)));
    let log_a = tape.constant(target.map(log_sigmoid));
    let log_b = tape.constant(target.map(|u| log_sigmoid(-u)));
    let log_c = tape.log_sigmoid(logits);
    let flipped = tape.neg(logits);
    let log_d = tape.log_sigmoid(flipped);
    let da = tape.sub(log_a, log_c)?;
    let db = tape.sub(log_b, log_d)?;
    let ta = tape.mul(a, da)?;
    let tb = tape.mul(b, db)?;
    let kl = tape.add(ta, tb)?;
    tape.mean(kl)
}
