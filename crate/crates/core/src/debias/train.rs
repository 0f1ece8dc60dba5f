use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Batch, CoreModel};
use super::{InferenceMode, LossValues};
use crate::backbone::Backbone;
use crate::corpus::{split_by_student, LearningSequence, Split};
use crate::error::{Error, Result};
use crate::eval::auc;
use crate::ndmath::{AdamConfig, AdamState, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Sequences per mini-batch.
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without a better validation AUC before stopping; `None` runs
    /// every epoch.
    pub patience: Option<usize>,
    pub adam: AdamConfig,
    /// Hold `p` at this value instead of fitting it to the KL objective.
    pub fixed_p: Option<f64>,
    /// Include the BCE loss on the question-only branch.
    pub question_loss: bool,
    /// Fraction of training students held out for early stopping.
    pub validation_ratio: f64,
    pub seed: u64,
    /// Score ranked by the validation AUC. The held-out students share the
    /// training bias, so the factual score is the one being fitted.
    pub validation_score: InferenceMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 200,
            patience: Some(20),
            adam: AdamConfig::with_lr(1e-3),
            fixed_p: None,
            question_loss: true,
            validation_ratio: 0.1,
            seed: 0,
            validation_score: InferenceMode::TotalEffect,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub bce_sq: f64,
    pub bce_q: f64,
    pub kl: f64,
    pub p: f64,
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Alternating optimization per mini-batch: an Adam step on the branch and
/// backbone parameters against `BCE_sq + BCE_q`, then an Adam step on `p`
/// alone against the KL term. Both gradients come from the same forward pass.
pub fn train<B: Backbone>(
    model: &mut CoreModel<B>,
    sequences: &[LearningSequence],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let (train_set, validation) = hold_out(sequences, config)?;
    if train_set.iter().all(|s| s.len() < 2) {
        return Err(Error::Empty("no training targets"));
    }
    if let Some(p) = config.fixed_p {
        model.p = p;
    }
    let learn_p = model.is_core() && config.fixed_p.is_none();

    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut adam = AdamState::new(config.adam, model.params.tensors());
    let mut adam_p = AdamState::new(config.adam, [&Tensor::scalar(model.p)]);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).filter(|&i| train_set[i].len() > 1).collect();

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, crate::params::ParamStore, f64)> = None;
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossValues::default();
        let mut weight = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let seqs: Vec<&LearningSequence> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = Batch::from_sequences(&seqs);

            let mut tape = crate::ndmath::Tape::new();
            let bound = model.params.bind(&mut tape, true);
            let out = model.forward(&mut tape, &bound, &batch)?;
            let obj = model.objectives(&mut tape, &out, &batch.labels(), config.question_loss)?;

            let v = obj.values;
            for (value, name) in [(v.bce_sq, "BCE_sq"), (v.bce_q, "BCE_q"), (v.kl, "KL")] {
                if !value.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch: b,
                        loss: name,
                    });
                }
            }
            let n = batch.targets.len() as f64;
            sums.bce_sq += v.bce_sq * n;
            sums.bce_q += v.bce_q * n;
            sums.kl += v.kl * n;
            weight += n;

            let mut grads = tape.backward(obj.branch_loss)?;
            let owned: Vec<Tensor> = bound
                .vars()
                .iter()
                .zip(model.params.tensors())
                .map(|(&var, t)| grads.take(var).unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
                .collect();
            let grad_refs: Vec<&Tensor> = owned.iter().collect();
            let mut param_refs: Vec<&mut Tensor> = model.params.tensors_mut().iter_mut().collect();
            adam.step(&mut param_refs, &grad_refs, &name_refs)?;

            if let (true, Some(kl), Some(p_var)) = (learn_p, obj.kl_loss, obj.p) {
                let grads = tape.backward(kl)?;
                let g = grads.get(p_var).cloned().unwrap_or_else(|| Tensor::scalar(0.0));
                let mut p = Tensor::scalar(model.p);
                adam_p.step(&mut [&mut p], &[&g], &["p"])?;
                model.p = p.item()?;
            }
        }

        let val_auc = match &validation {
            Some(v) => validation_auc(model, v, config)?,
            None => None,
        };
        history.epochs.push(EpochRecord {
            epoch,
            bce_sq: sums.bce_sq / weight,
            bce_q: sums.bce_q / weight,
            kl: sums.kl / weight,
            p: model.p,
            val_auc,
        });
        log::debug!("epoch {epoch}: {:?}", history.epochs.last());

        let Some(score) = val_auc else { continue };
        if best.as_ref().map_or(true, |(s, _, _)| score > *s) {
            best = Some((score, model.params.clone(), model.p));
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience.is_some_and(|p| since_best >= p) {
                history.stopped_early = true;
                break;
            }
        }
    }

    if let Some((_, params, p)) = best {
        model.params = params;
        model.p = p;
    } else if !history.epochs.is_empty() {
        history.best_epoch = Some(history.epochs.len() - 1);
    }
    Ok(history)
}

fn hold_out(
    sequences: &[LearningSequence],
    config: &TrainConfig,
) -> Result<(Vec<LearningSequence>, Option<Vec<LearningSequence>>)> {
    if sequences.is_empty() {
        return Err(Error::Empty("no training sequences"));
    }
    let students = Split::students(sequences).len();
    if config.validation_ratio <= 0.0 || students < 2 {
        return Ok((sequences.to_vec(), None));
    }
    let split = split_by_student(sequences, 1.0 - config.validation_ratio, config.seed ^ VALIDATION_SALT)?;
    Ok((split.train, Some(split.test)))
}

/// Seed offset separating the validation split from the train/test split.
pub(crate) const VALIDATION_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn validation_auc<B: Backbone>(
    model: &CoreModel<B>,
    validation: &[LearningSequence],
    config: &TrainConfig,
) -> Result<Option<f64>> {
    let records = model.predict_sequences(validation, config.batch_size)?;
    let scores: Vec<f64> = records.iter().map(|r| r.score(config.validation_score)).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.label).collect();
    Ok(auc(&scores, &labels).ok())
}

/// Students held out for validation by [`train`] under `config`.
pub fn validation_split(sequences: &[LearningSequence], config: &TrainConfig) -> Result<Option<Vec<LearningSequence>>> {
    Ok(hold_out(sequences, config)?.1)
}
