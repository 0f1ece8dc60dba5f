//! Trains the three-branch model on a biased synthetic log and inspects the
//! branch outputs and scores of a few test targets.
//!
//!     cargo run --release --example train_core -- [epochs]

use ktcore::debias::{train, CoreModel, InferenceMode, ModelConfig, TrainConfig};
use ktcore::eval::auc;
use ktcore::experiment::Dataset;
use ktcore::ndmath::AdamConfig;
use ktcore::synthgen::{generate, tune_difficulty_spread, SynthConfig};

fn main() -> ktcore::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs: usize = std::env::args().nth(1).map_or(15, |s| s.parse().expect("epochs"));

    let mut synth = SynthConfig::new(300, 30, 6, 40).with_seed(2);
    synth.learn_rates = vec![0.5; 6];
    synth.guess = 0.1;
    synth.slip = 0.05;
    synth.difficulty_spread = tune_difficulty_spread(&synth, 0.85)?;
    let log = generate(&synth)?;
    let data = Dataset::from_corpus(&log.corpus, 200, 0.8, synth.seed)?;

    let config = ModelConfig {
        dim: 32,
        branch_hidden: 32,
        ..ModelConfig::default()
    };
    let mut model = CoreModel::new(config, data.vocab.n_questions(), data.vocab.n_concepts());
    let tc = TrainConfig {
        batch_size: 16,
        epochs,
        patience: Some(5),
        adam: AdamConfig::with_lr(3e-3),
        ..TrainConfig::default()
    };
    let history = train(&mut model, &data.train, &tc)?;

    println!("{:>5} {:>8} {:>8} {:>8} {:>8} {:>8}", "epoch", "BCE_sq", "BCE_q", "KL", "p", "val AUC");
    for e in &history.epochs {
        println!(
            "{:>5} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8}",
            e.epoch,
            e.bce_sq,
            e.bce_q,
            e.kl,
            e.p,
            e.val_auc.map_or("-".into(), |a| format!("{a:.4}"))
        );
    }
    println!("kept epoch {:?}, p = {:.4}", history.best_epoch, model.p);

    let records = model.predict_sequences(&data.test, 32)?;
    println!("\n{:>7} {:>4} {:>3} {:>7} {:>7} {:>7} {:>8} {:>8} {:>8}", "student", "step", "y", "R_s", "R_q", "R_k", "factual", "counter", "debiased");
    for r in records.iter().take(8) {
        println!(
            "{:>7} {:>4} {:>3} {:>7.3} {:>7.3} {:>7.3} {:>8.4} {:>8.4} {:>8.4}",
            r.student,
            r.step,
            u8::from(r.label),
            r.r_s,
            r.r_q,
            r.r_k,
            r.factual,
            r.counterfactual,
            r.debiased
        );
    }

    let labels: Vec<bool> = records.iter().map(|r| r.label).collect();
    for mode in [InferenceMode::TotalEffect, InferenceMode::Debiased] {
        let scores: Vec<f64> = records.iter().map(|r| r.score(mode)).collect();
        println!("{mode:?} AUC on the original test split: {:.4}", auc(&scores, &labels)?);
    }
    Ok(())
}
