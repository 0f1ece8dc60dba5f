//! Switches off one piece of the counterfactual model at a time: ranking by
//! the factual score alone, a predetermined `p`, and training without the
//! question-only loss.
//!
//!     cargo run --release --example ablations -- [epochs]

use ktcore::debias::{train, CoreModel, InferenceMode, ModelConfig, TrainConfig};
use ktcore::eval::{resample_unbiased, score_records};
use ktcore::experiment::{Dataset, Evaluation};
use ktcore::ndmath::AdamConfig;
use ktcore::synthgen::{generate, tune_difficulty_spread, SynthConfig};

fn main() -> ktcore::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(15, |s| s.parse().expect("epochs"));
    let mut synth = SynthConfig::new(300, 30, 6, 40).with_seed(5);
    synth.learn_rates = vec![0.5; 6];
    synth.guess = 0.1;
    synth.slip = 0.05;
    synth.difficulty_spread = tune_difficulty_spread(&synth, 0.85)?;
    let log = generate(&synth)?;
    let data = Dataset::from_corpus(&log.corpus, 200, 0.8, synth.seed)?;
    let unbiased = resample_unbiased(&data.test_targets(), 0)?;

    let model_cfg = ModelConfig {
        dim: 32,
        branch_hidden: 32,
        ..ModelConfig::default()
    };
    let base = TrainConfig {
        batch_size: 16,
        epochs,
        patience: Some(5),
        adam: AdamConfig::with_lr(3e-3),
        ..TrainConfig::default()
    };
    let variants = [
        ("full", base.clone(), InferenceMode::Debiased),
        ("te-only", base.clone(), InferenceMode::TotalEffect),
        (
            "fixed p=0",
            TrainConfig {
                fixed_p: Some(0.0),
                ..base.clone()
            },
            InferenceMode::Debiased,
        ),
        (
            "no q loss",
            TrainConfig {
                question_loss: false,
                ..base.clone()
            },
            InferenceMode::Debiased,
        ),
    ];

    println!("{:<10} {:>8} {:>8} {:>8} {:>8}", "variant", "p", "biased", "unbiased", "high");
    for (name, tc, mode) in variants {
        let mut model = CoreModel::new(model_cfg, data.vocab.n_questions(), data.vocab.n_concepts());
        train(&mut model, &data.train, &tc)?;
        let records = model.predict_sequences(&data.test, 32)?;
        let scored = score_records(&records, mode, mode.default_threshold());
        let e = Evaluation::new(name, &scored, &unbiased, &data.stats, Some(mode.default_threshold()));
        let acc = |a: Option<f64>| a.map_or("-".into(), |v| format!("{v:.4}"));
        println!(
            "{name:<10} {:>8.4} {:>8} {:>8} {:>8}",
            model.p,
            acc(e.biased.overall.accuracy),
            acc(e.unbiased.overall.accuracy),
            acc(e.unbiased.high.accuracy)
        );
    }
    Ok(())
}
