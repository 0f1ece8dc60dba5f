//! Builds a class-balanced test set per question and shows how a predictor
//! that only memorizes the per-question majority collapses on it.
//!
//!     cargo run --release --example unbiased_eval -- [seed]

use ktcore::eval::{majority_baseline, resample_unbiased};
use ktcore::experiment::{Dataset, Evaluation};
use ktcore::synthgen::{generate, tune_difficulty_spread, SynthConfig};

fn main() -> ktcore::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let mut synth = SynthConfig::new(500, 50, 10, 40).with_seed(4);
    synth.difficulty_spread = tune_difficulty_spread(&synth, 0.8)?;
    let log = generate(&synth)?;
    let data = Dataset::from_corpus(&log.corpus, 200, 0.8, synth.seed)?;

    let pool = data.test_targets();
    let set = resample_unbiased(&pool, seed)?;
    let balanced = set.select(&pool);
    let correct = balanced.iter().filter(|i| i.correct).count();
    let mut distinct = set.indices.clone();
    distinct.sort_unstable();
    distinct.dedup();
    println!(
        "{} test targets -> {} resampled ({} correct, {} distinct), {} questions excluded",
        pool.len(),
        balanced.len(),
        correct,
        distinct.len(),
        set.excluded.len()
    );

    let scored = majority_baseline(&data.stats, &pool);
    let eval = Evaluation::new("majority", &scored, &set, &data.stats, None);
    for report in [&eval.biased, &eval.unbiased] {
        for row in report.rows() {
            println!(
                "{:<9} {:<7} {:>6}  accuracy {:>7}  auc {:>7}",
                row.test_set,
                row.group,
                row.count,
                row.accuracy.map_or("-".into(), |a| format!("{a:.4}")),
                row.auc.map_or("-".into(), |a| format!("{a:.4}"))
            );
        }
    }
    Ok(())
}
