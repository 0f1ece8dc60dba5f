//! Generates skewed synthetic logs and shows how the difficulty spread moves
//! the per-question answer bias.
//!
//!     cargo run --release --example synthetic_bias -- [target_bias]

use ktcore::corpus::{compute_answer_stats, BiasGroup};
use ktcore::synthgen::{expected_mean_bias, generate, tune_difficulty_spread, SynthConfig};

fn main() -> ktcore::Result<()> {
    let target: f64 = std::env::args().nth(1).map_or(0.8, |s| s.parse().expect("target bias"));
    let base = SynthConfig::new(400, 40, 8, 40).with_seed(1);

    println!("{:>7} {:>10} {:>10}", "spread", "expected", "empirical");
    for spread in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let cfg = SynthConfig {
            difficulty_spread: spread,
            ..base.clone()
        };
        let log = generate(&cfg)?;
        let stats = compute_answer_stats(&log.corpus.interactions);
        println!(
            "{spread:>7.2} {:>10.4} {:>10.4}",
            expected_mean_bias(&cfg),
            stats.mean_bias_strength().unwrap_or(0.5)
        );
    }

    let mut cfg = base;
    cfg.difficulty_spread = tune_difficulty_spread(&cfg, target)?;
    let log = generate(&cfg)?;
    let stats = compute_answer_stats(&log.corpus.interactions);
    println!(
        "\nspread {:.4} targets {target}: empirical {:.4} over {} answers",
        cfg.difficulty_spread,
        stats.mean_bias_strength().unwrap_or(0.5),
        stats.total_answers()
    );
    for g in [BiasGroup::Low, BiasGroup::Medium, BiasGroup::High] {
        let n = stats.iter().filter(|(_, c)| c.group() == Some(g)).count();
        println!("  {:<6} {n} questions", g.name());
    }
    let mastered = log.truth.mastered.iter().filter(|&&m| m).count();
    println!("  {mastered} of {} answers given with the concept mastered", log.truth.mastered.len());
    Ok(())
}
