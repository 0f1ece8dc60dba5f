//! Majority baseline vs. bare backbone vs. counterfactual model on a biased
//! synthetic log, scored on the original and the balanced test sets.
//!
//!     cargo run --release --example replication -- [epochs] [seed] [lr]

use ktcore::experiment::{run_replication, ReplicationConfig};

fn main() -> ktcore::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = ReplicationConfig::default();
    if let Some(epochs) = args.first() {
        cfg.train.epochs = epochs.parse().expect("epochs");
    }
    if let Some(seed) = args.get(1) {
        cfg.synth.seed = seed.parse().expect("seed");
    }
    if let Some(lr) = args.get(2) {
        cfg.train.adam.lr = lr.parse().expect("lr");
    }

    let t0 = std::time::Instant::now();
    let report = run_replication(&cfg)?;
    println!("spread {:.4}, mean bias {:.4}", report.difficulty_spread, report.mean_bias);
    println!("{:<10} {:>8} {:>8} {:>8} {:>8} {:>8}", "model", "biased", "unbiased", "low", "medium", "high");
    for e in report.evaluations() {
        let acc = |m: &ktcore::eval::GroupMetrics| m.accuracy.map_or("-".into(), |a| format!("{:.4}", a));
        println!(
            "{:<10} {:>8} {:>8} {:>8} {:>8} {:>8}",
            e.biased.model,
            acc(&e.biased.overall),
            acc(&e.unbiased.overall),
            acc(&e.unbiased.low),
            acc(&e.unbiased.medium),
            acc(&e.unbiased.high),
        );
    }
    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
