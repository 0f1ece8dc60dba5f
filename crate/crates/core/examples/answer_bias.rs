//! Loads a log in the CSV schema, splits it by student and prints the answer
//! statistics that drive the bias groups and the majority baseline.
//!
//!     cargo run --example answer_bias -- [path/to/log.csv]

use ktcore::corpus::{load_interactions, stats_table};
use ktcore::eval::{accuracy, majority_baseline};
use ktcore::experiment::Dataset;

fn main() -> ktcore::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/tiny_log.csv").to_string());
    let corpus = load_interactions(&path)?;
    println!(
        "{}: {} students, {} questions, {} concepts, {} interactions",
        path,
        corpus.n_students(),
        corpus.vocab.n_questions(),
        corpus.vocab.n_concepts(),
        corpus.interactions.len()
    );
    println!("vocabulary hash {}", corpus.vocab.hash());

    let data = Dataset::from_corpus(&corpus, 200, 0.8, 0)?;
    println!("\ntraining-split statistics");
    println!("{:>8} {:>8} {:>10} {:>9}  group", "question", "correct", "incorrect", "strength");
    for row in stats_table(&data.stats, &corpus.vocab) {
        let strength = row.bias_strength.map_or("-".into(), |b| format!("{b:.3}"));
        let group = row.group.map_or("unseen".into(), |g| g.to_string());
        println!(
            "{:>8} {:>8} {:>10} {:>9}  {group}",
            row.question_id, row.n_correct, row.n_incorrect, strength
        );
    }
    if let Some(mean) = data.stats.mean_bias_strength() {
        println!("mean bias strength {mean:.3}");
    }

    let targets = data.test_targets();
    if targets.is_empty() {
        println!("no test targets");
        return Ok(());
    }
    let scored = majority_baseline(&data.stats, &targets);
    let hard: Vec<f64> = scored.iter().map(|s| f64::from(u8::from(s.predicted))).collect();
    let labels: Vec<bool> = scored.iter().map(|s| s.label).collect();
    println!(
        "majority answer on {} test targets: accuracy {:.3}",
        targets.len(),
        accuracy(&hard, &labels, 0.5)?
    );
    Ok(())
}
