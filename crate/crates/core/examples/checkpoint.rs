//! Saves a trained model, reloads it, and shows that predictions and bytes
//! survive the trip while a different vocabulary is refused.
//!
//!     cargo run --release --example checkpoint -- [out.bin]

use ktcore::checkpoint::{Checkpoint, SplitSpec};
use ktcore::debias::{train, CoreModel, ModelConfig, TrainConfig};
use ktcore::experiment::Dataset;
use ktcore::synthgen::{generate, SynthConfig};

fn main() -> ktcore::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("ktcore-example.bin"), Into::into);
    let synth = SynthConfig::new(80, 12, 3, 20).with_seed(8);
    let log = generate(&synth)?;
    let split = SplitSpec {
        train_ratio: 0.8,
        seed: 8,
        max_len: 200,
    };
    let data = Dataset::from_corpus(&log.corpus, split.max_len, split.train_ratio, split.seed)?;

    let cfg = ModelConfig {
        dim: 16,
        branch_hidden: 16,
        ..ModelConfig::default()
    };
    let mut model = CoreModel::new(cfg, data.vocab.n_questions(), data.vocab.n_concepts());
    let tc = TrainConfig {
        batch_size: 16,
        epochs: 3,
        ..TrainConfig::default()
    };
    train(&mut model, &data.train, &tc)?;

    let saved = Checkpoint::new(model, data.vocab.hash(), split, serde_json::to_value(&tc)?);
    saved.save(&path)?;
    let bytes = std::fs::read(&path)?;
    println!("{}: {} bytes, {} arrays", path.display(), bytes.len(), saved.manifest.arrays.len());
    for a in &saved.manifest.arrays {
        println!("  {:<18} {} x {}", a.name, a.rows, a.cols);
    }

    let loaded = Checkpoint::load(&path)?;
    println!("byte-identical re-save: {}", loaded.to_bytes()? == bytes);
    let same = loaded.model.predict_sequences(&data.test, 16)? == saved.model.predict_sequences(&data.test, 16)?;
    println!("identical predictions: {same}, p = {}", loaded.model.p);

    let other = generate(&SynthConfig::new(80, 13, 3, 20).with_seed(8))?;
    match loaded.check_vocabulary(&other.corpus.vocab.hash()) {
        Err(e) => println!("other corpus refused: {e}"),
        Ok(()) => println!("other corpus accepted"),
    }
    Ok(())
}
