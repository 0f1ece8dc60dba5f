//! The `ktcore` command line.
//!
//! Every command resolves one flat [`RunConfig`]: built-in defaults, then an
//! optional TOML file of `key = value` lines (`--config`), then `--set
//! key=value` pairs, then dedicated flags. The resolved config is logged and
//! echoed into every artifact.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, SplitSpec};
use crate::corpus::{load_interactions, stats_table, write_interactions, Corpus, Vocabulary, DEFAULT_MAX_LEN};
use crate::debias::{train, validation_split, CoreModel, InferenceMode, ModelConfig, ModelKind, PredictionRecord, ProbabilityMode, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{calibrate_threshold, majority_baseline, resample_unbiased, score_records, write_rows, EvalReport, ReportRow, ScoredTarget, UnbiasedTestSet};
use crate::experiment::{Dataset, Evaluation};
use crate::ndmath::AdamConfig;
use crate::synthgen::{generate, tune_difficulty_spread, DifficultyFamily, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedThreshold {
    /// 0 for the debiased score, `log 0.5` for the factual one.
    Default,
    /// Accuracy-maximizing cut on the validation students.
    Calibrated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdPolicy {
    Named(NamedThreshold),
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dim: usize,
    pub branch_hidden: usize,
    pub max_len: usize,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    /// 0 disables early stopping.
    pub patience: usize,
    pub train_ratio: f64,
    pub validation_ratio: f64,
    pub model: ModelKind,
    pub fusion_prob_mode: ProbabilityMode,
    pub te_only: bool,
    pub fixed_p: Option<f64>,
    pub no_q_loss: bool,
    pub threshold: ThresholdPolicy,
    pub resample_seed: u64,

    pub students: usize,
    pub questions: usize,
    pub concepts: usize,
    pub seq_len: usize,
    pub concepts_per_question: usize,
    pub learn_rate: f64,
    pub prior_mastery: f64,
    pub guess: f64,
    pub slip: f64,
    pub difficulty_spread: f64,
    pub difficulty_family: DifficultyFamily,
    /// Tune `difficulty_spread` to reach this mean bias strength.
    pub target_bias: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::new(500, 60, 12, 50);
        RunConfig {
            seed: 0,
            dim: 64,
            branch_hidden: 64,
            max_len: DEFAULT_MAX_LEN,
            batch: 128,
            lr: 1e-3,
            epochs: 200,
            patience: 20,
            train_ratio: 0.8,
            validation_ratio: 0.1,
            model: ModelKind::Core,
            fusion_prob_mode: ProbabilityMode::Logit,
            te_only: false,
            fixed_p: None,
            no_q_loss: false,
            threshold: ThresholdPolicy::Named(NamedThreshold::Default),
            resample_seed: 0,
            students: synth.n_students,
            questions: synth.n_questions,
            concepts: synth.n_concepts,
            seq_len: synth.seq_len,
            concepts_per_question: synth.concepts_per_question,
            learn_rate: synth.learn_rates[0],
            prior_mastery: synth.prior_mastery,
            guess: synth.guess,
            slip: synth.slip,
            difficulty_spread: synth.difficulty_spread,
            difficulty_family: synth.difficulty_family,
            target_bias: None,
        }
    }
}

impl RunConfig {
    /// Defaults, then `file`, then `overrides` (`key=value`, value in TOML
    /// syntax, bare words read as strings).
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(path) => std::fs::read_to_string(path)?
                .parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            None => toml::Table::new(),
        };
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            let (key, raw) = (key.trim(), raw.trim());
            let value = format!("v = {raw}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.replace('-', "_"), value);
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            branch_hidden: self.branch_hidden,
            kind: self.model,
            probability: self.fusion_prob_mode,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch,
            epochs: self.epochs,
            patience: (self.patience > 0).then_some(self.patience),
            adam: AdamConfig::with_lr(self.lr),
            fixed_p: self.fixed_p,
            question_loss: !self.no_q_loss,
            validation_ratio: self.validation_ratio,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let mut s = SynthConfig::new(self.students, self.questions, self.concepts, self.seq_len).with_seed(self.seed);
        s.concepts_per_question = self.concepts_per_question;
        s.learn_rates = vec![self.learn_rate; self.concepts];
        s.prior_mastery = self.prior_mastery;
        s.guess = self.guess;
        s.slip = self.slip;
        s.difficulty_spread = self.difficulty_spread;
        s.difficulty_family = self.difficulty_family;
        if let Some(target) = self.target_bias {
            s.difficulty_spread = tune_difficulty_spread(&s, target)?;
        }
        Ok(s)
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec {
            train_ratio: self.train_ratio,
            seed: self.seed,
            max_len: self.max_len,
        }
    }

    pub fn inference(&self) -> InferenceMode {
        if self.te_only {
            InferenceMode::TotalEffect
        } else {
            InferenceMode::Debiased
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ktcore", about = "Counterfactual debiasing for knowledge tracing")]
pub struct Cli {
    /// TOML file of `key = value` settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set lr=0.003`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize an interaction CSV and write per-question answer statistics.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a synthetic interaction log.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the training students of a corpus.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch losses; defaults to `<out>.losses.csv`.
        #[arg(long)]
        losses: Option<PathBuf>,
    },
    /// Draw a class-balanced set of scoring targets from the test students.
    Resample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model or a baseline on the biased and the balanced test sets.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = ["majority"], conflicts_with = "checkpoint")]
        baseline: Option<String>,
        /// Index file from `resample`; drawn afresh when absent.
        #[arg(long)]
        unbiased: Option<PathBuf>,
        /// Rank by the factual score instead of the debiased one.
        #[arg(long)]
        te_only: bool,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Combine evaluation reports into one table.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Command::Eval { te_only: true, .. } = cli.command {
        cfg.te_only = true;
    }
    log::info!("config: {}", serde_json::to_string(&cfg)?);
    match cli.command {
        Command::Ingest { input, out_dir } => ingest(&cfg, &input, &out_dir),
        Command::Synth { out } => synth(&cfg, &out),
        Command::Train { data, out, losses } => {
            let losses = losses.unwrap_or_else(|| suffixed(&out, ".losses.csv"));
            train_command(&cfg, &data, &out, &losses)
        }
        Command::Resample { data, out } => resample(&cfg, &data, &out),
        Command::Eval {
            data,
            checkpoint,
            baseline,
            unbiased,
            name,
            out_dir,
            ..
        } => {
            let source = match (checkpoint, baseline) {
                (Some(path), _) => Scorer::Model(path),
                (None, _) => Scorer::Majority,
            };
            eval_command(&cfg, &data, source, unbiased.as_deref(), name, &out_dir)
        }
        Command::Report { reports, out } => report(&reports, out.as_deref()),
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Serialize)]
struct CorpusSummary<'a> {
    students: usize,
    questions: usize,
    concepts: usize,
    interactions: usize,
    vocab_hash: String,
    train_students: usize,
    train_mean_bias: Option<f64>,
    config: &'a RunConfig,
}

fn ingest(cfg: &RunConfig, input: &Path, out_dir: &Path) -> Result<()> {
    let corpus = load_interactions(input)?;
    let data = Dataset::from_corpus(&corpus, cfg.max_len, cfg.train_ratio, cfg.seed)?;
    std::fs::create_dir_all(out_dir)?;
    write_interactions(&corpus, create(&out_dir.join("interactions.csv"))?)?;
    let mut w = csv::Writer::from_writer(create(&out_dir.join("stats.csv"))?);
    for row in stats_table(&data.stats, &corpus.vocab) {
        w.serialize(row)?;
    }
    w.flush()?;
    let summary = CorpusSummary {
        students: corpus.n_students(),
        questions: corpus.vocab.n_questions(),
        concepts: corpus.vocab.n_concepts(),
        interactions: corpus.interactions.len(),
        vocab_hash: corpus.vocab.hash(),
        train_students: crate::corpus::Split::students(&data.train).len(),
        train_mean_bias: data.stats.mean_bias_strength(),
        config: cfg,
    };
    serde_json::to_writer_pretty(create(&out_dir.join("summary.json"))?, &summary)?;
    log::info!(
        "{} interactions, {} students, {} questions, {} concepts",
        summary.interactions,
        summary.students,
        summary.questions,
        summary.concepts
    );
    Ok(())
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sc = cfg.synth_config()?;
    let log = generate(&sc)?;
    write_interactions(&log.corpus, create(out)?)?;
    #[derive(Serialize)]
    struct Truth<'a> {
        config: &'a SynthConfig,
        question_concepts: &'a [Vec<usize>],
        question_offsets: &'a [f64],
    }
    let truth = Truth {
        config: &sc,
        question_concepts: &log.truth.bank.concepts,
        question_offsets: &log.truth.question_offsets,
    };
    serde_json::to_writer_pretty(create(&suffixed(out, ".truth.json"))?, &truth)?;
    log::info!(
        "wrote {} interactions (difficulty spread {:.4})",
        log.corpus.interactions.len(),
        sc.difficulty_spread
    );
    Ok(())
}

fn load_dataset(path: &Path, split: SplitSpec) -> Result<(Corpus, Dataset)> {
    let corpus = load_interactions(path)?;
    let data = Dataset::from_corpus(&corpus, split.max_len, split.train_ratio, split.seed)?;
    Ok((corpus, data))
}

fn train_command(cfg: &RunConfig, data_path: &Path, out: &Path, losses: &Path) -> Result<()> {
    let (corpus, data) = load_dataset(data_path, cfg.split())?;
    let mut model = CoreModel::new(cfg.model_config(), corpus.vocab.n_questions(), corpus.vocab.n_concepts());
    let history = train(&mut model, &data.train, &cfg.train_config())?;
    log::info!(
        "trained {} epochs, kept epoch {:?}, p = {:.6}",
        history.epochs.len(),
        history.best_epoch,
        model.p
    );
    history.write_csv(create(losses)?)?;
    let ckpt = Checkpoint::new(model, corpus.vocab.hash(), cfg.split(), serde_json::to_value(cfg)?);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    ckpt.save(out)
}

fn resample(cfg: &RunConfig, data_path: &Path, out: &Path) -> Result<()> {
    let (_, data) = load_dataset(data_path, cfg.split())?;
    let set = resample_unbiased(&data.test_targets(), cfg.resample_seed)?;
    log::info!(
        "{} scoring targets, {} questions excluded",
        set.indices.len(),
        set.excluded.len()
    );
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    set.save(out)
}

enum Scorer {
    Model(PathBuf),
    Majority,
}

/// Prediction row with raw ids.
#[derive(Serialize)]
struct PredictionRow {
    student_id: String,
    step: usize,
    question_id: i64,
    label: u8,
    #[serde(rename = "R_s")]
    r_s: f64,
    #[serde(rename = "R_q")]
    r_q: f64,
    #[serde(rename = "R_k")]
    r_k: f64,
    factual: f64,
    counterfactual: f64,
    debiased: f64,
    predicted: u8,
}

fn write_predictions(path: &Path, records: &[PredictionRecord], scored: &[ScoredTarget], vocab: &Vocabulary) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for (r, s) in records.iter().zip(scored) {
        w.serialize(PredictionRow {
            student_id: vocab.students[r.student].clone(),
            step: r.step,
            question_id: vocab.questions[r.question],
            label: r.label as u8,
            r_s: r.r_s,
            r_q: r.r_q,
            r_k: r.r_k,
            factual: r.factual,
            counterfactual: r.counterfactual,
            debiased: r.debiased,
            predicted: s.predicted as u8,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct BaselineRow {
    student_id: String,
    step: usize,
    question_id: i64,
    label: u8,
    score: f64,
    predicted: u8,
}

fn eval_command(
    cfg: &RunConfig,
    data_path: &Path,
    scorer: Scorer,
    unbiased_path: Option<&Path>,
    name: Option<String>,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let (scored, threshold, data, name) = match scorer {
        Scorer::Model(path) => {
            let ckpt = Checkpoint::load(&path)?;
            let (corpus, data) = load_dataset(data_path, ckpt.manifest.split)?;
            ckpt.check_vocabulary(&corpus.vocab.hash())?;
            let model = &ckpt.model;
            let mode = cfg.inference();
            let threshold = match cfg.threshold {
                ThresholdPolicy::Fixed(t) => t,
                ThresholdPolicy::Named(NamedThreshold::Default) => mode.default_threshold(),
                ThresholdPolicy::Named(NamedThreshold::Calibrated) => {
                    let mut tc = cfg.train_config();
                    tc.seed = ckpt.manifest.split.seed;
                    let val = validation_split(&data.train, &tc)?
                        .ok_or_else(|| Error::Config("calibration needs validation students".into()))?;
                    let recs = model.predict_sequences(&val, cfg.batch)?;
                    let scores: Vec<f64> = recs.iter().map(|r| r.score(mode)).collect();
                    let labels: Vec<bool> = recs.iter().map(|r| r.label).collect();
                    calibrate_threshold(&scores, &labels)?
                }
            };
            let records = model.predict_sequences(&data.test, cfg.batch)?;
            let scored = score_records(&records, mode, threshold);
            write_predictions(&out_dir.join("predictions.csv"), &records, &scored, &corpus.vocab)?;
            let default_name = match (model.config.kind, mode) {
                (ModelKind::BackboneOnly, _) => "backbone",
                (ModelKind::Core, InferenceMode::TotalEffect) => "core-te",
                (ModelKind::Core, InferenceMode::Debiased) => "core",
            };
            (scored, Some(threshold), data, name.unwrap_or_else(|| default_name.into()))
        }
        Scorer::Majority => {
            let (corpus, data) = load_dataset(data_path, cfg.split())?;
            let scored = majority_baseline(&data.stats, &data.test_targets());
            let mut w = csv::Writer::from_writer(create(&out_dir.join("predictions.csv"))?);
            for s in &scored {
                w.serialize(BaselineRow {
                    student_id: corpus.vocab.students[s.student].clone(),
                    step: s.step,
                    question_id: corpus.vocab.questions[s.question],
                    label: s.label as u8,
                    score: s.score,
                    predicted: s.predicted as u8,
                })?;
            }
            w.flush()?;
            (scored, None, data, name.unwrap_or_else(|| "majority".into()))
        }
    };

    let unbiased = match unbiased_path {
        Some(p) => {
            let set = UnbiasedTestSet::load(p)?;
            if set.indices.iter().any(|&i| i >= scored.len()) {
                return Err(Error::Config(format!(
                    "{} indexes past the {} test targets",
                    p.display(),
                    scored.len()
                )));
            }
            set
        }
        None => resample_unbiased(&data.test_targets(), cfg.resample_seed)?,
    };
    let evaluation = Evaluation::new(&name, &scored, &unbiased, &data.stats, threshold);
    for r in [&evaluation.biased, &evaluation.unbiased] {
        log::info!(
            "{} on {}: accuracy {:?}, AUC {:?} over {} targets",
            r.model,
            r.test_set,
            r.overall.accuracy,
            r.overall.auc,
            r.overall.count
        );
    }
    #[derive(Serialize)]
    struct EvalFile<'a> {
        reports: [&'a EvalReport; 2],
        excluded_questions: usize,
        config: &'a RunConfig,
    }
    serde_json::to_writer_pretty(
        create(&out_dir.join("report.json"))?,
        &EvalFile {
            reports: [&evaluation.biased, &evaluation.unbiased],
            excluded_questions: unbiased.excluded.len(),
            config: cfg,
        },
    )?;
    let mut rows = evaluation.biased.rows();
    rows.extend(evaluation.unbiased.rows());
    write_rows(&rows, create(&out_dir.join("report.csv"))?)
}

#[derive(Deserialize)]
struct EvalFileIn {
    reports: Vec<EvalReport>,
}

/// Rows of every report in the given `report.json` files.
pub fn collect_rows(paths: &[PathBuf]) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for path in paths {
        let file: EvalFileIn = serde_json::from_reader(File::open(path)?)?;
        for r in file.reports {
            rows.extend(r.rows());
        }
    }
    Ok(rows)
}

fn report(paths: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let rows = collect_rows(paths)?;
    let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{:<12} {:<9} {:<7} {:>8} {:>9} {:>8}",
        "model", "test_set", "group", "count", "accuracy", "auc"
    );
    for r in &rows {
        println!(
            "{:<12} {:<9} {:<7} {:>8} {:>9} {:>8}",
            r.model,
            r.test_set,
            r.group,
            r.count,
            fmt(r.accuracy),
            fmt(r.auc)
        );
    }
    match out {
        Some(path) => write_rows(&rows, create(path)?),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_setup() {
        let c = RunConfig::default();
        assert_eq!((c.dim, c.max_len, c.batch, c.epochs), (64, 200, 128, 200));
        assert_eq!(c.lr, 1e-3);
        assert_eq!(c.train_ratio, 0.8);
    }

    #[test]
    fn overrides_take_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "lr = 0.01\nepochs = 3\nmodel = \"backbone-only\"\n").unwrap();
        let c = RunConfig::resolve(Some(&file), &["epochs=5".into(), "threshold=calibrated".into(), "te-only=true".into()]).unwrap();
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.epochs, 5);
        assert_eq!(c.model, ModelKind::BackboneOnly);
        assert_eq!(c.threshold, ThresholdPolicy::Named(NamedThreshold::Calibrated));
        assert!(c.te_only);
        let c = RunConfig::resolve(None, &["threshold=-0.25".into()]).unwrap();
        assert_eq!(c.threshold, ThresholdPolicy::Fixed(-0.25));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::resolve(None, &["learning_rate=1".into()]), Err(Error::Config(_))));
        assert!(RunConfig::resolve(None, &["lr".into()]).is_err());
    }
}
