//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ktcore::corpus::{build_sequences, compute_answer_stats, LearningSequence};
use ktcore::debias::{
    bce_with_logits, bernoulli_kl, counterfactual_fuse, fuse, Batch, CoreModel, ModelConfig, ModelKind,
    ProbabilityMode,
};
use ktcore::eval::{accuracy, auc, majority_baseline, resample_unbiased};
use ktcore::experiment::{run_replication, ReplicationConfig, ReplicationReport};
use ktcore::ndmath::{grad_check, Tape, Tensor, Var};
use ktcore::params::Bound;
use ktcore::synthgen::{generate, SynthConfig};
use ktcore::Result;

const FD_STEP: f64 = 1e-4;
const GRAD_TOL: f64 = 1e-4;
const GRAD_POINTS: usize = 100;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const AUC_INSTANCES: usize = 200;
const AUC_TOL: f64 = 1e-12;
const RESAMPLE_LOGS: usize = 100;
const MAJORITY_BIAS_TOL: f64 = 0.02;
const MAJORITY_UNBIASED_TOL: f64 = 0.02;
const BACKBONE_DROP: f64 = 0.05;
const CORE_MARGIN: f64 = 0.02;
const ABLATION_TIE: f64 = 0.005;
const REPLICATION_BUDGET: Duration = Duration::from_secs(15 * 60);

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Check {
    Check { name, pass, detail }
}

fn main() {
    let mut checks = Vec::new();
    run(&mut checks, "1 gradients", criterion_gradients);
    run(&mut checks, "2 metric oracles", criterion_metrics);
    run(&mut checks, "3 resampler", criterion_resampler);
    run(&mut checks, "4 counterfactual algebra", criterion_algebra);
    run(&mut checks, "5/6 replication", criterion_replication);

    let failed = checks.iter().filter(|c| !c.pass).count();
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn run(out: &mut Vec<Check>, label: &'static str, f: fn() -> Result<Vec<Check>>) {
    let produced = match f() {
        Ok(v) => v,
        Err(e) => vec![check(label, false, format!("error: {e}"))],
    };
    for c in produced {
        println!("{} criterion {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        out.push(c);
    }
}

// ---------------------------------------------------------------- criterion 1

/// Contracts `out` against a fixed pseudo-random weight of the same shape so
/// every output coordinate contributes to the scalar.
fn readout(t: &mut Tape, out: Var) -> Result<Var> {
    let [r, c] = t.value(out).shape();
    let mut rng = ChaCha8Rng::seed_from_u64((r * 131 + c) as u64);
    let w = t.constant(Tensor::uniform(r, c, 1.0, &mut rng));
    let prod = t.mul(out, w)?;
    Ok(t.sum(prod))
}

type Case = (Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..5), rng.gen_range(1..5))
}

fn primitive_case(name: &str, rng: &mut ChaCha8Rng) -> Case {
    let (m, n) = dims(rng);
    let u = |rng: &mut ChaCha8Rng, r, c| Tensor::uniform(r, c, 2.0, rng);
    match name {
        "matmul" => {
            let k = rng.gen_range(1..5);
            (vec![u(rng, m, k), u(rng, k, n)], Box::new(|t, v| {
                let o = t.matmul(v[0], v[1])?;
                readout(t, o)
            }))
        }
        "add" | "sub" | "mul" => {
            let op = name.to_string();
            (vec![u(rng, m, n), u(rng, m, n)], Box::new(move |t, v| {
                let o = match op.as_str() {
                    "add" => t.add(v[0], v[1])?,
                    "sub" => t.sub(v[0], v[1])?,
                    _ => t.mul(v[0], v[1])?,
                };
                readout(t, o)
            }))
        }
        "add_row" => (vec![u(rng, m, n), u(rng, 1, n)], Box::new(|t, v| {
            let o = t.add_row(v[0], v[1])?;
            readout(t, o)
        })),
        "scale" => {
            let f: f64 = rng.gen_range(-3.0..3.0);
            (vec![u(rng, m, n)], Box::new(move |t, v| {
                let o = t.scale(v[0], f);
                readout(t, o)
            }))
        }
        "neg" => (vec![u(rng, m, n)], Box::new(|t, v| {
            let o = t.neg(v[0]);
            readout(t, o)
        })),
        "add_const" => {
            let c: f64 = rng.gen_range(-3.0..3.0);
            (vec![u(rng, m, n)], Box::new(move |t, v| {
                let o = t.add_const(v[0], c);
                readout(t, o)
            }))
        }
        "tanh" | "sigmoid" | "log_sigmoid" => {
            let op = name.to_string();
            let x = Tensor::uniform(m, n, 4.0, rng);
            (vec![x], Box::new(move |t, v| {
                let o = match op.as_str() {
                    "tanh" => t.tanh(v[0]),
                    "sigmoid" => t.sigmoid(v[0]),
                    _ => t.log_sigmoid(v[0]),
                };
                readout(t, o)
            }))
        }
        "concat_cols" => {
            let (a, b) = (rng.gen_range(1..4), rng.gen_range(1..4));
            (vec![u(rng, m, a), u(rng, m, b), u(rng, m, n)], Box::new(|t, v| {
                let o = t.concat_cols(v)?;
                readout(t, o)
            }))
        }
        "concat_rows" => {
            let (a, b) = (rng.gen_range(1..4), rng.gen_range(1..4));
            (vec![u(rng, a, n), u(rng, b, n), u(rng, m, n)], Box::new(|t, v| {
                let o = t.concat_rows(v)?;
                readout(t, o)
            }))
        }
        "slice_cols" | "slice_rows" => {
            let by_cols = name == "slice_cols";
            let len = if by_cols { n } else { m };
            let start = rng.gen_range(0..len);
            let end = rng.gen_range(start + 1..=len);
            (vec![u(rng, m, n)], Box::new(move |t, v| {
                let o = if by_cols {
                    t.slice_cols(v[0], start, end)?
                } else {
                    t.slice_rows(v[0], start, end)?
                };
                readout(t, o)
            }))
        }
        "gather_rows" => {
            let idx: Vec<usize> = (0..rng.gen_range(1..7)).map(|_| rng.gen_range(0..m)).collect();
            (vec![u(rng, m, n)], Box::new(move |t, v| {
                let o = t.gather_rows(v[0], &idx)?;
                readout(t, o)
            }))
        }
        "bag_mean" => {
            let bags: Vec<Vec<usize>> = (0..rng.gen_range(1..5))
                .map(|_| (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..m)).collect())
                .collect();
            (vec![u(rng, m, n)], Box::new(move |t, v| {
                let o = t.bag_mean(v[0], &bags)?;
                readout(t, o)
            }))
        }
        "sum" => (vec![u(rng, m, n)], Box::new(|t, v| {
            let s = t.sum(v[0]);
            let s2 = t.mul(s, s)?;
            Ok(s2)
        })),
        "mean" => (vec![u(rng, m, n)], Box::new(|t, v| {
            let s = t.mean(v[0])?;
            Ok(t.tanh(s))
        })),
        "bce" => {
            let labels: Vec<bool> = (0..m).map(|_| rng.gen()).collect();
            (vec![Tensor::uniform(m, 1, 4.0, rng)], Box::new(move |t, v| bce_with_logits(t, v[0], &labels)))
        }
        "kl" => {
            let target = Tensor::uniform(m, 1, 4.0, rng);
            (vec![Tensor::uniform(m, 1, 4.0, rng)], Box::new(move |t, v| bernoulli_kl(t, &target, v[0])))
        }
        other => unreachable!("{other}"),
    }
}

const PRIMITIVES: &[&str] = &[
    "matmul",
    "add",
    "sub",
    "mul",
    "add_row",
    "scale",
    "neg",
    "add_const",
    "tanh",
    "sigmoid",
    "log_sigmoid",
    "concat_cols",
    "concat_rows",
    "slice_cols",
    "slice_rows",
    "gather_rows",
    "bag_mean",
    "sum",
    "mean",
    "bce",
    "kl",
];

fn tiny_batch(seed: u64) -> Result<(Vec<LearningSequence>, usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nq, nc) = (rng.gen_range(2..6), rng.gen_range(1..4));
    let mut cfg = SynthConfig::new(rng.gen_range(1..4), nq, nc, rng.gen_range(2..6)).with_seed(seed);
    cfg.concepts_per_question = rng.gen_range(1..=nc.min(2));
    cfg.difficulty_spread = rng.gen_range(0.0..1.0);
    let log = generate(&cfg)?;
    Ok((build_sequences(&log.corpus.interactions, 200), nq, nc))
}

/// Step-A objective (`BCE_sq + BCE_q`) of a small random model on a random
/// batch, with every parameter as a gradient-check input.
fn objective_case(seed: u64) -> Result<Case> {
    let (seqs, nq, nc) = tiny_batch(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let cfg = ModelConfig {
        dim: rng.gen_range(2..4),
        branch_hidden: rng.gen_range(2..4),
        kind: if seed % 4 == 3 { ModelKind::BackboneOnly } else { ModelKind::Core },
        probability: if seed % 2 == 0 { ProbabilityMode::Logit } else { ProbabilityMode::Literal },
        seed,
    };
    let model = CoreModel::new(cfg, nq, nc);
    // Spread the points beyond the small initial weights.
    let points: Vec<Tensor> = model
        .params
        .tensors()
        .iter()
        .map(|t| Tensor::uniform(t.rows(), t.cols(), 1.0, &mut rng))
        .collect();
    let f = move |t: &mut Tape, v: &[Var]| -> Result<Var> {
        let refs: Vec<&LearningSequence> = seqs.iter().collect();
        let batch = Batch::from_sequences(&refs);
        let bound = Bound::from_vars(v.to_vec());
        let out = model.forward(t, &bound, &batch)?;
        Ok(model.objectives(t, &out, &batch.labels(), true)?.branch_loss)
    };
    Ok((points, Box::new(f)))
}

fn criterion_gradients() -> Result<Vec<Check>> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: (f64, String) = (0.0, String::new());
    for name in PRIMITIVES {
        for _ in 0..GRAD_POINTS {
            let (points, f) = primitive_case(name, &mut rng);
            let err = grad_check(|t, v| f(t, v), &points, FD_STEP)?;
            if err > worst.0 {
                worst = (err, name.to_string());
            }
        }
    }
    let mut worst_objective = 0.0f64;
    for seed in 0..GRAD_POINTS as u64 {
        let (points, f) = objective_case(seed)?;
        worst_objective = worst_objective.max(grad_check(|t, v| f(t, v), &points, FD_STEP)?);
    }
    let elapsed = start.elapsed();
    Ok(vec![
        check(
            "1a primitive gradients",
            worst.0 <= GRAD_TOL,
            format!(
                "{} primitives x {GRAD_POINTS} points, worst relative error {:.2e} ({}) <= {GRAD_TOL:e}",
                PRIMITIVES.len(),
                worst.0,
                worst.1
            ),
        ),
        check(
            "1b step-A objective gradient",
            worst_objective <= GRAD_TOL,
            format!("{GRAD_POINTS} random models, worst relative error {worst_objective:.2e} <= {GRAD_TOL:e}"),
        ),
        check(
            "1c gradient runtime",
            elapsed < GRAD_BUDGET,
            format!("{:.1}s < {}s", elapsed.as_secs_f64(), GRAD_BUDGET.as_secs()),
        ),
    ])
}

// ---------------------------------------------------------------- criterion 2

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn criterion_metrics() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut accuracy_mismatches = 0;
    for i in 0..AUC_INSTANCES {
        let n = rng.gen_range(2..=1000);
        // Coarse grids force ties on half of the instances.
        let levels = if i % 2 == 0 { rng.gen_range(2..20) } else { 0 };
        let prevalence = rng.gen_range(0.05..0.95);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(prevalence)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let x: f64 = rng.gen_range(-3.0..3.0);
                if levels > 0 {
                    (x * levels as f64).round() / levels as f64
                } else {
                    x
                }
            })
            .collect();
        worst = worst.max((auc(&scores, &labels)? - pairwise_auc(&scores, &labels)).abs());

        let threshold = rng.gen_range(-1.0..1.0);
        let mut hits = 0usize;
        for k in 0..n {
            if (scores[k] > threshold) == labels[k] {
                hits += 1;
            }
        }
        if accuracy(&scores, &labels, threshold)? != hits as f64 / n as f64 {
            accuracy_mismatches += 1;
        }
    }
    Ok(vec![
        check(
            "2a AUC vs pairwise oracle",
            worst <= AUC_TOL,
            format!("{AUC_INSTANCES} instances (n <= 1000), max deviation {worst:.1e} <= {AUC_TOL:e}"),
        ),
        check(
            "2b accuracy vs direct count",
            accuracy_mismatches == 0,
            format!("{accuracy_mismatches} of {AUC_INSTANCES} instances differ (exact comparison)"),
        ),
    ])
}

// ---------------------------------------------------------------- criterion 3

fn criterion_resampler() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut count_errors = 0;
    let mut imbalance_errors = 0;
    let mut membership_errors = 0;
    let mut determinism_errors = 0;
    let mut majority_errors = 0;
    let mut even_sets = 0;
    for i in 0..RESAMPLE_LOGS {
        let nq = rng.gen_range(2..15);
        let mut cfg = SynthConfig::new(rng.gen_range(3..40), nq, rng.gen_range(1..5), rng.gen_range(3..30))
            .with_seed(1000 + i as u64);
        cfg.difficulty_spread = rng.gen_range(0.0..1.0);
        let pool = generate(&cfg)?.corpus.interactions;
        let train = generate(&cfg.clone().with_seed(5000 + i as u64))?.corpus.interactions;
        let stats = compute_answer_stats(&train);
        let seed = rng.gen();
        let set = resample_unbiased(&pool, seed)?;
        if resample_unbiased(&pool, seed)? != set {
            determinism_errors += 1;
        }
        if set.indices.iter().any(|&k| k >= pool.len()) {
            membership_errors += 1;
            continue;
        }

        for q in 0..nq {
            let original: Vec<bool> = pool.iter().filter(|x| x.question == q).map(|x| x.correct).collect();
            let drawn: Vec<bool> = set
                .indices
                .iter()
                .filter(|&&k| pool[k].question == q)
                .map(|&k| pool[k].correct)
                .collect();
            let both = original.iter().any(|&c| c) && original.iter().any(|&c| !c);
            if !both {
                if !drawn.is_empty() || (!original.is_empty() && !set.excluded.contains(&q)) {
                    membership_errors += 1;
                }
                continue;
            }
            if drawn.len() != original.len() {
                count_errors += 1;
            }
            let c = drawn.iter().filter(|&&x| x).count() as i64;
            if (2 * c - drawn.len() as i64).abs() > 1 {
                imbalance_errors += 1;
            }
        }

        // Keep the even-count questions: a balanced set on which the
        // majority baseline must hit exactly half.
        let even: Vec<usize> = set
            .indices
            .iter()
            .copied()
            .filter(|&k| {
                let q = pool[k].question;
                set.indices.iter().filter(|&&j| pool[j].question == q).count() % 2 == 0
            })
            .collect();
        if !even.is_empty() {
            even_sets += 1;
            let targets: Vec<_> = even.iter().map(|&k| pool[k].clone()).collect();
            let scored = majority_baseline(&stats, &targets);
            let hits = scored.iter().filter(|s| s.predicted == s.label).count();
            if 2 * hits != scored.len() {
                majority_errors += 1;
            }
        }
    }
    Ok(vec![
        check(
            "3a per-question count preservation",
            count_errors == 0,
            format!("{count_errors} violations over {RESAMPLE_LOGS} logs"),
        ),
        check(
            "3b per-question class imbalance <= 1",
            imbalance_errors == 0,
            format!("{imbalance_errors} violations"),
        ),
        check(
            "3c membership and exclusions",
            membership_errors == 0,
            format!("{membership_errors} violations"),
        ),
        check(
            "3d seed determinism",
            determinism_errors == 0,
            format!("{determinism_errors} violations"),
        ),
        check(
            "3e majority baseline on even-count sets",
            majority_errors == 0 && even_sets > 0,
            format!("{majority_errors} of {even_sets} sets differ from exactly 0.5"),
        ),
    ])
}

// ---------------------------------------------------------------- criterion 4

fn criterion_algebra() -> Result<Vec<Check>> {
    let mut cfg = SynthConfig::new(30, 8, 3, 15).with_seed(4);
    cfg.difficulty_spread = 0.7;
    let log = generate(&cfg)?;
    let seqs = build_sequences(&log.corpus.interactions, 200);
    let mcfg = ModelConfig {
        dim: 8,
        branch_hidden: 6,
        ..ModelConfig::default()
    };
    let mut model = CoreModel::new(mcfg, 8, 3);
    model.p = 0.37;

    let records = model.predict_sequences(&seqs, 7)?;
    let split_errors = records
        .iter()
        .filter(|r| {
            r.debiased.to_bits() != (r.factual - r.counterfactual).to_bits()
                || r.factual.to_bits() != fuse(r.r_s, r.r_q, r.r_k).to_bits()
                || r.counterfactual.to_bits() != counterfactual_fuse(model.p, r.r_q).to_bits()
        })
        .count();

    // KL gradient reaches p only.
    let refs: Vec<&LearningSequence> = seqs.iter().collect();
    let batch = Batch::from_sequences(&refs);
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, true);
    let out = model.forward(&mut tape, &bound, &batch)?;
    let obj = model.objectives(&mut tape, &out, &batch.labels(), true)?;
    let grads = tape.backward(obj.kl_loss.expect("core model"))?;
    let leaking: Vec<&str> = model
        .params
        .names()
        .zip(bound.vars())
        .filter(|(_, &v)| grads.get(v).is_some_and(|g| g.data().iter().any(|&x| x != 0.0)))
        .map(|(n, _)| n)
        .collect();
    let p_grad = grads.get(obj.p.expect("core model")).map_or(0.0, |g| g.data()[0]);

    // Zero-initialized model.
    let mut zero = model.clone();
    zero.zero_init();
    let zero_records = zero.predict_sequences(&seqs, 7)?;
    let nonzero = zero_records.iter().filter(|r| r.debiased != 0.0).count();
    let mut tape = Tape::new();
    let bound = zero.params.bind(&mut tape, true);
    let out = zero.forward(&mut tape, &bound, &batch)?;
    let zero_kl = zero.objectives(&mut tape, &out, &batch.labels(), true)?.values.kl;

    // KL of identical distributions over random logits.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut kl_nonzero = 0;
    for _ in 0..100 {
        let u = Tensor::uniform(rng.gen_range(1..50), 1, 10.0, &mut rng);
        let mut t = Tape::new();
        let v = t.param(u.clone());
        let kl = bernoulli_kl(&mut t, &u, v)?;
        if t.value(kl).item()? != 0.0 {
            kl_nonzero += 1;
        }
    }

    Ok(vec![
        check(
            "4a debiased = factual - counterfactual",
            split_errors == 0 && !records.is_empty(),
            format!("{split_errors} of {} records differ bitwise", records.len()),
        ),
        check(
            "4b KL gradient reaches p only",
            leaking.is_empty() && p_grad != 0.0,
            format!("non-zero gradient on {leaking:?}; dKL/dp = {p_grad:.3e}"),
        ),
        check(
            "4c zero-initialized model scores 0",
            nonzero == 0 && !zero_records.is_empty(),
            format!("{nonzero} of {} records non-zero", zero_records.len()),
        ),
        check(
            "4d KL vanishes when counterfactual equals factual",
            zero_kl == 0.0 && kl_nonzero == 0,
            format!("zero model KL = {zero_kl:e}; {kl_nonzero} of 100 random identical pairs non-zero"),
        ),
    ])
}

// ------------------------------------------------------------ criteria 5 and 6

fn unbiased_acc(e: &ktcore::experiment::Evaluation) -> f64 {
    e.unbiased.overall.accuracy.unwrap_or(f64::NAN)
}

fn criterion_replication() -> Result<Vec<Check>> {
    let start = Instant::now();
    let report: ReplicationReport = run_replication(&ReplicationConfig::default())?;
    let elapsed = start.elapsed();

    let maj_biased = report.majority.biased.overall.accuracy.unwrap_or(f64::NAN);
    let maj_unbiased = unbiased_acc(&report.majority);
    let bb_biased = report.backbone.biased.overall.accuracy.unwrap_or(f64::NAN);
    let bb_unbiased = unbiased_acc(&report.backbone);
    let core_unbiased = unbiased_acc(&report.core);

    let gain = |g: ktcore::corpus::BiasGroup| -> f64 {
        let c = report.core.unbiased.group(g).accuracy.unwrap_or(f64::NAN);
        let b = report.backbone.unbiased.group(g).accuracy.unwrap_or(f64::NAN);
        c - b
    };
    use ktcore::corpus::BiasGroup::{High, Low, Medium};
    let (gl, gm, gh) = (gain(Low), gain(Medium), gain(High));
    let te = report.te_only.as_ref().map_or(f64::NAN, unbiased_acc);
    let nq = report.no_q_loss.as_ref().map_or(f64::NAN, unbiased_acc);

    Ok(vec![
        check(
            "5a majority baseline tracks bias",
            (maj_biased - report.mean_bias).abs() <= MAJORITY_BIAS_TOL
                && (maj_unbiased - 0.5).abs() <= MAJORITY_UNBIASED_TOL,
            format!(
                "biased {maj_biased:.4} vs mean bias {:.4} (tol {MAJORITY_BIAS_TOL}); unbiased {maj_unbiased:.4} vs 0.5 (tol {MAJORITY_UNBIASED_TOL})",
                report.mean_bias
            ),
        ),
        check(
            "5b backbone drops on the unbiased set",
            bb_biased - bb_unbiased >= BACKBONE_DROP,
            format!("{bb_biased:.4} -> {bb_unbiased:.4}, drop {:.4} >= {BACKBONE_DROP}", bb_biased - bb_unbiased),
        ),
        check(
            "5c CORE beats backbone on the unbiased set",
            core_unbiased - bb_unbiased >= CORE_MARGIN,
            format!(
                "{core_unbiased:.4} vs {bb_unbiased:.4}, margin {:.4} >= {CORE_MARGIN}",
                core_unbiased - bb_unbiased
            ),
        ),
        check(
            "5d CORE gain weakly increasing with bias",
            gl <= gm && gm <= gh,
            format!("gains low {gl:+.4}, medium {gm:+.4}, high {gh:+.4}"),
        ),
        check(
            "5e replication runtime",
            elapsed <= REPLICATION_BUDGET,
            format!("{:.0}s <= {}s", elapsed.as_secs_f64(), REPLICATION_BUDGET.as_secs()),
        ),
        check(
            "6 ablations do not beat CORE",
            te <= core_unbiased + ABLATION_TIE && nq <= core_unbiased + ABLATION_TIE,
            format!("te_only {te:.4}, no_q_loss {nq:.4}, CORE {core_unbiased:.4} (tie {ABLATION_TIE})"),
        ),
    ])
}
