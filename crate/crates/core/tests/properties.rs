//! Randomized invariants across the numeric core, the data layer, the
//! backbone and the evaluation protocol.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ktcore::backbone::{encode_interactions, Backbone, Embeddings, GruBackbone};
use ktcore::corpus::{compute_answer_stats, read_interactions, write_interactions, Interaction, QuestionCounts};
use ktcore::debias::{counterfactual_fuse, fuse, PredictionRecord};
use ktcore::eval::{accuracy, auc, majority_baseline, resample_unbiased};
use ktcore::ndmath::{log_sigmoid, softplus, AdamConfig, AdamState, Tape, Tensor};
use ktcore::params::ParamStore;

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    wins / pairs
}

fn interaction(student: usize, step: usize, question: usize, correct: bool) -> Interaction {
    Interaction {
        student,
        question,
        concepts: vec![0],
        correct,
        step,
    }
}

/// Test pool of `(question, label)` pairs, one student per entry.
fn pool_of(items: &[(usize, bool)]) -> Vec<Interaction> {
    items
        .iter()
        .enumerate()
        .map(|(s, &(q, c))| interaction(s, 1, q, c))
        .collect()
}

/// Embeddings and a GRU of width `dim` with every parameter uniform in
/// `±scale`.
fn backbone(dim: usize, scale: f64, seed: u64) -> (ParamStore, Embeddings, GruBackbone) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let emb = Embeddings::new(&mut store, 6, 3, dim, &mut rng);
    let gru = GruBackbone::new(&mut store, dim, &mut rng);
    for t in store.tensors_mut() {
        *t = Tensor::uniform(t.rows(), t.cols(), scale, &mut rng);
    }
    (store, emb, gru)
}

/// States of one sequence of `(question, correct)` pairs, `(len + 1) x d`.
fn unroll(model: &(ParamStore, Embeddings, GruBackbone), seq: &[(usize, bool)]) -> Tensor {
    let (store, emb, gru) = model;
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let questions: Vec<usize> = seq.iter().map(|&(q, _)| q).collect();
    let concepts: Vec<Vec<usize>> = seq.iter().map(|&(q, _)| vec![q % 3]).collect();
    let correct: Vec<bool> = seq.iter().map(|&(_, c)| c).collect();
    let q = emb.encode_questions(&mut tape, &bound, &questions, &concepts).unwrap();
    let x = encode_interactions(&mut tape, q, &correct).unwrap();
    let states = gru.unroll(&mut tape, &bound, x, 1).unwrap();
    tape.value(states).clone()
}

fn sequence(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<(usize, bool)>> {
    prop::collection::vec((0usize..6, any::<bool>()), len)
}

proptest! {
    #[test]
    fn log_sigmoid_matches_softplus_form(x in -30.0f64..30.0) {
        prop_assert!((log_sigmoid(x) - (x - softplus(x))).abs() <= 1e-12);
    }

    #[test]
    fn log_sigmoid_is_finite_and_non_positive(x in prop::num::f64::NORMAL | prop::num::f64::ZERO) {
        let y = log_sigmoid(x);
        prop_assert!(y.is_finite());
        prop_assert!(y <= 0.0);
    }

    #[test]
    fn auc_equals_pairwise_oracle(
        items in prop::collection::vec((0u8..20, any::<bool>()), 2..200)
    ) {
        let scores: Vec<f64> = items.iter().map(|&(s, _)| f64::from(s) / 7.0).collect();
        let labels: Vec<bool> = items.iter().map(|&(_, l)| l).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        prop_assert!((auc(&scores, &labels).unwrap() - pairwise_auc(&scores, &labels)).abs() <= 1e-12);
    }

    #[test]
    fn accuracy_counts_agreements(
        items in prop::collection::vec((-3.0f64..3.0, any::<bool>()), 1..100),
        threshold in -1.0f64..1.0,
    ) {
        let scores: Vec<f64> = items.iter().map(|&(s, _)| s).collect();
        let labels: Vec<bool> = items.iter().map(|&(_, l)| l).collect();
        let hits = items.iter().filter(|&&(s, l)| (s > threshold) == l).count();
        prop_assert_eq!(accuracy(&scores, &labels, threshold).unwrap(), hits as f64 / items.len() as f64);
    }

    #[test]
    fn resampled_sets_are_balanced_members(
        items in prop::collection::vec((0usize..8, any::<bool>()), 1..150),
        seed in any::<u64>(),
    ) {
        let pool = pool_of(&items);
        let set = resample_unbiased(&pool, seed).unwrap();
        prop_assert_eq!(&set, &resample_unbiased(&pool, seed).unwrap());

        let mut original: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for it in &pool {
            let e = original.entry(it.question).or_default();
            if it.correct { e.0 += 1 } else { e.1 += 1 }
        }
        let mut sampled: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for &i in &set.indices {
            prop_assert!(i < pool.len());
            let it = &pool[i];
            let e = sampled.entry(it.question).or_default();
            if it.correct { e.0 += 1 } else { e.1 += 1 }
        }
        for (q, (c, w)) in original {
            if c == 0 || w == 0 {
                prop_assert!(set.excluded.contains(&q));
                prop_assert!(!sampled.contains_key(&q));
            } else {
                let (sc, sw) = sampled[&q];
                prop_assert_eq!(sc + sw, c + w);
                prop_assert!(sc.abs_diff(sw) <= 1);
            }
        }
    }

    #[test]
    fn majority_is_half_right_on_even_balanced_sets(
        sizes in prop::collection::vec(1usize..10, 1..8),
        training in prop::collection::vec((0usize..8, any::<bool>()), 0..80),
        seed in any::<u64>(),
    ) {
        // Question q gets 2 * sizes[q] test answers with both classes present.
        let mut items = Vec::new();
        for (q, &k) in sizes.iter().enumerate() {
            items.push((q, true));
            items.push((q, false));
            for j in 1..k {
                items.push((q, j % 3 == 0));
                items.push((q, j % 2 == 0));
            }
        }
        let pool = pool_of(&items);
        let stats = compute_answer_stats(&pool_of(&training));
        let set = resample_unbiased(&pool, seed).unwrap();
        let scored = majority_baseline(&stats, &set.select(&pool));
        let scores: Vec<f64> = scored.iter().map(|s| f64::from(u8::from(s.predicted))).collect();
        let labels: Vec<bool> = scored.iter().map(|s| s.label).collect();
        prop_assert_eq!(accuracy(&scores, &labels, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn bias_strength_is_a_majority_share(n_correct in 0u64..1000, n_incorrect in 0u64..1000) {
        let c = QuestionCounts { n_correct, n_incorrect };
        prop_assert_eq!(c.total(), n_correct + n_incorrect);
        match c.bias_strength() {
            None => prop_assert_eq!(c.total(), 0),
            Some(b) => prop_assert!((0.5..=1.0).contains(&b)),
        }
    }

    #[test]
    fn stats_cover_every_answer(items in prop::collection::vec((0usize..12, any::<bool>()), 0..200)) {
        let stats = compute_answer_stats(&pool_of(&items));
        prop_assert_eq!(stats.total_answers(), items.len() as u64);
        for (q, counts) in stats.iter() {
            let n = items.iter().filter(|&&(iq, _)| iq == q).count() as u64;
            let c = items.iter().filter(|&&(iq, l)| iq == q && l).count() as u64;
            prop_assert_eq!(counts.total(), n);
            prop_assert_eq!(counts.n_correct, c);
        }
    }

    #[test]
    fn reindexing_is_a_bijection(
        rows in prop::collection::vec(
            (0usize..5, -50i64..50, prop::collection::btree_set(-9i64..9, 1..3), any::<bool>()),
            1..60,
        )
    ) {
        let mut csv = String::from("student_id,question_id,concept_ids,correct\n");
        for (s, q, cs, c) in &rows {
            let cs: Vec<String> = cs.iter().map(i64::to_string).collect();
            csv.push_str(&format!("st{s},{q},{},{}\n", cs.join(";"), u8::from(*c)));
        }
        let Ok(corpus) = read_interactions(csv.as_bytes(), "random.csv") else {
            // Every student may fall below the minimum length.
            return Ok(());
        };
        for (i, &raw) in corpus.vocab.questions.iter().enumerate() {
            prop_assert_eq!(corpus.vocab.question_index(raw), Some(i));
        }
        for (i, &raw) in corpus.vocab.concepts.iter().enumerate() {
            prop_assert_eq!(corpus.vocab.concept_index(raw), Some(i));
        }
        let mut out = Vec::new();
        write_interactions(&corpus, &mut out).unwrap();
        let again = read_interactions(out.as_slice(), "again.csv").unwrap();
        prop_assert_eq!(again, corpus);
    }

    #[test]
    fn fused_scores_are_log_probabilities(
        r_s in -50.0f64..50.0,
        r_q in -50.0f64..50.0,
        r_k in -50.0f64..50.0,
        p in -20.0f64..20.0,
    ) {
        let r = PredictionRecord::from_branches(0, 1, 0, true, (r_s, r_q, r_k), p);
        prop_assert!(r.factual.is_finite() && r.factual <= 0.0);
        prop_assert!(r.counterfactual.is_finite() && r.counterfactual <= 0.0);
        prop_assert_eq!(r.factual, fuse(r_s, r_q, r_k));
        prop_assert_eq!(r.counterfactual, counterfactual_fuse(p, r_q));
        prop_assert_eq!(r.debiased.to_bits(), (r.factual - r.counterfactual).to_bits());
    }

    #[test]
    fn debiased_order_within_a_question_ignores_question_logit(
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
        r_q in -8.0f64..8.0,
        p in -3.0f64..3.0,
    ) {
        // Same question, so both students share R_q and the counterfactual.
        prop_assume!((a - b).abs() > 1e-6);
        let x = PredictionRecord::from_branches(0, 1, 0, true, (a, r_q, 0.0), p);
        let y = PredictionRecord::from_branches(1, 1, 0, true, (b, r_q, 0.0), p);
        prop_assert_eq!(x.debiased > y.debiased, a > b);
    }

    #[test]
    fn adam_leaves_parameters_alone_under_zero_gradients(
        values in prop::collection::vec(-10.0f64..10.0, 1..12),
        steps in 1usize..20,
    ) {
        let mut param = Tensor::row(values.clone());
        let zero = Tensor::zeros(1, values.len());
        let mut adam = AdamState::new(AdamConfig::default(), [&param]);
        for _ in 0..steps {
            adam.step(&mut [&mut param], &[&zero], &["w"]).unwrap();
        }
        prop_assert_eq!(param.data(), &values[..]);
        prop_assert_eq!(adam.steps(), steps as u64);
    }

    #[test]
    fn reused_values_accumulate_gradients(values in prop::collection::vec(-3.0f64..3.0, 1..10), uses in 1usize..5) {
        // d/dx sum(x * x + x + ... + x) with `uses` plain terms.
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row(values.clone()));
        let mut total = tape.mul(x, x).unwrap();
        for _ in 0..uses {
            total = tape.add(total, x).unwrap();
        }
        let loss = tape.sum(total);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(x).unwrap();
        for (gi, vi) in g.data().iter().zip(&values) {
            prop_assert!((gi - (2.0 * vi + uses as f64)).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn states_depend_only_on_the_past(seq in sequence(2..40), cut in 1usize..40, seed in 0u64..1000) {
        let cut = cut.min(seq.len() - 1);
        let model = backbone(4, 0.5, seed);
        let full = unroll(&model, &seq);
        let prefix = unroll(&model, &seq[..cut]);
        let d = 4;
        prop_assert_eq!(prefix.data(), &full.data()[..(cut + 1) * d]);
    }

    #[test]
    fn swapping_two_interactions_changes_the_state(seq in sequence(3..20), seed in 0u64..1000) {
        let i = seq.iter().position(|x| *x != seq[0]);
        prop_assume!(i.is_some());
        let mut swapped = seq.clone();
        swapped.swap(0, i.unwrap());
        let model = backbone(4, 0.5, seed);
        let a = unroll(&model, &seq);
        let b = unroll(&model, &swapped);
        let last = |t: &Tensor| t.row_slice(t.rows() - 1).to_vec();
        prop_assert_ne!(last(&a), last(&b));
    }

    #[test]
    fn states_stay_finite_over_long_sequences(seq in sequence(200..201), seed in 0u64..1000) {
        let model = backbone(8, 0.1, seed);
        let states = unroll(&model, &seq);
        prop_assert_eq!(states.rows(), 201);
        prop_assert!(states.is_finite());
        prop_assert!(states.row_slice(0).iter().all(|&x| x == 0.0));
    }
}
