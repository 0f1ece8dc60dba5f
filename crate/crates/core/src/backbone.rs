//! Question and interaction encoders plus the recurrent student-question
//! branch.
//!
//! A question is encoded as its own embedding concatenated with the mean
//! embedding of its concepts (width `2d`). An interaction places that encoding
//! in the first half of a `4d` vector when answered correctly and in the second
//! half otherwise. The recurrent backbone folds interactions into a student
//! state of width `d`, and a knowledge head matches state and question into a
//! scalar logit.
//!
//! Batched tensors are laid out time-major: row `t * batch + b` belongs to
//! sequence `b` at step `t`.

use rand::Rng;

use crate::error::Result;
use crate::ndmath::{Tape, Tensor, Var};
use crate::params::{Bound, Mlp, ParamId, ParamStore};

/// Interface every student-question branch implements.
pub trait Backbone {
    /// Width of the student state.
    fn state_dim(&self) -> usize;

    /// States before each step: given `steps * batch` interaction rows, returns
    /// `(steps + 1) * batch` rows where block `t` is the state after the first
    /// `t` interactions. Block 0 is the initial state.
    fn unroll(&self, tape: &mut Tape, bound: &Bound, interactions: Var, batch: usize) -> Result<Var>;

    /// `[n, state] x [n, 2d] -> [n, 1]` knowledge logits.
    fn knowledge_logit(&self, tape: &mut Tape, bound: &Bound, states: Var, questions: Var) -> Result<Var>;
}

/// Question and concept tables. The last row of each is reserved for ids
/// outside the training vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Embeddings {
    pub question: ParamId,
    pub concept: ParamId,
    pub n_questions: usize,
    pub n_concepts: usize,
    pub dim: usize,
}

impl Embeddings {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        n_questions: usize,
        n_concepts: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let question = store.add("embed.question", Tensor::uniform(n_questions + 1, dim, bound, rng));
        let concept = store.add("embed.concept", Tensor::uniform(n_concepts + 1, dim, bound, rng));
        Embeddings {
            question,
            concept,
            n_questions,
            n_concepts,
            dim,
        }
    }

    pub fn question_row(&self, question: usize) -> usize {
        question.min(self.n_questions)
    }

    pub fn concept_row(&self, concept: usize) -> usize {
        concept.min(self.n_concepts)
    }

    /// Encodes each `(question, concepts)` pair as `e_q ⊕ mean(e_c)`, `[n, 2d]`.
    pub fn encode_questions<C: AsRef<[usize]>>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        questions: &[usize],
        concepts: &[C],
    ) -> Result<Var> {
        let rows: Vec<usize> = questions.iter().map(|&q| self.question_row(q)).collect();
        let bags: Vec<Vec<usize>> = concepts
            .iter()
            .map(|cs| {
                let cs = cs.as_ref();
                if cs.is_empty() {
                    vec![self.n_concepts]
                } else {
                    cs.iter().map(|&c| self.concept_row(c)).collect()
                }
            })
            .collect();
        let eq = tape.gather_rows(bound.var(self.question), &rows)?;
        let ec = tape.bag_mean(bound.var(self.concept), &bags)?;
        tape.concat_cols(&[eq, ec])
    }
}

/// `[q; 0]` for a correct answer, `[0; q]` otherwise.
pub fn encode_interactions(tape: &mut Tape, questions: Var, correct: &[bool]) -> Result<Var> {
    let [n, width] = tape.value(questions).shape();
    let mut hit = Tensor::zeros(n, width);
    for (row, &c) in correct.iter().enumerate() {
        if c {
            hit.data_mut()[row * width..(row + 1) * width].fill(1.0);
        }
    }
    let miss = hit.map(|x| 1.0 - x);
    let hit = tape.constant(hit);
    let miss = tape.constant(miss);
    let left = tape.mul(questions, hit)?;
    let right = tape.mul(questions, miss)?;
    tape.concat_cols(&[left, right])
}

/// Gated recurrent backbone (update and reset gates, tanh candidate) with a
/// perceptron knowledge head over `state ⊕ question`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruBackbone {
    pub dim: usize,
    /// `[4d, 3d]`, gate blocks ordered reset, update, candidate.
    pub w_in: ParamId,
    pub b_in: ParamId,
    /// `[d, 3d]`.
    pub w_rec: ParamId,
    pub b_rec: ParamId,
    pub head: Mlp,
}

impl GruBackbone {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Self {
        GruBackbone {
            dim,
            w_in: store.add_weight("gru.w_in", 4 * dim, 3 * dim, rng),
            b_in: store.add_bias("gru.b_in", 3 * dim),
            w_rec: store.add_weight("gru.w_rec", dim, 3 * dim, rng),
            b_rec: store.add_bias("gru.b_rec", 3 * dim),
            head: Mlp::new(store, "head_k", 3 * dim, dim, rng),
        }
    }
}

impl Backbone for GruBackbone {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn unroll(&self, tape: &mut Tape, bound: &Bound, interactions: Var, batch: usize) -> Result<Var> {
        let d = self.dim;
        let rows = tape.value(interactions).rows();
        let steps = if batch == 0 { 0 } else { rows / batch };
        let gx = tape.matmul(interactions, bound.var(self.w_in))?;
        let gx = tape.add_row(gx, bound.var(self.b_in))?;

        let mut h = tape.constant(Tensor::zeros(batch, d));
        let mut states = Vec::with_capacity(steps + 1);
        states.push(h);
        for t in 0..steps {
            let x = tape.slice_rows(gx, t * batch, (t + 1) * batch)?;
            let gh = tape.matmul(h, bound.var(self.w_rec))?;
            let gh = tape.add_row(gh, bound.var(self.b_rec))?;

            let xr = tape.slice_cols(x, 0, d)?;
            let hr = tape.slice_cols(gh, 0, d)?;
            let r = tape.add(xr, hr)?;
            let r = tape.sigmoid(r);

            let xz = tape.slice_cols(x, d, 2 * d)?;
            let hz = tape.slice_cols(gh, d, 2 * d)?;
            let z = tape.add(xz, hz)?;
            let z = tape.sigmoid(z);

            let xn = tape.slice_cols(x, 2 * d, 3 * d)?;
            let hn = tape.slice_cols(gh, 2 * d, 3 * d)?;
            let hn = tape.mul(r, hn)?;
            let n = tape.add(xn, hn)?;
            let n = tape.tanh(n);

            // h' = (1 - z) n + z h = n + z (h - n)
            let diff = tape.sub(h, n)?;
            let keep = tape.mul(z, diff)?;
            h = tape.add(n, keep)?;
            states.push(h);
        }
        tape.concat_rows(&states)
    }

    fn knowledge_logit(&self, tape: &mut Tape, bound: &Bound, states: Var, questions: Var) -> Result<Var> {
        let joint = tape.concat_cols(&[states, questions])?;
        self.head.forward(tape, bound, joint)
    }
}
