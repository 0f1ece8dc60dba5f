use rand::Rng;

use crate::error::{Error, Result};
use crate::ndmath::{Tape, Tensor, Var};

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named trainable tensors, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// A [`ParamStore`] placed on a tape for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps leaves already on a tape, one per store entry in order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    /// Weight matrix initialized uniform in `±1/sqrt(fan_in)`.
    pub fn add_weight<R: Rng + ?Sized>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.add(name, Tensor::uniform(fan_in, fan_out, bound, rng))
    }

    pub fn add_bias(&mut self, name: &str, width: usize) -> ParamId {
        self.add(name, Tensor::zeros(1, width))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Puts every tensor on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Replaces all values, checking that names and shapes line up.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Checkpoint("parameter names differ".into()));
        }
        for (name, (a, b)) in self.names.iter().zip(self.tensors.iter_mut().zip(&other.tensors)) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
            *a = b.clone();
        }
        Ok(())
    }

    pub fn zero_all(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(0.0));
    }
}

/// Two-layer perceptron with a tanh hidden layer and a scalar output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        Mlp {
            w1: store.add_weight(&format!("{prefix}.w1"), input, hidden, rng),
            b1: store.add_bias(&format!("{prefix}.b1"), hidden),
            w2: store.add_weight(&format!("{prefix}.w2"), hidden, 1, rng),
            b2: store.add_bias(&format!("{prefix}.b2"), 1),
        }
    }

    /// `[n, input] -> [n, 1]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let h = tape.matmul(x, bound.var(self.w1))?;
        let h = tape.add_row(h, bound.var(self.b1))?;
        let h = tape.tanh(h);
        let o = tape.matmul(h, bound.var(self.w2))?;
        tape.add_row(o, bound.var(self.b2))
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}
