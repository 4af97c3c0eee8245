//! Named parameter storage shared by both trainable models.
//!
//! Parameters live as `f32` arrays (the checkpoint precision) and are
//! widened to `f64` when bound onto a [`Graph`], so a save/load cycle is
//! bit-exact and every forward pass computes in double precision.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{ensure, Result};
use crate::tensor::Matrix;

/// Index of a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl NamedArray {
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(|&x| f64::from(x)).collect(),
        )
    }
}

/// An ordered collection of named parameter arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    arrays: Vec<NamedArray>,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Uniform Xavier/Glorot for a `[fan_in, fan_out]` weight.
    Xavier,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    pub fn get(&self, id: ParamId) -> &NamedArray {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut NamedArray {
        &mut self.arrays[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.arrays.iter().position(|a| a.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.arrays.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.arrays.iter().map(|a| a.data.len()).sum()
    }

    /// Widened copies of every array, in order.
    pub fn to_matrices(&self) -> Vec<Matrix> {
        self.arrays.iter().map(NamedArray::to_matrix).collect()
    }

    /// Binds every parameter as a trainable leaf.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        Bound {
            vars: self.arrays.iter().map(|a| graph.param(a.to_matrix())).collect(),
        }
    }

    /// Binds every parameter as a constant (inference, no gradients).
    pub fn bind_frozen(&self, graph: &mut Graph) -> Bound {
        Bound {
            vars: self
                .arrays
                .iter()
                .map(|a| graph.constant(a.to_matrix()))
                .collect(),
        }
    }

    /// Replaces every array's contents from `other`, which must have the
    /// same names and shapes in the same order.
    pub fn assign_from(&mut self, other: &[NamedArray]) -> Result<()> {
        ensure!(
            other.len() == self.arrays.len(),
            Checkpoint,
            "expected {} parameter arrays, found {}",
            self.arrays.len(),
            other.len()
        );
        for (mine, theirs) in self.arrays.iter_mut().zip(other) {
            ensure!(
                mine.name == theirs.name && mine.rows == theirs.rows && mine.cols == theirs.cols,
                Checkpoint,
                "parameter mismatch: expected {} [{}x{}], found {} [{}x{}]",
                mine.name,
                mine.rows,
                mine.cols,
                theirs.name,
                theirs.rows,
                theirs.cols
            );
            mine.data.clone_from(&theirs.data);
        }
        Ok(())
    }
}

/// Graph handles for every parameter of a [`ParamSet`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Binds explicit `f64` values (used for finite-difference checks).
    pub fn from_values(graph: &mut Graph, values: &[Matrix]) -> Self {
        Self {
            vars: values.iter().map(|m| graph.param(m.clone())).collect(),
        }
    }

    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn opt(&self, id: Option<ParamId>) -> Option<Var> {
        id.map(|id| self.var(id))
    }

    /// Collects gradients for every parameter; missing gradients are zero.
    pub fn gradients(&self, graph: &Graph, grads: &mut Gradients) -> Vec<Matrix> {
        self.vars
            .iter()
            .map(|&v| {
                grads.take(v).unwrap_or_else(|| {
                    let (r, c) = graph.value(v).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect()
    }
}

/// Builds a [`ParamSet`] with deterministic, seeded initialization.
pub struct ParamBuilder {
    set: ParamSet,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            set: ParamSet::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: Vec::new(),
        }
    }

    pub fn push_scope(&mut self, name: impl Into<String>) {
        self.prefix.push(name.into());
    }

    pub fn pop_scope(&mut self) {
        self.prefix.pop();
    }

    pub fn scoped<T>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> T) -> T {
        self.push_scope(name);
        let out = f(self);
        self.pop_scope();
        out
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> ParamId {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix.join("."))
        };
        debug_assert!(self.set.find(&full).is_none(), "duplicate parameter {full}");
        let n = rows * cols;
        let data: Vec<f32> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect()
            }
            Init::Xavier => {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                (0..n)
                    .map(|_| {
                        let u: f64 = rand::Rng::random_range(&mut self.rng, -bound..bound);
                        u as f32
                    })
                    .collect()
            }
        };
        self.set.arrays.push(NamedArray {
            name: full,
            rows,
            cols,
            data,
        });
        ParamId(self.set.arrays.len() - 1)
    }

    pub fn finish(self) -> ParamSet {
        self.set
    }
}
