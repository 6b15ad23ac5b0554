//! Parameterised layers. A layer only holds its hyperparameters and the name
//! prefix of its entries; weights live in a [`ParameterStore`].

use rand::Rng;

use crate::error::Result;
use crate::ops::Conv2dOpts;
use crate::params::{kaiming_normal, xavier_normal, Bound, ParameterStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn join(prefix: &str, leaf: &str) -> String {
    format!("{prefix}.{leaf}")
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2d { name: name.into(), in_ch, out_ch, kernel, stride, padding, bias: true }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParameterStore<T>, rng: &mut R) {
        store.insert(join(&self.name, "w"), kaiming_normal(rng, &[self.out_ch, self.in_ch, self.kernel, self.kernel]));
        if self.bias {
            store.insert(join(&self.name, "b"), Tensor::zeros(&[self.out_ch]));
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Bound<'_, T>, x: Var) -> Result<Var> {
        let w = p.var(tape, &join(&self.name, "w"))?;
        let b = if self.bias { Some(p.var(tape, &join(&self.name, "b"))?) } else { None };
        tape.conv2d(x, w, b, Conv2dOpts { stride: self.stride, padding: self.padding })
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub name: String,
    pub channels: usize,
    pub groups: usize,
}

impl GroupNorm {
    /// Largest group count not above `max_groups` that divides `channels`.
    pub fn new(name: impl Into<String>, channels: usize, max_groups: usize) -> Self {
        let groups = (1..=max_groups.min(channels).max(1)).rev().find(|g| channels % g == 0).unwrap_or(1);
        GroupNorm { name: name.into(), channels, groups }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParameterStore<T>) {
        store.insert(join(&self.name, "gamma"), Tensor::ones(&[self.channels]));
        store.insert(join(&self.name, "beta"), Tensor::zeros(&[self.channels]));
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Bound<'_, T>, x: Var) -> Result<Var> {
        let g = p.var(tape, &join(&self.name, "gamma"))?;
        let b = p.var(tape, &join(&self.name, "beta"))?;
        tape.group_norm(x, g, b, self.groups, T::lit(1e-5))
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear { name: name.into(), in_dim, out_dim }
    }

    pub fn weight_name(&self) -> String {
        join(&self.name, "w")
    }

    pub fn bias_name(&self) -> String {
        join(&self.name, "b")
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParameterStore<T>, rng: &mut R) {
        store.insert(self.weight_name(), xavier_normal(rng, &[self.out_dim, self.in_dim]));
        store.insert(self.bias_name(), Tensor::zeros(&[self.out_dim]));
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Bound<'_, T>, x: Var) -> Result<Var> {
        let w = p.var(tape, &self.weight_name())?;
        let b = p.var(tape, &self.bias_name())?;
        tape.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        LayerNorm { name: name.into(), dim }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParameterStore<T>) {
        store.insert(join(&self.name, "gamma"), Tensor::ones(&[self.dim]));
        store.insert(join(&self.name, "beta"), Tensor::zeros(&[self.dim]));
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Bound<'_, T>, x: Var) -> Result<Var> {
        let g = p.var(tape, &join(&self.name, "gamma"))?;
        let b = p.var(tape, &join(&self.name, "beta"))?;
        tape.layer_norm(x, g, b, T::lit(1e-5))
    }
}

/// Multi-head attention with learned query/key/value/output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub name: String,
    pub dim: usize,
    pub heads: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl MultiHeadAttention {
    pub fn new(name: impl Into<String>, dim: usize, heads: usize) -> Self {
        let name = name.into();
        MultiHeadAttention {
            q: Linear::new(join(&name, "q"), dim, dim),
            k: Linear::new(join(&name, "k"), dim, dim),
            v: Linear::new(join(&name, "v"), dim, dim),
            o: Linear::new(join(&name, "o"), dim, dim),
            name,
            dim,
            heads,
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParameterStore<T>, rng: &mut R) {
        for l in [&self.q, &self.k, &self.v, &self.o] {
            l.init(store, rng);
        }
    }

    /// `query: [B, L, C]` attends over `context: [B, S, C]` (keys and values).
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &mut Bound<'_, T>, query: Var, context: Var) -> Result<Var> {
        let q = self.q.forward(tape, p, query)?;
        let k = self.k.forward(tape, p, context)?;
        let v = self.v.forward(tape, p, context)?;
        let a = tape.attention(q, k, v, self.heads)?;
        self.o.forward(tape, p, a)
    }

    /// Attention weights `[B, heads, L, S]` for the given inputs.
    pub fn weights<T: Scalar>(&self, store: &ParameterStore<T>, query: &Tensor<T>, context: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut p = Bound::frozen(store);
        let qi = tape.constant(query.clone());
        let ci = tape.constant(context.clone());
        let q = self.q.forward(&mut tape, &mut p, qi)?;
        let k = self.k.forward(&mut tape, &mut p, ci)?;
        let v = self.v.forward(&mut tape, &mut p, ci)?;
        let (_, probs) = crate::ops::scaled_dot_product(tape.value(q), tape.value(k), tape.value(v), self.heads)?;
        Ok(probs)
    }
}
