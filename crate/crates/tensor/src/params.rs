//! Named parameter collections and their binding onto a tape.

use std::sync::Arc;

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Ordered name → tensor map. Entries are reference counted, so cloning a
/// store is a shallow snapshot and a later in-place update copies only the
/// entry being written.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore<T> {
    entries: IndexMap<String, Arc<Tensor<T>>>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.entries.insert(name.into(), Arc::new(value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|t| &**t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn get_arc(&self, name: &str) -> Option<Arc<Tensor<T>>> {
        self.entries.get(name).cloned()
    }

    /// Mutable access; detaches the entry from any snapshot sharing it.
    pub fn make_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name).map(Arc::make_mut)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), &**v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }

    /// Whether `name` in both stores points at the same allocation.
    pub fn shares_storage(&self, other: &Self, name: &str) -> bool {
        match (self.entries.get(name), other.entries.get(name)) {
            (Some(a), Some(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }

    /// Deep copy with no shared storage.
    pub fn deep_clone(&self) -> Self {
        ParameterStore {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), Arc::new((**v).clone()))).collect(),
        }
    }

    /// Largest entry-wise difference; `None` if the name sets or shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        if self.len() != other.len() {
            return None;
        }
        let mut worst = T::zero();
        for (name, a) in &self.entries {
            let b = other.entries.get(name)?;
            if a.shape() != b.shape() {
                return None;
            }
            worst = worst.max(a.max_abs_diff(b));
        }
        Some(worst)
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|t| t.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), Arc::new(v.cast()))).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    /// Parameters become gradient-accumulating leaves.
    Trainable,
    /// Parameters become constants; no gradient reaches them.
    Frozen,
}

/// A store bound onto one tape. Each name is bound at most once, so a
/// parameter used in several places (both sides of a pair) is a single leaf
/// whose gradient accumulates all uses.
pub struct Bound<'s, T> {
    store: &'s ParameterStore<T>,
    mode: Binding,
    vars: IndexMap<String, Var>,
}

impl<'s, T: Scalar> Bound<'s, T> {
    pub fn new(store: &'s ParameterStore<T>, mode: Binding) -> Self {
        Bound { store, mode, vars: IndexMap::new() }
    }

    pub fn trainable(store: &'s ParameterStore<T>) -> Self {
        Self::new(store, Binding::Trainable)
    }

    pub fn frozen(store: &'s ParameterStore<T>) -> Self {
        Self::new(store, Binding::Frozen)
    }

    pub fn mode(&self) -> Binding {
        self.mode
    }

    pub fn store(&self) -> &'s ParameterStore<T> {
        self.store
    }

    pub fn var(&mut self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let value = self.store.get_arc(name).ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        let v = match self.mode {
            Binding::Trainable => tape.leaf(value),
            Binding::Frozen => tape.constant_arc(value),
        };
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound_names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    /// Gradients of every bound parameter that received one.
    pub fn grads(&self, grads: &Gradients<T>) -> GradStore<T> {
        let mut out = IndexMap::new();
        for (name, &v) in &self.vars {
            if let Some(g) = grads.get(v) {
                out.insert(name.clone(), g.clone());
            }
        }
        GradStore { entries: out }
    }
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct GradStore<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> GradStore<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, g: Tensor<T>) {
        self.entries.insert(name.into(), g);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|t| t.all_finite())
    }
}

/// Tensor of independent `N(0, std^2)` draws.
pub fn normal_tensor<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::lit(z * std)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape")
}

/// He-normal initialisation for a weight whose fan-in is the product of all
/// axes but the first.
pub fn kaiming_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product();
    normal_tensor(rng, shape, (2.0 / fan_in.max(1) as f64).sqrt())
}

/// Glorot-normal initialisation for a `[out, in]` matrix.
pub fn xavier_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor<T> {
    let fan_out = shape[0];
    let fan_in: usize = shape[1..].iter().product();
    normal_tensor(rng, shape, (2.0 / (fan_in + fan_out).max(1) as f64).sqrt())
}
