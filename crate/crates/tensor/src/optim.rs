use indexmap::IndexMap;

use crate::params::{GradStore, ParameterStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: IndexMap<String, Tensor<T>>,
    pub v: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, m: IndexMap::new(), v: IndexMap::new() }
    }

    /// One update of every parameter that has a gradient. Parameters absent
    /// from `grads` are left untouched.
    pub fn update(&mut self, params: &mut ParameterStore<T>, grads: &GradStore<T>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (T::lit(self.config.beta1), T::lit(self.config.beta2));
        let bc1 = 1.0 - self.config.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.config.beta2.powi(self.step as i32);
        let step_size = T::lit(lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let eps = T::lit(self.config.eps);
        for (name, g) in grads.iter() {
            let Some(p) = params.make_mut(name) else { continue };
            let m = self.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                *pi -= step_size * *mi / (vi.sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

/// Multiply the base rate by `factor` once every `period` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub base_lr: f64,
    pub factor: f64,
    pub period: u64,
}

impl StepDecay {
    pub fn lr_at(&self, epoch: u64) -> f64 {
        if self.period == 0 {
            return self.base_lr;
        }
        self.base_lr * self.factor.powi((epoch / self.period) as i32)
    }
}
