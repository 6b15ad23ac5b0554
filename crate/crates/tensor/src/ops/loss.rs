use crate::error::{Result, TensorError};
use crate::ops::elementwise::sigmoid;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Logits are clamped to this magnitude before the loss.
pub const LOGIT_CLAMP: f64 = 15.0;

/// Numerically stable binary cross-entropy of one logit against a target in {0, 1}.
pub fn bce_from_logit<T: Scalar>(z: T, y: T) -> T {
    let lim = T::lit(LOGIT_CLAMP);
    let z = z.max(-lim).min(lim);
    z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln()
}

impl<T: Scalar> Tape<T> {
    /// Mean binary cross-entropy over all elements of `logits`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let n = self.value(logits).numel();
        if targets.len() != n {
            return Err(TensorError::shape("bce_with_logits", &[n], &[targets.len()]));
        }
        let inv = T::one() / T::from_usize_lossy(n.max(1));
        let total: T = self.value(logits).data().iter().zip(targets).map(|(&z, &y)| bce_from_logit(z, y)).sum();
        let targets = targets.to_vec();
        let shape = self.shape(logits).to_vec();
        Ok(self.push_op(Tensor::scalar(total * inv), &[logits], move |args| {
            let g = args.grad.item() * inv;
            let lim = T::lit(LOGIT_CLAMP);
            let data = args.inputs[0]
                .data()
                .iter()
                .zip(&targets)
                .map(|(&z, &y)| if z.abs() < lim { g * (sigmoid(z) - y) } else { T::zero() })
                .collect();
            vec![Some(Tensor::from_vec(&shape, data).expect("shape"))]
        }))
    }
}
