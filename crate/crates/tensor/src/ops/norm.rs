use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Normalize each contiguous `len`-element segment, then apply the per-element
/// affine `gamma[aff(i)] * xhat + beta[aff(i)]`. Returns (y, xhat, rstd per segment).
fn normalize_segments<T: Scalar>(
    x: &[T],
    len: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
    aff: impl Fn(usize) -> usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let inv = T::one() / T::from_usize_lossy(len);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstds = Vec::with_capacity(x.len() / len);
    for (s, seg) in x.chunks(len).enumerate() {
        let mean = seg.iter().copied().sum::<T>() * inv;
        let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv;
        let rstd = T::one() / (var + eps).sqrt();
        rstds.push(rstd);
        for (j, &v) in seg.iter().enumerate() {
            let i = s * len + j;
            let xh = (v - mean) * rstd;
            xhat[i] = xh;
            let a = aff(i);
            y[i] = gamma[a] * xh + beta[a];
        }
    }
    (y, xhat, rstds)
}

/// Backward of [`normalize_segments`]: gradient w.r.t. x, gamma and beta.
#[allow(clippy::too_many_arguments)]
fn normalize_segments_grad<T: Scalar>(
    gy: &[T],
    xhat: &[T],
    rstds: &[T],
    len: usize,
    gamma: &[T],
    n_aff: usize,
    aff: impl Fn(usize) -> usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let inv = T::one() / T::from_usize_lossy(len);
    let mut gx = vec![T::zero(); gy.len()];
    let mut gg = vec![T::zero(); n_aff];
    let mut gb = vec![T::zero(); n_aff];
    for (s, &rstd) in rstds.iter().enumerate() {
        let base = s * len;
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for j in 0..len {
            let i = base + j;
            let a = aff(i);
            gg[a] += gy[i] * xhat[i];
            gb[a] += gy[i];
            let d = gy[i] * gamma[a];
            sum_d += d;
            sum_dx += d * xhat[i];
        }
        let (md, mdx) = (sum_d * inv, sum_dx * inv);
        for j in 0..len {
            let i = base + j;
            let d = gy[i] * gamma[aff(i)];
            gx[i] = rstd * (d - md - xhat[i] * mdx);
        }
    }
    (gx, gg, gb)
}

impl<T: Scalar> Tape<T> {
    /// Group normalization of `[N, C, H, W]` with per-channel affine.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: T) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if groups == 0 || c % groups != 0 {
            return Err(TensorError::invalid("group_norm", format!("{c} channels not divisible into {groups} groups")));
        }
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(TensorError::shape("group_norm affine", &[c], self.shape(p)));
            }
        }
        let hw = h * w;
        let len = (c / groups) * hw;
        let chan = move |i: usize| (i / hw) % c;
        let (y, xhat, rstds) = normalize_segments(
            self.value(x).data(),
            len,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
            chan,
        );
        let out = Tensor::from_vec(&[n, c, h, w], y)?;
        Ok(self.push_op(out, &[x, gamma, beta], move |args| {
            let (gx, gg, gb) =
                normalize_segments_grad(args.grad.data(), &xhat, &rstds, len, args.inputs[1].data(), c, chan);
            vec![
                args.needs[0].then(|| Tensor::from_vec(&[n, c, h, w], gx).expect("shape")),
                args.needs[1].then(|| Tensor::from_vec(&[c], gg).expect("shape")),
                args.needs[2].then(|| Tensor::from_vec(&[c], gb).expect("shape")),
            ]
        }))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| TensorError::invalid("layer_norm", "scalar input"))?;
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(TensorError::shape("layer_norm affine", &[d], self.shape(p)));
            }
        }
        let chan = move |i: usize| i % d;
        let (y, xhat, rstds) =
            normalize_segments(self.value(x).data(), d, self.value(gamma).data(), self.value(beta).data(), eps, chan);
        let out = Tensor::from_vec(&shape, y)?;
        Ok(self.push_op(out, &[x, gamma, beta], move |args| {
            let (gx, gg, gb) = normalize_segments_grad(args.grad.data(), &xhat, &rstds, d, args.inputs[1].data(), d, chan);
            vec![
                args.needs[0].then(|| Tensor::from_vec(&shape, gx).expect("shape")),
                args.needs[1].then(|| Tensor::from_vec(&[d], gg).expect("shape")),
                args.needs[2].then(|| Tensor::from_vec(&[d], gb).expect("shape")),
            ]
        }))
    }
}
