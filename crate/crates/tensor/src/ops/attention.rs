use crate::error::{Result, TensorError};
use crate::linalg::{gemm, Layout};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Multi-head scaled dot-product attention on projected inputs.
///
/// `q: [B, L, C]`, `k, v: [B, S, C]`; each of the `heads` heads sees a
/// contiguous `C / heads` slice of the channels. Returns the attended values
/// `[B, L, C]` and the attention weights `[B, heads, L, S]`.
pub fn scaled_dot_product<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (b, l, s, c) = check(q, k, v, heads)?;
    let d = c / heads;
    let scale = T::one() / T::from_usize_lossy(d).sqrt();
    let mut probs = vec![T::zero(); b * heads * l * s];
    let mut out = vec![T::zero(); b * l * c];
    for bi in 0..b {
        for hd in 0..heads {
            let p_off = (bi * heads + hd) * l * s;
            let qv = Layout::strided(bi * l * c + hd * d, l, d, c);
            let kv = Layout::strided(bi * s * c + hd * d, s, d, c);
            let pv = Layout::row_major(l, s).at(p_off);
            gemm(scale, q.data(), qv, k.data(), kv.t(), T::zero(), &mut probs, pv);
            for row in probs[p_off..p_off + l * s].chunks_mut(s) {
                softmax_inplace(row);
            }
            let vv = Layout::strided(bi * s * c + hd * d, s, d, c);
            let ov = Layout::strided(bi * l * c + hd * d, l, d, c);
            gemm(T::one(), &probs, pv, v.data(), vv, T::zero(), &mut out, ov);
        }
    }
    Ok((Tensor::from_vec(&[b, l, c], out)?, Tensor::from_vec(&[b, heads, l, s], probs)?))
}

fn check<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize) -> Result<(usize, usize, usize, usize)> {
    let [b, l, c] = q.shape()[..] else {
        return Err(TensorError::invalid("attention", format!("query must be [B, L, C], got {:?}", q.shape())));
    };
    let [kb, s, kc] = k.shape()[..] else {
        return Err(TensorError::invalid("attention", format!("key must be [B, S, C], got {:?}", k.shape())));
    };
    if kb != b || kc != c || v.shape() != k.shape() {
        return Err(TensorError::shape("attention", &[b, s, c], v.shape()));
    }
    if heads == 0 || c % heads != 0 {
        return Err(TensorError::invalid("attention", format!("{c} channels not divisible by {heads} heads")));
    }
    Ok((b, l, s, c))
}

fn softmax_inplace<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

impl<T: Scalar> Tape<T> {
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (out, probs) = scaled_dot_product(self.value(q), self.value(k), self.value(v), heads)?;
        let (b, l, s, c) = check(self.value(q), self.value(k), self.value(v), heads)?;
        let d = c / heads;
        let scale = T::one() / T::from_usize_lossy(d).sqrt();
        let probs = probs.into_vec();
        Ok(self.push_op(out, &[q, k, v], move |args| {
            let (qd, kd, vd) = (args.inputs[0].data(), args.inputs[1].data(), args.inputs[2].data());
            let go = args.grad.data();
            let mut gq = vec![T::zero(); b * l * c];
            let mut gk = vec![T::zero(); b * s * c];
            let mut gv = vec![T::zero(); b * s * c];
            let mut dp = vec![T::zero(); l * s];
            for bi in 0..b {
                for hd in 0..heads {
                    let p_off = (bi * heads + hd) * l * s;
                    let pv = Layout::row_major(l, s).at(p_off);
                    let lq = Layout::strided(bi * l * c + hd * d, l, d, c);
                    let ls = Layout::strided(bi * s * c + hd * d, s, d, c);
                    // dV = P^T dO
                    gemm(T::one(), &probs, pv.t(), go, lq, T::zero(), &mut gv, ls);
                    // dP = dO V^T
                    gemm(T::one(), go, lq, vd, ls.t(), T::zero(), &mut dp, Layout::row_major(l, s));
                    // dS = P * (dP - rowsum(dP * P)), folded with the score scale
                    for (prow, drow) in probs[p_off..p_off + l * s].chunks(s).zip(dp.chunks_mut(s)) {
                        let dot: T = prow.iter().zip(drow.iter()).map(|(&p, &g)| p * g).sum();
                        for (g, &p) in drow.iter_mut().zip(prow) {
                            *g = p * (*g - dot) * scale;
                        }
                    }
                    gemm(T::one(), &dp, Layout::row_major(l, s), kd, ls, T::zero(), &mut gq, lq);
                    gemm(T::one(), &dp, Layout::row_major(l, s).t(), qd, lq, T::zero(), &mut gk, ls);
                }
            }
            vec![
                args.needs[0].then(|| Tensor::from_vec(&[b, l, c], gq).expect("shape")),
                args.needs[1].then(|| Tensor::from_vec(&[b, s, c], gk).expect("shape")),
                args.needs[2].then(|| Tensor::from_vec(&[b, s, c], gv).expect("shape")),
            ]
        }))
    }
}
