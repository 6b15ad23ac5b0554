use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// (outer, axis, inner) decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tape<T> {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let orig = self.shape(a).to_vec();
        Ok(self.push_op(out, &[a], move |args| vec![Some(args.grad.clone().reshape(&orig).expect("shape"))]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| TensorError::invalid("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(TensorError::invalid("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i]) {
                return Err(TensorError::shape("concat", &first, s));
            }
            sizes.push(s[axis]);
        }
        let total: usize = sizes.iter().sum();
        let (outer, _, inner) = split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &len) in parts.iter().zip(&sizes) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let out = Tensor::from_vec(&shape, data)?;
        let part_shapes: Vec<Vec<usize>> = parts.iter().map(|&p| self.shape(p).to_vec()).collect();
        Ok(self.push_op(out, parts, move |args| {
            let g = args.grad.data();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(sizes.len());
            for (k, &len) in sizes.iter().enumerate() {
                if !args.needs[k] {
                    grads.push(None);
                    offset += len;
                    continue;
                }
                let mut d = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = (o * total + offset) * inner;
                    d.extend_from_slice(&g[base..base + len * inner]);
                }
                grads.push(Some(Tensor::from_vec(&part_shapes[k], d).expect("shape")));
                offset += len;
            }
            grads
        }))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::invalid("slice", format!("{start}+{len} on axis {axis} of {shape:?}")));
        }
        let (outer, alen, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * alen + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut oshape = shape.clone();
        oshape[axis] = len;
        let out = Tensor::from_vec(&oshape, data)?;
        Ok(self.push_op(out, &[a], move |args| {
            let mut g = Tensor::zeros(&shape);
            let gd = g.data_mut();
            let src = args.grad.data();
            for o in 0..outer {
                let base = (o * alen + start) * inner;
                gd[base..base + len * inner].copy_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(g)]
        }))
    }

    /// `[B, C, H, W]` feature map to `[B, H*W, C]` token sequence.
    pub fn to_tokens(&mut self, a: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(a).dims4()?;
        let out = nchw_to_tokens(self.value(a), b, c, h * w);
        Ok(self.push_op(out, &[a], move |args| vec![Some(tokens_to_nchw(args.grad, b, c, h, w))]))
    }

    /// `[B, H*W, C]` tokens back to `[B, C, H, W]`.
    pub fn from_tokens(&mut self, a: Var, h: usize, w: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let [b, l, c] = shape[..] else {
            return Err(TensorError::invalid("from_tokens", format!("expected [B, L, C], got {shape:?}")));
        };
        if l != h * w {
            return Err(TensorError::invalid("from_tokens", format!("{l} tokens cannot form {h}x{w}")));
        }
        let out = tokens_to_nchw(self.value(a), b, c, h, w);
        Ok(self.push_op(out, &[a], move |args| vec![Some(nchw_to_tokens(args.grad, b, c, h * w))]))
    }

    /// Nearest-neighbour upsampling by integer factors.
    pub fn upsample_nearest(&mut self, a: Var, fh: usize, fw: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4()?;
        if fh == 0 || fw == 0 {
            return Err(TensorError::invalid("upsample_nearest", "zero factor"));
        }
        if fh == 1 && fw == 1 {
            return Ok(a);
        }
        let (oh, ow) = (h * fh, w * fw);
        let src = self.value(a).data();
        let mut data = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            for y in 0..oh {
                let srow = &src[p * h * w + (y / fh) * w..][..w];
                let drow = &mut data[p * oh * ow + y * ow..][..ow];
                for (x, d) in drow.iter_mut().enumerate() {
                    *d = srow[x / fw];
                }
            }
        }
        let out = Tensor::from_vec(&[n, c, oh, ow], data)?;
        Ok(self.push_op(out, &[a], move |args| {
            let g = args.grad.data();
            let mut gi = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                for y in 0..oh {
                    for x in 0..ow {
                        gi[p * h * w + (y / fh) * w + x / fw] += g[p * oh * ow + y * ow + x];
                    }
                }
            }
            vec![Some(Tensor::from_vec(&[n, c, h, w], gi).expect("shape"))]
        }))
    }
}

fn nchw_to_tokens<T: Scalar>(t: &Tensor<T>, b: usize, c: usize, l: usize) -> Tensor<T> {
    let src = t.data();
    let mut data = vec![T::zero(); b * l * c];
    for n in 0..b {
        for ch in 0..c {
            for p in 0..l {
                data[(n * l + p) * c + ch] = src[(n * c + ch) * l + p];
            }
        }
    }
    Tensor::from_vec(&[b, l, c], data).expect("shape")
}

fn tokens_to_nchw<T: Scalar>(t: &Tensor<T>, b: usize, c: usize, h: usize, w: usize) -> Tensor<T> {
    let l = h * w;
    let src = t.data();
    let mut data = vec![T::zero(); b * c * l];
    for n in 0..b {
        for p in 0..l {
            for ch in 0..c {
                data[(n * c + ch) * l + p] = src[(n * l + p) * c + ch];
            }
        }
    }
    Tensor::from_vec(&[b, c, h, w], data).expect("shape")
}
