use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// Max pooling with implicit `-inf` padding.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if kernel == 0 || stride == 0 || padding >= kernel || h + 2 * padding < kernel || w + 2 * padding < kernel {
            return Err(TensorError::invalid("max_pool2d", format!("kernel {kernel}, stride {stride}, pad {padding} on {h}x{w}")));
        }
        let oh = (h + 2 * padding - kernel) / stride + 1;
        let ow = (w + 2 * padding - kernel) / stride + 1;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        let mut arg = vec![0usize; n * c * oh * ow];
        for p in 0..n * c {
            let plane = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = plane;
                    for ki in 0..kernel {
                        let iy = (oy * stride + ki) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..kernel {
                            let ix = (ox * stride + kj) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = plane + iy as usize * w + ix as usize;
                            if src[i] > best {
                                best = src[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (p * oh + oy) * ow + ox;
                    out[o] = best;
                    arg[o] = best_i;
                }
            }
        }
        let out = Tensor::from_vec(&[n, c, oh, ow], out)?;
        Ok(self.push_op(out, &[x], move |args| {
            let mut gx = vec![T::zero(); n * c * h * w];
            for (&i, &g) in arg.iter().zip(args.grad.data()) {
                gx[i] += g;
            }
            vec![Some(Tensor::from_vec(&[n, c, h, w], gx).expect("shape"))]
        }))
    }

    /// `[N, C, H, W]` to `[N, C]` by spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let inv = T::one() / T::from_usize_lossy(hw);
        let data: Vec<T> = self.value(x).data().chunks(hw).map(|s| s.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::from_vec(&[n, c], data)?;
        Ok(self.push_op(out, &[x], move |args| {
            let mut gx = Vec::with_capacity(n * c * hw);
            for &g in args.grad.data() {
                gx.extend(std::iter::repeat_n(g * inv, hw));
            }
            vec![Some(Tensor::from_vec(&[n, c, h, w], gx).expect("shape"))]
        }))
    }
}
