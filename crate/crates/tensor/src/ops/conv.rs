use crate::error::{Result, TensorError};
use crate::linalg::{gemm, Layout};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOpts {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dOpts {
    fn default() -> Self {
        Conv2dOpts { stride: 1, padding: 0 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geom, cols: &mut [T]) {
    let l = g.oh * g.ow;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * l;
                let dst = &mut cols[row..row + l];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { srow[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geom, x: &mut [T]) {
    let l = g.oh * g.ow;
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * l;
                let src = &cols[row..row + l];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let prow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            prow[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// 2-D cross-correlation of `x: [N, C, H, W]` with `w: [O, C, KH, KW]`
    /// plus optional bias `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, opts: Conv2dOpts) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (o, wc, kh, kw) = self.value(w).dims4()?;
        if wc != c {
            return Err(TensorError::shape("conv2d", &[o, c, kh, kw], self.shape(w)));
        }
        if let Some(b) = bias {
            if self.shape(b) != [o] {
                return Err(TensorError::shape("conv2d bias", &[o], self.shape(b)));
            }
        }
        let s = opts.stride.max(1);
        let p = opts.padding;
        if h + 2 * p < kh || wd + 2 * p < kw {
            return Err(TensorError::invalid("conv2d", format!("kernel {kh}x{kw} larger than padded input {h}x{wd}")));
        }
        let g = Geom { c, h, w: wd, kh, kw, oh: (h + 2 * p - kh) / s + 1, ow: (wd + 2 * p - kw) / s + 1, stride: s, pad: p };
        let (k, l) = (g.k(), g.oh * g.ow);

        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); n * o * l];
        let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); k * l] };
        for i in 0..n {
            let xi = &xv[i * c * h * wd..(i + 1) * c * h * wd];
            let src: &[T] = if g.pointwise() {
                xi
            } else {
                im2col(xi, &g, &mut cols);
                &cols
            };
            gemm(T::one(), wv, Layout::row_major(o, k), src, Layout::row_major(k, l), T::zero(), &mut out, Layout::row_major(o, l).at(i * o * l));
        }
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for (idx, chunk) in out.chunks_mut(l).enumerate() {
                let bo = bv[idx % o];
                chunk.iter_mut().for_each(|v| *v += bo);
            }
        }
        let out = Tensor::from_vec(&[n, o, g.oh, g.ow], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push_op(out, &inputs, move |args| {
            let gy = args.grad.data();
            let xv = args.inputs[0].data();
            let wv = args.inputs[1].data();
            let mut gx = args.needs[0].then(|| vec![T::zero(); n * c * h * wd]);
            let mut gw = args.needs[1].then(|| vec![T::zero(); o * k]);
            let mut cols = if g.pointwise() { Vec::new() } else { vec![T::zero(); k * l] };
            let mut dcols = if g.pointwise() { Vec::new() } else { vec![T::zero(); k * l] };
            for i in 0..n {
                let gyi = Layout::row_major(o, l).at(i * o * l);
                if let Some(gw) = gw.as_mut() {
                    let xi = &xv[i * c * h * wd..(i + 1) * c * h * wd];
                    let src: &[T] = if g.pointwise() {
                        xi
                    } else {
                        im2col(xi, &g, &mut cols);
                        &cols
                    };
                    gemm(T::one(), gy, gyi, src, Layout::row_major(k, l).t(), T::one(), gw, Layout::row_major(o, k));
                }
                if let Some(gx) = gx.as_mut() {
                    if g.pointwise() {
                        let off = i * c * h * wd;
                        gemm(T::one(), wv, Layout::row_major(o, k).t(), gy, gyi, T::zero(), gx, Layout::row_major(k, l).at(off));
                    } else {
                        gemm(T::one(), wv, Layout::row_major(o, k).t(), gy, gyi, T::zero(), &mut dcols, Layout::row_major(k, l));
                        col2im(&dcols, &g, &mut gx[i * c * h * wd..(i + 1) * c * h * wd]);
                    }
                }
            }
            let mut grads = vec![
                gx.map(|d| Tensor::from_vec(&[n, c, h, wd], d).expect("shape")),
                gw.map(|d| Tensor::from_vec(&[o, c, kh, kw], d).expect("shape")),
            ];
            if args.inputs.len() == 3 {
                grads.push(args.needs[2].then(|| {
                    let mut gb = vec![T::zero(); o];
                    for (idx, chunk) in gy.chunks(l).enumerate() {
                        gb[idx % o] += chunk.iter().copied().sum::<T>();
                    }
                    Tensor::from_vec(&[o], gb).expect("shape")
                }));
            }
            grads
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, s: usize, p: usize) -> Tensor<f64> {
        let (n, c, h, wd) = x.dims4().unwrap();
        let (o, _, kh, kw) = w.dims4().unwrap();
        let oh = (h + 2 * p - kh) / s + 1;
        let ow = (wd + 2 * p - kw) / s + 1;
        let mut out = vec![0.0; n * o * oh * ow];
        for b in 0..n {
            for oc in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (y * s + i) as isize - p as isize;
                                    let ix = (xx * s + j) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((b * c + ic) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((oc * c + ic) * kh + i) * kw + j];
                                }
                            }
                        }
                        out[((b * o + oc) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        Tensor::from_vec(&[n, o, oh, ow], out).unwrap()
    }

    fn seq(shape: &[usize], f: impl Fn(usize) -> f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn matches_direct_convolution() {
        for &(s, p, k) in &[(1, 0, 1), (1, 1, 3), (2, 1, 3), (2, 3, 7), (2, 0, 1)] {
            let x = seq(&[2, 3, 9, 7], |i| ((i * 37) % 11) as f64 * 0.1 - 0.5);
            let w = seq(&[4, 3, k, k], |i| ((i * 13) % 7) as f64 * 0.2 - 0.6);
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let wv = tape.constant(w.clone());
            let y = tape.conv2d(xv, wv, None, Conv2dOpts { stride: s, padding: p }).unwrap();
            let want = naive_conv(&x, &w, s, p);
            assert_eq!(tape.value(y).shape(), want.shape());
            assert!(tape.value(y).max_abs_diff(&want) < 1e-12, "s={s} p={p} k={k}");
        }
    }
}
