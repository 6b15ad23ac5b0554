use crate::error::{Result, TensorError};
use crate::linalg::{gemm, Layout};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

impl<T: Scalar> Tape<T> {
    /// `y = x W^T + b` over the last axis of `x`; `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let din = *xs.last().ok_or_else(|| TensorError::invalid("linear", "scalar input"))?;
        let ws = self.shape(w).to_vec();
        let [dout, win] = ws[..] else {
            return Err(TensorError::invalid("linear", format!("weight must be 2-D, got {ws:?}")));
        };
        if win != din {
            return Err(TensorError::shape("linear", &[dout, din], &ws));
        }
        if let Some(b) = bias {
            if self.shape(b) != [dout] {
                return Err(TensorError::shape("linear bias", &[dout], self.shape(b)));
            }
        }
        let m = self.value(x).numel() / din;
        let mut out = vec![T::zero(); m * dout];
        gemm(
            T::one(),
            self.value(x).data(),
            Layout::row_major(m, din),
            self.value(w).data(),
            Layout::row_major(dout, din).t(),
            T::zero(),
            &mut out,
            Layout::row_major(m, dout),
        );
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.chunks_mut(dout) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let mut oshape = xs.clone();
        *oshape.last_mut().expect("nonempty") = dout;
        let out = Tensor::from_vec(&oshape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push_op(out, &inputs, move |args| {
            let gy = args.grad.data();
            let gx = args.needs[0].then(|| {
                let mut gx = vec![T::zero(); m * din];
                gemm(T::one(), gy, Layout::row_major(m, dout), args.inputs[1].data(), Layout::row_major(dout, din), T::zero(), &mut gx, Layout::row_major(m, din));
                Tensor::from_vec(&xs, gx).expect("shape")
            });
            let gw = args.needs[1].then(|| {
                let mut gw = vec![T::zero(); dout * din];
                gemm(T::one(), gy, Layout::row_major(m, dout).t(), args.inputs[0].data(), Layout::row_major(m, din), T::zero(), &mut gw, Layout::row_major(dout, din));
                Tensor::from_vec(&[dout, din], gw).expect("shape")
            });
            let mut grads = vec![gx, gw];
            if args.inputs.len() == 3 {
                grads.push(args.needs[2].then(|| {
                    let mut gb = vec![T::zero(); dout];
                    for row in gy.chunks(dout) {
                        for (a, &g) in gb.iter_mut().zip(row) {
                            *a += g;
                        }
                    }
                    Tensor::from_vec(&[dout], gb).expect("shape")
                }));
            }
            grads
        }))
    }
}
