use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn same_shape<T: Scalar>(tape: &Tape<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(TensorError::shape(op, tape.shape(a), tape.shape(b)));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push_op(out, &[a, b], |args| {
            vec![args.needs[0].then(|| args.grad.clone()), args.needs[1].then(|| args.grad.clone())]
        }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push_op(out, &[a, b], |args| {
            vec![args.needs[0].then(|| args.grad.clone()), args.needs[1].then(|| args.grad.map(|g| -g))]
        }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push_op(out, &[a, b], |args| {
            let ga = args.needs[0].then(|| args.grad.zip_map(args.inputs[1], |g, y| g * y).expect("shape"));
            let gb = args.needs[1].then(|| args.grad.zip_map(args.inputs[0], |g, x| g * x).expect("shape"));
            vec![ga, gb]
        }))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push_op(out, &[a], move |args| vec![Some(args.grad.map(|g| g * s))])
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.push_op(out, &[a], |args| vec![Some(args.grad.clone())])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push_op(out, &[a], |args| {
            vec![Some(args.grad.zip_map(args.output, |g, y| if y > T::zero() { g } else { T::zero() }).expect("shape"))]
        })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push_op(out, &[a], |args| {
            vec![Some(args.grad.zip_map(args.output, |g, y| g * y * (T::one() - y)).expect("shape"))]
        })
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.abs());
        self.push_op(out, &[a], |args| {
            vec![Some(args.grad.zip_map(args.inputs[0], |g, x| g * sign(x)).expect("shape"))]
        })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let shape = self.shape(a).to_vec();
        self.push_op(out, &[a], move |args| vec![Some(Tensor::full(&shape, args.grad.item()))])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = T::from_usize_lossy(self.value(a).numel().max(1));
        let s = self.sum_all(a);
        self.scale(s, T::one() / n)
    }

    /// `x[b, ...] + p[...]` for every leading index `b`.
    pub fn add_broadcast0(&mut self, x: Var, p: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || xs[1..] != *self.shape(p) {
            return Err(TensorError::shape("add_broadcast0", &xs[1..], self.shape(p)));
        }
        let inner = self.value(p).numel();
        let pv = self.value(p).data().to_vec();
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(inner) {
            for (o, &q) in chunk.iter_mut().zip(&pv) {
                *o += q;
            }
        }
        let pshape = self.shape(p).to_vec();
        Ok(self.push_op(out, &[x, p], move |args| {
            let gp = args.needs[1].then(|| {
                let mut acc = vec![T::zero(); inner];
                for chunk in args.grad.data().chunks(inner) {
                    for (a, &g) in acc.iter_mut().zip(chunk) {
                        *a += g;
                    }
                }
                Tensor::from_vec(&pshape, acc).expect("shape")
            });
            vec![args.needs[0].then(|| args.grad.clone()), gp]
        }))
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
