//! Central finite differences against the tape's analytic gradients, op by op.

use std::sync::Arc;

use bimg_tensor::{Conv2dOpts, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn eval(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.value(out).item()
}

fn check(inputs: Vec<Tensor<f64>>, build: &Build) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(Arc::new(t.clone()))).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let eps = 1e-6;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for i in 0..input.numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += eps;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= eps;
            let fd = (eval(&plus, build) - eval(&minus, build)) / (2.0 * eps);
            let a = analytic.data()[i];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
            assert!(err < 1e-5, "input {k} entry {i}: analytic {a} vs fd {fd}");
        }
    }
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn project(tape: &mut Tape<f64>, y: Var) -> Var {
    let n = tape.value(y).numel();
    let shape = tape.shape(y).to_vec();
    let w = Tensor::from_vec(&shape, (0..n).map(|i| ((i * 7919) % 23) as f64 / 11.0 - 1.0).collect()).unwrap();
    let wv = tape.constant(w);
    let p = tape.mul(y, wv).unwrap();
    tape.sum_all(p)
}

#[test]
fn conv2d_strided_padded_with_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = vec![random(&mut rng, &[2, 3, 6, 5]), random(&mut rng, &[4, 3, 3, 3]), random(&mut rng, &[4])];
    check(inputs, &|t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), Conv2dOpts { stride: 2, padding: 1 }).unwrap();
        project(t, y)
    });
}

#[test]
fn conv2d_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = vec![random(&mut rng, &[2, 4, 3, 2]), random(&mut rng, &[3, 4, 1, 1])];
    check(inputs, &|t, v| {
        let y = t.conv2d(v[0], v[1], None, Conv2dOpts::default()).unwrap();
        project(t, y)
    });
}

#[test]
fn group_norm_and_layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = vec![random(&mut rng, &[2, 4, 3, 2]), random(&mut rng, &[4]), random(&mut rng, &[4])];
    check(inputs, &|t, v| {
        let y = t.group_norm(v[0], v[1], v[2], 2, 1e-5).unwrap();
        project(t, y)
    });
    let inputs = vec![random(&mut rng, &[3, 5]), random(&mut rng, &[5]), random(&mut rng, &[5])];
    check(inputs, &|t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
        project(t, y)
    });
}

#[test]
fn attention_all_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = vec![random(&mut rng, &[2, 3, 4]), random(&mut rng, &[2, 5, 4]), random(&mut rng, &[2, 5, 4])];
    check(inputs, &|t, v| {
        let y = t.attention(v[0], v[1], v[2], 2).unwrap();
        project(t, y)
    });
}

#[test]
fn linear_pool_and_pointwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![random(&mut rng, &[2, 3, 4, 4]), random(&mut rng, &[2, 3]), random(&mut rng, &[2])];
    check(inputs, &|t, v| {
        let p = t.max_pool2d(v[0], 3, 2, 1).unwrap();
        let r = t.relu(p);
        let g = t.global_avg_pool(r).unwrap();
        let y = t.linear(g, v[1], Some(v[2])).unwrap();
        let s = t.sigmoid(y);
        project(t, s)
    });
}

#[test]
fn shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs = vec![random(&mut rng, &[2, 3, 2, 2]), random(&mut rng, &[2, 1, 2, 2]), random(&mut rng, &[4, 3])];
    check(inputs, &|t, v| {
        let c = t.concat(&[v[0], v[1]], 1).unwrap();
        let s = t.slice(c, 1, 1, 3).unwrap();
        let up = t.upsample_nearest(s, 2, 1).unwrap();
        let tok = t.to_tokens(s).unwrap();
        let tok = t.add_broadcast0(tok, v[2]).unwrap();
        let back = t.from_tokens(tok, 2, 2).unwrap();
        let a = project(t, up);
        let b = project(t, back);
        t.add(a, b).unwrap()
    });
}

#[test]
fn losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = vec![random(&mut rng, &[6]), random(&mut rng, &[6])];
    check(inputs, &|t, v| {
        let l = t.bce_with_logits(v[0], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let d = t.sub(v[0], v[1]).unwrap();
        let a = t.abs(d);
        let m = t.mean_all(a);
        let m = t.scale(m, 0.5);
        let s = t.add(l, m).unwrap();
        t.add_scalar(s, 1.0)
    });
}

#[test]
fn unused_inputs_get_no_gradient() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(Arc::new(Tensor::ones(&[2])));
    let b = tape.leaf(Arc::new(Tensor::ones(&[2])));
    let c = tape.constant(Tensor::ones(&[2]));
    let y = tape.mul(a, c).unwrap();
    let l = tape.sum_all(y);
    let g = tape.backward(l).unwrap();
    assert!(g.get(a).is_some());
    assert!(g.get(b).is_none());
    assert!(g.get(c).is_none());
    assert!(!tape.requires_grad(c));
}
