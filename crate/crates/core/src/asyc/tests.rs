use bimg_tensor::ops::scaled_dot_product;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::grid::Plane;
use crate::imgio::{GrayImage, Laterality, View};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(seed: u64, shape: &[usize]) -> Tensor<f64> {
    normal_tensor(&mut rng(seed), shape, 1.0)
}

fn tiny() -> (Asyc, ParameterStore<f64>) {
    let model = Asyc::new(AsycConfig::tiny()).unwrap();
    let store = model.init(&mut rng(1)).unwrap();
    (model, store)
}

fn random_pair(seed: u64, h: usize, w: usize) -> BilateralPair<f64> {
    let mut r = rng(seed);
    let mut img = |lat| {
        let p = Plane::from_fn(h, w, |_, _| r.gen::<f64>());
        GrayImage::new(p, lat, View::Cc).unwrap()
    };
    let right = img(Laterality::Right);
    let left = img(Laterality::Left);
    BilateralPair::new("p", right, left, true, false).unwrap()
}

fn run_block(block: &AsyBlock, store: &ParameterStore<f64>, tokens: &Tensor<f64>, cross: bool) -> Tensor<f64> {
    let mut tape = Tape::new();
    let mut p = Bound::frozen(store);
    let t = tape.constant(tokens.clone());
    let y = block.forward(&mut tape, &mut p, t, cross).unwrap();
    tape.value(y).clone()
}

fn swap_rows(t: &Tensor<f64>) -> Tensor<f64> {
    let b = t.shape()[0] / 2;
    Tensor::cat0(&[&t.narrow0(b, b).unwrap(), &t.narrow0(0, b).unwrap()]).unwrap()
}

#[test]
fn default_encoder_reduces_by_32() {
    let enc = Encoder::new(EncoderConfig::default()).unwrap();
    let mut store = ParameterStore::<f32>::new();
    enc.init(&mut store, &mut rng(0));
    let mut tape = Tape::new();
    let mut p = Bound::frozen(&store);
    let x = tape.constant(normal_tensor(&mut rng(2), &[1, 1, 128, 64], 1.0));
    let f = enc.forward(&mut tape, &mut p, x).unwrap();
    assert_eq!(tape.shape(f.last()), &[1, 512, 4, 2]);
}

#[test]
fn encoder_is_shared_and_input_sensitive() {
    let (model, store) = tiny();
    let a = random_tensor(3, &[1, 1, 16, 8]);
    let b = random_tensor(4, &[1, 1, 16, 8]);
    let x = Tensor::cat0(&[&a, &a, &b]).unwrap();
    let mut tape = Tape::new();
    let mut p = Bound::frozen(&store);
    let xv = tape.constant(x);
    let f = model.encoder.forward(&mut tape, &mut p, xv).unwrap();
    let out = tape.value(f.last());
    let n = out.numel() / 3;
    assert_eq!(out.data()[..n], out.data()[n..2 * n]);
    assert_ne!(out.data()[..n], out.data()[2 * n..]);
}

#[test]
fn attention_single_token_and_row_sums() {
    let q = random_tensor(5, &[2, 1, 4]);
    let k = random_tensor(6, &[2, 1, 4]);
    let v = random_tensor(7, &[2, 1, 4]);
    let (out, probs) = scaled_dot_product(&q, &k, &v, 2).unwrap();
    assert!(probs.data().iter().all(|&p| p == 1.0));
    assert_eq!(out, v);
    let q = random_tensor(8, &[2, 5, 4]);
    let k = random_tensor(9, &[2, 7, 4]);
    let v = random_tensor(10, &[2, 7, 4]);
    let (_, probs) = scaled_dot_product(&q, &k, &v, 2).unwrap();
    for row in probs.data().chunks(7) {
        assert!(row.iter().all(|&p| p >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn attention_matches_hand_computation() {
    // One head, two tokens of width 2.
    let q = Tensor::from_vec(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let k = Tensor::from_vec(&[1, 2, 2], vec![1.0, 0.0, 1.0, 1.0]).unwrap();
    let v = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let (out, probs) = scaled_dot_product(&q, &k, &v, 1).unwrap();
    let s = 2f64.sqrt();
    for (i, scores) in [[1.0 / s, 1.0 / s], [0.0, 1.0 / s]].iter().enumerate() {
        let e: Vec<f64> = scores.iter().map(|z| z.exp()).collect();
        let z = e[0] + e[1];
        let p = [e[0] / z, e[1] / z];
        assert!((probs.data()[2 * i] - p[0]).abs() < 1e-15);
        let expect = [p[0] * 1.0 + p[1] * 3.0, p[0] * 2.0 + p[1] * 4.0];
        assert!((out.data()[2 * i] - expect[0]).abs() < 1e-14);
        assert!((out.data()[2 * i + 1] - expect[1]).abs() < 1e-14);
    }
}

#[test]
fn block_symmetry_and_swap_equivariance() {
    let block = AsyBlock::new("blk", 8, 2, 16).unwrap();
    let mut store = ParameterStore::new();
    block.init(&mut store, &mut rng(11));
    let f = random_tensor(12, &[1, 2, 8]);
    let same = run_block(&block, &store, &Tensor::cat0(&[&f, &f]).unwrap(), true);
    assert_eq!(same.narrow0(0, 1).unwrap(), same.narrow0(1, 1).unwrap());
    let x = random_tensor(13, &[4, 2, 8]);
    let y = run_block(&block, &store, &x, true);
    let ys = run_block(&block, &store, &swap_rows(&x), true);
    assert_eq!(ys, swap_rows(&y));
}

#[test]
fn block_without_cross_attention_ignores_the_other_side() {
    let block = AsyBlock::new("blk", 8, 2, 16).unwrap();
    let mut store = ParameterStore::new();
    block.init(&mut store, &mut rng(14));
    let r = random_tensor(15, &[1, 2, 8]);
    let l1 = random_tensor(16, &[1, 2, 8]);
    let l2 = random_tensor(17, &[1, 2, 8]);
    let a = run_block(&block, &store, &Tensor::cat0(&[&r, &l1]).unwrap(), false);
    let b = run_block(&block, &store, &Tensor::cat0(&[&r, &l2]).unwrap(), false);
    assert_eq!(a.narrow0(0, 1).unwrap(), b.narrow0(0, 1).unwrap());
    let a = run_block(&block, &store, &Tensor::cat0(&[&r, &l1]).unwrap(), true);
    let b = run_block(&block, &store, &Tensor::cat0(&[&r, &l2]).unwrap(), true);
    assert_ne!(a.narrow0(0, 1).unwrap(), b.narrow0(0, 1).unwrap());
}

#[test]
fn transformer_stack_is_swap_equivariant_and_shape_preserving() {
    let mut cfg = AsycConfig::tiny();
    cfg.num_blocks = 3;
    let model = Asyc::new(cfg).unwrap();
    let store: ParameterStore<f64> = model.init(&mut rng(18)).unwrap();
    let f = random_tensor(19, &[4, 8, 2, 1]);
    let run = |x: &Tensor<f64>| {
        let mut tape = Tape::new();
        let mut p = Bound::frozen(&store);
        let v = tape.constant(x.clone());
        let y = model.transform(&mut tape, &mut p, v).unwrap();
        tape.value(y).clone()
    };
    let y = run(&f);
    assert_eq!(y.shape(), f.shape());
    let diff = run(&swap_rows(&f)).max_abs_diff(&swap_rows(&y));
    assert!(diff <= 1e-5);
}

#[test]
fn one_block_stack_equals_the_block() {
    let (model, store) = tiny();
    let f = random_tensor(20, &[2, 8, 2, 1]);
    let mut tape = Tape::new();
    let mut p = Bound::frozen(&store);
    let v = tape.constant(f.clone());
    let y = model.transform(&mut tape, &mut p, v).unwrap();
    let tok = tape.to_tokens(v).unwrap();
    let pos = p.var(&mut tape, POS_EMBEDDING).unwrap();
    let tok = tape.add_broadcast0(tok, pos).unwrap();
    let b = model.blocks[0].forward(&mut tape, &mut p, tok, true).unwrap();
    let b = tape.from_tokens(b, 2, 1).unwrap();
    assert_eq!(tape.value(y), tape.value(b));
}

#[test]
fn heads_match_hand_values() {
    let (model, mut store) = tiny();
    let mut tape = Tape::new();
    let zero = tape.constant(Tensor::zeros(&[1, 8, 2, 1]));
    *store.make_mut("head.ab.b").unwrap() = Tensor::zeros(&[1]);
    let z = {
        let mut p = Bound::frozen(&store);
        model.abnormal_logits(&mut tape, &mut p, zero).unwrap()
    };
    assert_eq!(sigmoid(tape.value(z).item()), 0.5);
    // Pooled features (1, -1) against weights (2, 1).
    let mut w = vec![0.0; 8];
    w[0] = 2.0;
    w[1] = 1.0;
    *store.make_mut("head.ab.w").unwrap() = Tensor::from_vec(&[1, 8], w).unwrap();
    let mut f = vec![0.0; 16];
    f[0] = 1.0;
    f[1] = 1.0;
    f[2] = -1.0;
    f[3] = -1.0;
    let fv = tape.constant(Tensor::from_vec(&[1, 8, 2, 1], f).unwrap());
    let mut p = Bound::frozen(&store);
    let z = model.abnormal_logits(&mut tape, &mut p, fv).unwrap();
    assert!((sigmoid(tape.value(z).item()) - 0.7310585786300049).abs() < 1e-15);
}

#[test]
fn asymmetry_head_is_order_and_sign_invariant() {
    let (model, store) = tiny();
    let a = random_tensor(21, &[1, 8, 2, 1]);
    let b = random_tensor(22, &[1, 8, 2, 1]);
    let run = |x: &Tensor<f64>, y: &Tensor<f64>| {
        let mut tape = Tape::new();
        let mut p = Bound::frozen(&store);
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let z = model.asymmetry_logits(&mut tape, &mut p, xv, yv).unwrap();
        tape.value(z).item()
    };
    assert_eq!(run(&a, &b), run(&b, &a));
    assert_eq!(run(&a, &b), run(&a.map(|v| -v), &b.map(|v| -v)));
    let bias = store.get("head.asy.b").unwrap().item();
    assert_eq!(run(&a, &a), bias);
}

#[test]
fn cam_normalisation_and_localisation() {
    let mut f = Tensor::zeros(&[1, 4, 2]);
    f.data_mut()[2 * 2 + 1] = 3.0;
    let cam = compute_cam(&f, &[0.5], (16, 8)).unwrap();
    assert_eq!(cam.min_max(), (0.0, 1.0));
    let (mut best, mut at) = (f64::MIN, (0, 0));
    for r in 0..16 {
        for c in 0..8 {
            if cam.get(r, c) > best {
                best = cam.get(r, c);
                at = (r, c);
            }
        }
    }
    // Grid cell (2, 1) covers rows 8..12 and columns 4..8.
    assert!((8..12).contains(&at.0) && (4..8).contains(&at.1), "{at:?}");
    let zero = compute_cam(&Tensor::<f64>::zeros(&[3, 2, 1]), &[1.0, -2.0, 0.5], (16, 8)).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.0));
    let any = compute_cam(&random_tensor(23, &[3, 4, 2]), &[1.0, -2.0, 0.5], (16, 8)).unwrap();
    assert!(any.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn forward_symmetric_pair_scores_the_asymmetry_bias() {
    let (model, store) = tiny();
    let mut pair = random_pair(24, 16, 8);
    pair.left.pixels = pair.right.pixels.clone();
    let out = model.forward(&store, &pair).unwrap();
    assert_eq!(out.logit_asy, store.get("head.asy.b").unwrap().item());
    assert_eq!(out.p_r, out.p_l);
}

#[test]
fn forward_is_swap_equivariant() {
    let (model, store) = tiny();
    let pair = random_pair(25, 16, 8);
    let a = model.forward(&store, &pair).unwrap();
    let b = model.forward(&store, &pair.swapped()).unwrap();
    assert_eq!((a.p_r, a.p_l), (b.p_l, b.p_r));
    assert_eq!((&a.cam_r, &a.cam_l), (&b.cam_l, &b.cam_r));
    assert!((a.p_asy - b.p_asy).abs() <= 1e-6);
    for p in [a.p_r, a.p_l, a.p_asy] {
        assert!(p > 0.0 && p < 1.0);
    }
}

#[test]
fn heads_not_divisible_are_rejected() {
    let mut cfg = AsycConfig::tiny();
    cfg.num_heads = 3;
    assert!(matches!(Asyc::new(cfg), Err(Error::Config(_))));
}
