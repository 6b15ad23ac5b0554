//! Brute-force metric oracles and random instance generators shared by
//! the integration tests.

#![allow(dead_code)]

use std::collections::HashSet;

use bimg_core::BinaryMask;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Enumerates every positive/negative pair.
pub fn auc_oracle(scores: &[f64], labels: &[bool]) -> Ratio<u64> {
    let mut half_points = 0u64;
    let mut pairs = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1;
                half_points += if si > sj {
                    2
                } else if si == sj {
                    1
                } else {
                    0
                };
            }
        }
    }
    Ratio::new(half_points, 2 * pairs)
}

fn pixel_set(m: &BinaryMask) -> HashSet<(usize, usize)> {
    let mut s = HashSet::new();
    for r in 0..m.height() {
        for c in 0..m.width() {
            if m.get(r, c) {
                s.insert((r, c));
            }
        }
    }
    s
}

pub fn iou_oracle(a: &BinaryMask, b: &BinaryMask) -> Ratio<u64> {
    let (a, b) = (pixel_set(a), pixel_set(b));
    let union = a.union(&b).count() as u64;
    if union == 0 {
        return Ratio::from_integer(1);
    }
    Ratio::new(a.intersection(&b).count() as u64, union)
}

pub fn ior_oracle(pred: &BinaryMask, reference: &BinaryMask) -> Option<Ratio<u64>> {
    let (p, r) = (pixel_set(pred), pixel_set(reference));
    (!r.is_empty()).then(|| Ratio::new(p.intersection(&r).count() as u64, r.len() as u64))
}

pub fn dice_oracle(a: &BinaryMask, b: &BinaryMask) -> Ratio<u64> {
    let (a, b) = (pixel_set(a), pixel_set(b));
    let total = (a.len() + b.len()) as u64;
    if total == 0 {
        return Ratio::from_integer(1);
    }
    Ratio::new(2 * a.intersection(&b).count() as u64, total)
}

/// Sum over thresholds of per-threshold accuracies, divided by their count.
pub fn sweep_oracle(values: &[f64], thresholds: &[f64]) -> Ratio<u64> {
    let mut acc = Ratio::from_integer(0u64);
    for &t in thresholds {
        let above = values.iter().filter(|&&v| v > t).count() as u64;
        acc += Ratio::new(above, values.len() as u64);
    }
    acc / Ratio::from_integer(thresholds.len() as u64)
}

pub fn as_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Random scores on a coarse grid (so ties occur) with both classes present.
pub fn random_scores(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    loop {
        let n = rng.gen_range(2..=32);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 8.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return (scores, labels);
        }
    }
}

/// Two random masks of a shared size up to 16x16.
pub fn random_masks(rng: &mut ChaCha8Rng) -> (BinaryMask, BinaryMask) {
    let (h, w) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
    let (pa, pb) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
    let a = BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(pa));
    let b = BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(pb));
    (a, b)
}

/// Overlap values on a grid hitting the threshold values exactly.
pub fn random_overlaps(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.gen_range(1..=32);
    (0..n).map(|_| rng.gen_range(0..=20) as f64 / 20.0).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
