//! Ranking, overlap and threshold-sweep metrics. Every value is formed from
//! integer counts and a single final division, so the rational forms are
//! exact and the `f64` forms are the correctly rounded quotients.

use bimg_tensor::Scalar;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Plane};

pub const TIOU_THRESHOLDS: [f64; 7] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
pub const TIOR_THRESHOLDS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Positive/negative pair counts behind the Mann-Whitney statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub positives: u64,
    pub negatives: u64,
    pub concordant: u64,
    pub tied: u64,
}

impl PairCounts {
    /// `(concordant + tied / 2) / (P N)`, reduced.
    pub fn auc(&self) -> Ratio<u64> {
        Ratio::new(2 * self.concordant + self.tied, 2 * self.positives * self.negatives)
    }
}

pub fn pair_counts<S: Scalar>(scores: &[S], labels: &[bool]) -> Result<PairCounts> {
    if scores.len() != labels.len() {
        return Err(Error::Validation(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric("AUC needs at least one positive and one negative".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("no NaN"));
    let (mut concordant, mut tied, mut neg_below) = (0u64, 0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_g, mut neg_g) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos_g += 1;
            } else {
                neg_g += 1;
            }
            j += 1;
        }
        concordant += pos_g * neg_below;
        tied += pos_g * neg_g;
        neg_below += neg_g;
        i = j;
    }
    Ok(PairCounts { positives, negatives, concordant, tied })
}

pub fn auc_exact<S: Scalar>(scores: &[S], labels: &[bool]) -> Result<Ratio<u64>> {
    Ok(pair_counts(scores, labels)?.auc())
}

/// Area under the ROC curve as the Mann-Whitney statistic.
pub fn auc<S: Scalar>(scores: &[S], labels: &[bool]) -> Result<f64> {
    let c = pair_counts(scores, labels)?;
    Ok((2 * c.concordant + c.tied) as f64 / (2 * c.positives * c.negatives) as f64)
}

/// Linear-interpolated quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const MIN_RESAMPLES: usize = 1000;

/// Percentile bootstrap interval of the AUC at `level` (e.g. 0.95).
/// Resamples drawing a single class are redrawn.
pub fn bootstrap_ci<S: Scalar>(scores: &[S], labels: &[bool], n_resamples: usize, seed: u64, level: f64) -> Result<(f64, f64)> {
    pair_counts(scores, labels)?;
    if n_resamples < MIN_RESAMPLES {
        return Err(Error::Config(format!("bootstrap needs at least {MIN_RESAMPLES} resamples, got {n_resamples}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level {level} outside (0,1)")));
    }
    let n = scores.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(n_resamples);
    let (mut s, mut l) = (Vec::with_capacity(n), Vec::with_capacity(n));
    while stats.len() < n_resamples {
        s.clear();
        l.clear();
        for _ in 0..n {
            let k = rng.gen_range(0..n);
            s.push(scores[k]);
            l.push(labels[k]);
        }
        let pos = l.iter().filter(|&&v| v).count();
        if pos == 0 || pos == n {
            continue;
        }
        stats.push(auc(&s, &l)?);
    }
    stats.sort_by(|a, b| a.partial_cmp(b).expect("finite AUC"));
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(&stats, tail), quantile(&stats, 1.0 - tail)))
}

/// Pixels with `M >= threshold`.
pub fn binarize_cam<T: Scalar>(cam: &Plane<T>, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("CAM threshold {threshold} outside (0,1)")));
    }
    let t = T::lit(threshold);
    Ok(cam.map(|v| v >= t))
}

/// `(|pred|, |ref|, |pred ∩ ref|)`.
pub fn overlap_counts(pred: &BinaryMask, reference: &BinaryMask) -> Result<(u64, u64, u64)> {
    if !pred.same_dims(reference) {
        return Err(Error::Validation(format!("mask shapes {:?} and {:?} differ", pred.dims(), reference.dims())));
    }
    let (mut p, mut r, mut i) = (0u64, 0u64, 0u64);
    for (&a, &b) in pred.data().iter().zip(reference.data()) {
        p += a as u64;
        r += b as u64;
        i += (a && b) as u64;
    }
    Ok((p, r, i))
}

/// `|∩| / |∪|`; two empty masks score 1.
pub fn iou_exact(pred: &BinaryMask, reference: &BinaryMask) -> Result<Ratio<u64>> {
    let (p, r, i) = overlap_counts(pred, reference)?;
    let union = p + r - i;
    Ok(if union == 0 { Ratio::from_integer(1) } else { Ratio::new(i, union) })
}

/// `|∩| / |ref|`; undefined for an empty reference.
pub fn ior_exact(pred: &BinaryMask, reference: &BinaryMask) -> Result<Ratio<u64>> {
    let (_, r, i) = overlap_counts(pred, reference)?;
    if r == 0 {
        return Err(Error::UndefinedMetric("IoR with an empty reference mask".into()));
    }
    Ok(Ratio::new(i, r))
}

/// `2|∩| / (|pred| + |ref|)`; two empty masks score 1.
pub fn dice_exact(pred: &BinaryMask, reference: &BinaryMask) -> Result<Ratio<u64>> {
    let (p, r, i) = overlap_counts(pred, reference)?;
    Ok(if p + r == 0 { Ratio::from_integer(1) } else { Ratio::new(2 * i, p + r) })
}

pub fn iou(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    iou_exact(pred, reference).map(ratio_f64)
}

pub fn ior(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    ior_exact(pred, reference).map(ratio_f64)
}

pub fn dice(pred: &BinaryMask, reference: &BinaryMask) -> Result<f64> {
    dice_exact(pred, reference).map(ratio_f64)
}

/// Mean over `thresholds` of the fraction of values strictly above each.
pub fn threshold_sweep_exact(values: &[f64], thresholds: &[f64]) -> Result<Ratio<u64>> {
    if values.is_empty() {
        return Err(Error::UndefinedMetric("threshold sweep over an empty list".into()));
    }
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Validation("overlap values must lie in [0,1]".into()));
    }
    let passed: u64 = thresholds.iter().map(|&t| values.iter().filter(|&&v| v > t).count() as u64).sum();
    Ok(Ratio::new(passed, (values.len() * thresholds.len()) as u64))
}

pub fn mean_tiou(ious: &[f64]) -> Result<f64> {
    threshold_sweep_exact(ious, &TIOU_THRESHOLDS).map(ratio_f64)
}

pub fn mean_tior(iors: &[f64]) -> Result<f64> {
    threshold_sweep_exact(iors, &TIOR_THRESHOLDS).map(ratio_f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&str]) -> BinaryMask {
        let w = rows[0].len();
        Plane::new(rows.len(), w, rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect()).unwrap()
    }

    #[test]
    fn auc_worked_examples() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn overlap_worked_example() {
        let pred = mask(&["##..", "....", "##..", "...."]);
        let reference = mask(&["##..", "##..", "....", "...."]);
        assert_eq!(iou_exact(&pred, &reference).unwrap(), Ratio::new(1, 3));
        assert_eq!(ior(&pred, &reference).unwrap(), 0.5);
        assert_eq!(dice(&pred, &reference).unwrap(), 0.5);
        assert_eq!(iou(&pred, &pred).unwrap(), 1.0);
        let empty = mask(&["....", "....", "....", "...."]);
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert!(matches!(ior(&pred, &empty), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let a = mask(&["#.", ".."]);
        let b = mask(&["..", ".#"]);
        assert_eq!((iou(&a, &b).unwrap(), ior(&a, &b).unwrap(), dice(&a, &b).unwrap()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn threshold_sweep_worked_example_and_strictness() {
        assert_eq!(threshold_sweep_exact(&[0.15, 0.35, 0.65], &TIOU_THRESHOLDS).unwrap(), Ratio::new(10, 21));
        assert!((mean_tiou(&[0.15, 0.35, 0.65]).unwrap() - 0.4762).abs() < 1e-4);
        assert_eq!(mean_tiou(&[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mean_tiou(&[0.0]).unwrap(), 0.0);
        assert_eq!(threshold_sweep_exact(&[0.1], &[0.1]).unwrap(), Ratio::from_integer(0));
        assert!(matches!(mean_tior(&[]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn binarization_thresholds_inclusively() {
        let cam = Plane::new(1, 3, vec![0.4, 0.6, 0.5]).unwrap();
        assert_eq!(binarize_cam(&cam, 0.5).unwrap().data(), &[false, true, true]);
        assert!(!binarize_cam(&Plane::<f64>::zeros(2, 2), 0.5).unwrap().any());
        assert!(binarize_cam(&cam, 1.0).is_err());
    }

    #[test]
    fn bootstrap_brackets_and_repeats() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.2, 0.7, 0.55, 0.3];
        let labels = [false, false, true, true, false, true, true, false];
        let point = auc(&scores, &labels).unwrap();
        let (lo, hi) = bootstrap_ci(&scores, &labels, 1000, 7, 0.95).unwrap();
        assert!(lo <= point && point <= hi);
        assert_eq!(bootstrap_ci(&scores, &labels, 1000, 7, 0.95).unwrap(), (lo, hi));
        assert!(matches!(bootstrap_ci(&scores, &labels, 999, 7, 0.95), Err(Error::Config(_))));
    }

    #[test]
    fn bootstrap_on_one_pair_collapses_to_the_point() {
        // Both admissible resamples are permutations of the original pair.
        for (scores, point) in [([0.2, 0.9], 1.0), ([0.9, 0.2], 0.0), ([0.5, 0.5], 0.5)] {
            let (lo, hi) = bootstrap_ci(&scores, &[false, true], 1000, 1, 0.95).unwrap();
            assert_eq!((lo, hi), (point, point));
        }
    }
}
