mod common;

use bimg_core::evalkit::{auc, auc_exact, dice_exact, ior, ior_exact, iou_exact, mean_tior, mean_tiou, threshold_sweep_exact, TIOR_THRESHOLDS, TIOU_THRESHOLDS};
use bimg_core::BinaryMask;
use common::*;
use proptest::prelude::*;

#[test]
fn hundred_random_instances_match_oracles_exactly() {
    let mut r = rng(11);
    for _ in 0..100 {
        let (s, l) = random_scores(&mut r);
        assert_eq!(auc_exact(&s, &l).unwrap(), auc_oracle(&s, &l));
        assert_eq!(auc(&s, &l).unwrap(), as_f64(auc_oracle(&s, &l)));

        let (a, b) = random_masks(&mut r);
        assert_eq!(iou_exact(&a, &b).unwrap(), iou_oracle(&a, &b));
        assert_eq!(dice_exact(&a, &b).unwrap(), dice_oracle(&a, &b));
        assert_eq!(ior_exact(&a, &b).ok(), ior_oracle(&a, &b));

        let v = random_overlaps(&mut r);
        assert_eq!(threshold_sweep_exact(&v, &TIOU_THRESHOLDS).unwrap(), sweep_oracle(&v, &TIOU_THRESHOLDS));
        assert_eq!(mean_tiou(&v).unwrap(), as_f64(sweep_oracle(&v, &TIOU_THRESHOLDS)));
        assert_eq!(mean_tior(&v).unwrap(), as_f64(sweep_oracle(&v, &TIOR_THRESHOLDS)));
    }
}

#[test]
fn ior_is_asymmetric_on_a_witness() {
    let small = BinaryMask::from_fn(4, 4, |r, c| r == 0 && c == 0);
    let big = BinaryMask::from_fn(4, 4, |r, _| r == 0);
    assert_eq!(ior(&small, &big).unwrap(), 0.25);
    assert_eq!(ior(&big, &small).unwrap(), 1.0);
}

fn masks() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1usize..=16, 1usize..=16).prop_flat_map(|(h, w)| {
        (proptest::collection::vec(any::<bool>(), h * w), proptest::collection::vec(any::<bool>(), h * w))
            .prop_map(move |(a, b)| (BinaryMask::new(h, w, a).unwrap(), BinaryMask::new(h, w, b).unwrap()))
    })
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    proptest::collection::vec((-4i32..4, any::<bool>()), 2..32)
        .prop_filter("both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
        .prop_map(|v| v.into_iter().map(|(s, l)| (s as f64 / 4.0, l)).unzip())
}

proptest! {
    #[test]
    fn overlap_metrics_are_symmetric((a, b) in masks()) {
        prop_assert_eq!(iou_exact(&a, &b).unwrap(), iou_exact(&b, &a).unwrap());
        prop_assert_eq!(dice_exact(&a, &b).unwrap(), dice_exact(&b, &a).unwrap());
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms((s, l) in scored(), k in 0.1f64..10.0, c in -5.0f64..5.0) {
        let base = auc_exact(&s, &l).unwrap();
        let affine: Vec<f64> = s.iter().map(|v| k * v + c).collect();
        let cubed: Vec<f64> = s.iter().map(|v| v.powi(3)).collect();
        let squashed: Vec<f64> = s.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        prop_assert_eq!(auc_exact(&affine, &l).unwrap(), base);
        prop_assert_eq!(auc_exact(&cubed, &l).unwrap(), base);
        prop_assert_eq!(auc_exact(&squashed, &l).unwrap(), base);
    }

    #[test]
    fn auc_flips_under_label_inversion((s, l) in scored()) {
        let inv: Vec<bool> = l.iter().map(|&x| !x).collect();
        let a = auc_exact(&s, &l).unwrap();
        let b = auc_exact(&s, &inv).unwrap();
        prop_assert_eq!(a + b, num_rational::Ratio::from_integer(1));
    }

    #[test]
    fn overlap_values_lie_in_unit_interval((a, b) in masks()) {
        for v in [iou_exact(&a, &b).unwrap(), dice_exact(&a, &b).unwrap()] {
            prop_assert!(*v.numer() <= *v.denom());
        }
        if let Ok(v) = ior_exact(&a, &b) {
            prop_assert!(*v.numer() <= *v.denom());
        }
    }
}
