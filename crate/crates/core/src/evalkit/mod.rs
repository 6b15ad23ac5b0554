//! Classification, segmentation and localization metrics, and the
//! evaluation driver that writes reports.

pub mod evaluate;
pub mod metrics;
pub mod render;

pub use evaluate::{evaluate, evaluate_pairs, predict, EvalOptions, EvalReport, ImageResult, MetricRow, PairResult};
pub use metrics::{
    auc, auc_exact, binarize_cam, bootstrap_ci, dice, dice_exact, ior, ior_exact, iou, iou_exact, mean_tior, mean_tiou,
    pair_counts, threshold_sweep_exact, PairCounts, TIOR_THRESHOLDS, TIOU_THRESHOLDS,
};
