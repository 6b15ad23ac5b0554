//! Inference over a split and the report writers.

use std::path::Path;

use bimg_tensor::{ParameterStore, Scalar};

use super::metrics::{auc, binarize_cam, bootstrap_ci, dice, ior, iou, mean_tior, mean_tiou};
use super::render::{hconcat, overlay};
use crate::asyc::{stack_sides, Asyc, AsycOutput};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::imgio::{BilateralPair, Laterality, Split};
use crate::selfadv::{load_checkpoint, load_split};

/// Batched frozen inference, outputs in input order.
pub fn predict<T: Scalar>(asyc: &Asyc, store: &ParameterStore<T>, pairs: &[BilateralPair<T>], batch: usize) -> Result<Vec<AsycOutput<T>>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(batch.max(1)) {
        let refs: Vec<&BilateralPair<T>> = chunk.iter().collect();
        out.extend(asyc.infer(store, &stack_sides(&refs)?)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub cam_threshold: f64,
    pub bootstrap_resamples: usize,
    pub ci_level: f64,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { cam_threshold: 0.5, bootstrap_resamples: 1000, ci_level: 0.95, seed: 0, batch_size: 8 }
    }
}

impl EvalOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        EvalOptions {
            cam_threshold: cfg.cam_threshold,
            bootstrap_resamples: cfg.bootstrap_resamples,
            ci_level: cfg.ci_level,
            seed: cfg.seed,
            batch_size: cfg.batch_size,
        }
    }
}

/// One side of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub pair_id: String,
    pub side: Laterality,
    pub score: f64,
    pub label: bool,
    /// Present when the side has a nonempty reference mask.
    pub iou: Option<f64>,
    pub ior: Option<f64>,
    pub dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    pub pair_id: String,
    pub score: f64,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub metrics: Vec<MetricRow>,
    pub images: Vec<ImageResult>,
    pub pairs: Vec<PairResult>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.metric == metric).map(|m| m.value)
    }

    fn push(&mut self, metric: &str, value: f64, ci: Option<(f64, f64)>) {
        self.metrics.push(MetricRow { metric: metric.into(), value, ci });
    }

    /// Writes `report.csv`, `per_image.csv` and `per_pair.csv`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let write = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
            let path = dir.join(name);
            let err = |e: csv::Error| Error::Validation(format!("{}: {e}", path.display()));
            let mut w = csv::Writer::from_path(&path).map_err(err)?;
            w.write_record(header).map_err(err)?;
            for r in rows {
                w.write_record(r).map_err(err)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))
        };
        write(
            "report.csv",
            &["metric", "value", "ci_lo", "ci_hi"],
            self.metrics
                .iter()
                .map(|m| vec![m.metric.clone(), m.value.to_string(), opt(m.ci.map(|c| c.0)), opt(m.ci.map(|c| c.1))])
                .collect(),
        )?;
        write(
            "per_image.csv",
            &["pair_id", "side", "score", "iou", "ior", "dice"],
            self.images
                .iter()
                .map(|r| vec![r.pair_id.clone(), r.side.as_str().into(), r.score.to_string(), opt(r.iou), opt(r.ior), opt(r.dice)])
                .collect(),
        )?;
        write(
            "per_pair.csv",
            &["pair_id", "score_asymmetry", "y_asy"],
            self.pairs.iter().map(|r| vec![r.pair_id.clone(), r.score.to_string(), u8::from(r.label).to_string()]).collect(),
        )
    }
}

fn auc_rows(report: &mut EvalReport, name: &str, scores: &[f64], labels: &[bool], opts: &EvalOptions) -> Result<()> {
    match auc(scores, labels) {
        Ok(v) => {
            let ci = bootstrap_ci(scores, labels, opts.bootstrap_resamples, opts.seed, opts.ci_level)?;
            report.push(name, v, Some(ci));
        }
        Err(Error::UndefinedMetric(m)) => report.warnings.push(format!("{name} skipped: {m}")),
        Err(e) => return Err(e),
    }
    Ok(())
}

/// Scores `pairs`; when `overlay_dir` is given, writes one side-by-side
/// CAM overlay per pair into it.
pub fn evaluate_pairs<T: Scalar>(
    asyc: &Asyc,
    store: &ParameterStore<T>,
    pairs: &[BilateralPair<T>],
    opts: &EvalOptions,
    overlay_dir: Option<&Path>,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::EmptySet("no pairs to evaluate".into()));
    }
    if let Some(d) = overlay_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let outputs = predict(asyc, store, pairs, opts.batch_size)?;
    let mut report = EvalReport::default();
    let mut any_mask = false;
    for (pair, out) in pairs.iter().zip(&outputs) {
        for (side, score, cam) in [(Laterality::Right, out.p_r, &out.cam_r), (Laterality::Left, out.p_l, &out.cam_l)] {
            let mut r = ImageResult {
                pair_id: pair.pair_id.clone(),
                side,
                score: score.as_f64(),
                label: pair.label(side),
                iou: None,
                ior: None,
                dice: None,
            };
            if let Some(mask) = pair.mask(side) {
                any_mask = true;
                if mask.any() {
                    let pred = binarize_cam(cam, opts.cam_threshold)?;
                    r.iou = Some(iou(&pred, mask)?);
                    r.ior = Some(ior(&pred, mask)?);
                    r.dice = Some(dice(&pred, mask)?);
                }
            }
            report.images.push(r);
        }
        report.pairs.push(PairResult { pair_id: pair.pair_id.clone(), score: out.p_asy.as_f64(), label: pair.y_asy });
        if let Some(d) = overlay_dir {
            let t = opts.cam_threshold;
            let panel = hconcat(&[
                overlay(&pair.right.pixels, &out.cam_r, t, pair.mask_r.as_ref())?,
                overlay(&pair.left.pixels, &out.cam_l, t, pair.mask_l.as_ref())?,
            ])?;
            let name: String = pair.pair_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
            panel.save(&d.join(format!("{name}.png")))?;
        }
    }
    let side_scores: Vec<f64> = report.images.iter().map(|r| r.score).collect();
    let side_labels: Vec<bool> = report.images.iter().map(|r| r.label).collect();
    let pair_scores: Vec<f64> = report.pairs.iter().map(|r| r.score).collect();
    let pair_labels: Vec<bool> = report.pairs.iter().map(|r| r.label).collect();
    auc_rows(&mut report, "auc_abnormal", &side_scores, &side_labels, opts)?;
    auc_rows(&mut report, "auc_asymmetry", &pair_scores, &pair_labels, opts)?;

    let collect = |f: fn(&ImageResult) -> Option<f64>, rep: &EvalReport| rep.images.iter().filter_map(f).collect::<Vec<_>>();
    let ious = collect(|r| r.iou, &report);
    let iors = collect(|r| r.ior, &report);
    let dices = collect(|r| r.dice, &report);
    if !any_mask {
        report.warnings.push("no reference masks: segmentation and localization metrics skipped".into());
    } else if ious.is_empty() {
        report.warnings.push("no nonempty reference masks: segmentation and localization metrics skipped".into());
    } else {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        report.push("mean_iou", mean(&ious), None);
        report.push("mean_ior", mean(&iors), None);
        report.push("mean_dice", mean(&dices), None);
        report.push("mean_tiou", mean_tiou(&ious)?, None);
        report.push("mean_tior", mean_tior(&iors)?, None);
    }
    Ok(report)
}

/// Loads a checkpoint and the test split of `manifest`, evaluates, and
/// writes the CSV reports (and overlays unless disabled) into `out_dir`.
pub fn evaluate<T: Scalar>(checkpoint: &Path, manifest: &Path, out_dir: &Path, overlays: bool, overrides: &[String]) -> Result<EvalReport> {
    let ck = load_checkpoint::<T>(checkpoint)?;
    let mut cfg = RunConfig::parse(&ck.config)?;
    cfg.apply_overrides(overrides)?;
    cfg.validate()?;
    if !manifest.is_file() {
        return Err(Error::Config(format!("manifest {} not found", manifest.display())));
    }
    let asyc = Asyc::new(cfg.asyc_config())?;
    let pairs = load_split::<T>(manifest, Split::Test, cfg.image_h, cfg.image_w)?;
    let overlay_dir = out_dir.join("overlays");
    let report = evaluate_pairs(&asyc, &ck.state.asyc, &pairs, &EvalOptions::from_config(&cfg), overlays.then_some(overlay_dir.as_path()))?;
    report.write_csv(out_dir)?;
    Ok(report)
}
