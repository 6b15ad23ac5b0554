//! Epoch loop: batching, synthesis mixing, schedule, validation,
//! checkpoints and the metrics CSV.
//!
//! Every random choice draws from a generator seeded by
//! `derive_seed(seed, [purpose, counters...])`, so a resumed run replays
//! the exact draws of an uninterrupted one without stored generator state.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use bimg_tensor::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{load_checkpoint, save_checkpoint, train_step, Batch, Models, Sample, StepOptions, StepRecord, TrainState};
use crate::asyd::Decoder;
use crate::asyc::Asyc;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evalkit::{auc, predict};
use crate::imgio::{augment_pair, load_manifest, load_pair, BilateralPair, Split};
use crate::seeds::derive_seed;
use crate::synthlab::{procedural_tumor_set, synthesize_asymmetric, SidePolicy, SynthConfig, TumorSet};

pub const METRICS_HEADER: [&str; 11] = [
    "step",
    "epoch",
    "lr",
    "loss_total",
    "loss_diag",
    "loss_rec",
    "loss_dics",
    "loss_syn",
    "loss_refine",
    "val_auc_abnormal",
    "val_auc_asymmetry",
];

const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_AUGMENT: u64 = 3;
const TAG_SYNTH: u64 = 4;
const TAG_TUMORS: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub run_dir: PathBuf,
    pub metrics_csv: PathBuf,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub best_score: Option<f64>,
    pub steps: u64,
}

fn require_manifest<'a>(key: &str, path: Option<&'a PathBuf>) -> Result<&'a Path> {
    let p = path.ok_or_else(|| Error::Config(format!("key `{key}` is required")))?;
    if !p.is_file() {
        return Err(Error::Config(format!("key `{key}`: {} not found", p.display())));
    }
    Ok(p)
}

/// Pairs of one split of a manifest, preprocessed to `h x w`.
pub fn load_split<T: Scalar>(path: &Path, split: Split, h: usize, w: usize) -> Result<Vec<BilateralPair<T>>> {
    let manifest = load_manifest(path)?.split(split);
    manifest.rows.iter().map(|row| load_pair(&manifest, row, h, w)).collect()
}

/// Tumor set named by the config, with the cross-dataset rule enforced.
pub fn resolve_tumor_set<T: Scalar>(cfg: &RunConfig) -> Result<Option<TumorSet<T>>> {
    let set = match cfg.tumor_set.as_str() {
        "" => None,
        "procedural" => {
            let min = (cfg.image_h / 10).max(4).min(cfg.image_w / 2);
            let max = (cfg.image_h / 6).max(min).min(cfg.image_w / 2);
            Some(procedural_tumor_set(derive_seed(cfg.seed, &[TAG_TUMORS]), cfg.procedural_tumors, min, max)?)
        }
        dir => Some(TumorSet::load(dir)?),
    };
    let Some(mut set) = set else {
        if cfg.synth_fraction > 0.0 {
            return Err(Error::Config("key `synth_fraction`: positive but `tumor_set` is empty".into()));
        }
        return Ok(None);
    };
    if !cfg.tumor_set_origin.is_empty() {
        set.origin_dataset = cfg.tumor_set_origin.clone();
    }
    if set.origin_dataset == cfg.train_dataset {
        return Err(Error::Config(format!(
            "key `tumor_set_origin`: tumors must come from a dataset other than the training set `{}`",
            cfg.train_dataset
        )));
    }
    Ok(Some(set))
}

/// Augments, then replaces a `synth_fraction` share of the symmetric pairs
/// by synthesized asymmetric ones. Deterministic in `(cfg.seed, step)`.
pub fn prepare_batch<T: Scalar>(pairs: &[&BilateralPair<T>], cfg: &RunConfig, tumors: Option<&TumorSet<T>>, step: u64) -> Result<Vec<Sample<T>>> {
    let params = cfg.augment_params();
    let mut samples = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let pair = if cfg.augment { augment_pair(p, derive_seed(cfg.seed, &[TAG_AUGMENT, step, i as u64]), &params)? } else { (*p).clone() };
        samples.push(Sample::real(pair));
    }
    let Some(set) = tumors.filter(|_| cfg.synth_fraction > 0.0) else {
        return Ok(samples);
    };
    let mut symmetric: Vec<usize> = (0..samples.len()).filter(|&i| !samples[i].pair.y_asy).collect();
    let k = (cfg.synth_fraction * symmetric.len() as f64).round() as usize;
    symmetric.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[TAG_SYNTH, step])));
    for &i in &symmetric[..k] {
        let seed = derive_seed(cfg.seed, &[TAG_SYNTH, step, i as u64]);
        match synthesize_asymmetric(&samples[i].pair, set, seed, SidePolicy::Random, &SynthConfig::default()) {
            Ok(record) => samples[i] = Sample::synthetic(record),
            // A pair without room for a tumor stays real.
            Err(Error::PlacementExhausted { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(samples)
}

/// Validation AUCs `(abnormality over sides, asymmetry over pairs)`;
/// `None` where a label class is missing.
pub fn validation_aucs<T: Scalar>(
    asyc: &Asyc,
    store: &bimg_tensor::ParameterStore<T>,
    pairs: &[BilateralPair<T>],
    batch: usize,
) -> Result<(Option<f64>, Option<f64>)> {
    if pairs.is_empty() {
        return Ok((None, None));
    }
    let out = predict(asyc, store, pairs, batch)?;
    let side_scores: Vec<T> = out.iter().flat_map(|o| [o.p_r, o.p_l]).collect();
    let side_labels: Vec<bool> = pairs.iter().flat_map(|p| [p.y_r, p.y_l]).collect();
    let pair_scores: Vec<T> = out.iter().map(|o| o.p_asy).collect();
    let pair_labels: Vec<bool> = pairs.iter().map(|p| p.y_asy).collect();
    Ok((auc(&side_scores, &side_labels).ok(), auc(&pair_scores, &pair_labels).ok()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn step_row(r: &StepRecord) -> Vec<String> {
    vec![
        r.step.to_string(),
        r.epoch.to_string(),
        r.lr.to_string(),
        r.total.to_string(),
        r.diag.to_string(),
        r.rec.to_string(),
        r.dics.to_string(),
        r.syn.to_string(),
        fmt_opt(r.refine),
        String::new(),
        String::new(),
    ]
}

/// Trains per `cfg`, writing `config.txt`, `metrics.csv`,
/// `epoch_NNN.ckpt`, `best.ckpt` and `loss_curve.png` into `run_dir`.
pub fn fit<T: Scalar>(cfg: &RunConfig, run_dir: &Path) -> Result<FitSummary> {
    cfg.validate()?;
    let train_path = require_manifest("train_manifest", cfg.train_manifest.as_ref())?;
    let val_path = match &cfg.val_manifest {
        Some(_) => Some(require_manifest("val_manifest", cfg.val_manifest.as_ref())?),
        None => None,
    };
    let tumors = resolve_tumor_set::<T>(cfg)?;
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    cfg.write_echo(&run_dir.join("config.txt"))?;

    let train = load_split::<T>(train_path, Split::Train, cfg.image_h, cfg.image_w)?;
    if train.is_empty() {
        return Err(Error::Config("key `train_manifest`: no training rows".into()));
    }
    let val = match val_path {
        Some(p) => load_split::<T>(p, Split::Val, cfg.image_h, cfg.image_w)?,
        None => Vec::new(),
    };

    let asyc = Asyc::new(cfg.asyc_config())?;
    let decoder = Decoder::new(cfg.decoder_config(), &asyc.config.encoder)?;
    let models = Models { asyc, decoder };
    let echo = cfg.echo();
    let (mut state, mut best) = match &cfg.resume {
        Some(path) => {
            let ck = load_checkpoint::<T>(path)?;
            (ck.state, ck.best_score)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[TAG_INIT]));
            (TrainState::init(&models, &mut rng)?, None)
        }
    };

    let metrics_csv = run_dir.join("metrics.csv");
    let appending = cfg.resume.is_some() && metrics_csv.is_file();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(appending)
        .truncate(!appending)
        .open(&metrics_csv)
        .map_err(|e| Error::io(&metrics_csv, e))?;
    let mut csv = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Validation(format!("{}: {e}", metrics_csv.display()));
    if !appending {
        csv.write_record(METRICS_HEADER).map_err(csv_err)?;
    }

    let schedule = cfg.schedule();
    let best_path = run_dir.join("best.ckpt");
    let mut last_path = run_dir.join("last.ckpt");
    for epoch in state.epoch..cfg.epochs {
        state.epoch = epoch;
        let opts = StepOptions {
            weights: cfg.loss_weights(),
            lr: schedule.lr_at(epoch),
            refine: cfg.refine,
            detach_decoder_input: cfg.detach_decoder_input,
        };
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[TAG_SHUFFLE, epoch])));
        for chunk in order.chunks(cfg.batch_size) {
            let pairs: Vec<&BilateralPair<T>> = chunk.iter().map(|&i| &train[i]).collect();
            let samples = prepare_batch(&pairs, cfg, tumors.as_ref(), state.step)?;
            let batch = Batch::new(&samples)?;
            let record = train_step(&models, &mut state, &batch, &opts)?;
            csv.write_record(step_row(&record)).map_err(csv_err)?;
        }
        let (va, vs) = validation_aucs(&models.asyc, &state.asyc, &val, cfg.batch_size)?;
        let mut row = vec![String::new(); METRICS_HEADER.len()];
        row[0] = state.step.to_string();
        row[1] = epoch.to_string();
        row[2] = opts.lr.to_string();
        row[9] = fmt_opt(va);
        row[10] = fmt_opt(vs);
        csv.write_record(&row).map_err(csv_err)?;
        csv.flush().map_err(|e| Error::io(&metrics_csv, e))?;

        let available: Vec<f64> = [va, vs].into_iter().flatten().collect();
        let score = (!available.is_empty()).then(|| available.iter().sum::<f64>() / available.len() as f64);
        state.epoch = epoch + 1;
        let improved = match (score, best) {
            (Some(s), Some(b)) => s > b,
            (Some(_), None) => true,
            // Without validation scores the latest epoch is kept.
            (None, _) => true,
        };
        if improved {
            best = score.or(best);
        }
        last_path = run_dir.join(format!("epoch_{epoch:03}.ckpt"));
        save_checkpoint(&last_path, &state, &echo, best)?;
        if improved {
            std::fs::copy(&last_path, &best_path).map_err(|e| Error::io(&best_path, e))?;
        }
    }
    drop(csv);
    crate::evalkit::render::loss_curve_png(&metrics_csv, &run_dir.join("loss_curve.png"))?;
    Ok(FitSummary { run_dir: run_dir.to_path_buf(), metrics_csv, last_checkpoint: last_path, best_checkpoint: best_path, best_score: best, steps: state.step })
}
