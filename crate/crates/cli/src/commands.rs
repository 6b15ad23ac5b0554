use std::path::{Path, PathBuf};

use bimg_core::asyd::{disentangle_pair, Decoder};
use bimg_core::asyc::Asyc;
use bimg_core::config::Precision;
use bimg_core::evalkit::evaluate;
use bimg_core::evalkit::render::{hconcat, overlay, RgbImage};
use bimg_core::imgio::{load_manifest, load_pair, save_gray_png, save_mask_png, write_manifest, Manifest, ManifestRow};
use bimg_core::selfadv::{checkpoint_config, derive_seed, fit, load_checkpoint, resolve_tumor_set};
use bimg_core::synthlab::{synthesize_asymmetric, write_phantom_dataset, PhantomConfig, SidePolicy, SplitFractions, SynthConfig};
use bimg_core::{Error, Laterality, Result, RunConfig};
use bimg_tensor::Scalar;

use crate::{Cli, Command, Global};

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Train => {
            let cfg = run_config(g)?;
            let out = out_dir(g, "run");
            let summary = match cfg.precision {
                Precision::F32 => fit::<f32>(&cfg, &out)?,
                Precision::F64 => fit::<f64>(&cfg, &out)?,
            };
            println!("trained {} steps into {}", summary.steps, summary.run_dir.display());
            if let Some(s) = summary.best_score {
                println!("best validation score {s:.4}");
            }
            Ok(())
        }
        Command::Eval { checkpoint, manifest, no_overlays } => {
            let out = out_dir(g, "eval");
            let overrides = flag_overrides(g);
            let report = match checkpoint_config(checkpoint)?.precision {
                Precision::F32 => evaluate::<f32>(checkpoint, manifest, &out, !no_overlays, &overrides)?,
                Precision::F64 => evaluate::<f64>(checkpoint, manifest, &out, !no_overlays, &overrides)?,
            };
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for m in &report.metrics {
                match m.ci {
                    Some((lo, hi)) => println!("{:<16} {:.4}  [{lo:.4}, {hi:.4}]", m.metric, m.value),
                    None => println!("{:<16} {:.4}", m.metric, m.value),
                }
            }
            Ok(())
        }
        Command::Synthesize { manifest, policy } => {
            let cfg = run_config(g)?;
            let out = out_dir(g, "synth");
            match cfg.precision {
                Precision::F32 => synthesize::<f32>(&cfg, manifest, *policy, &out),
                Precision::F64 => synthesize::<f64>(&cfg, manifest, *policy, &out),
            }
        }
        Command::PhantomGen { pairs, lesion_rate } => {
            let cfg = run_config(g)?;
            let out = out_dir(g, "phantoms");
            let pc = phantom_config(&cfg, *lesion_rate);
            let ds = write_phantom_dataset(&out, *pairs, cfg.seed, &pc, SplitFractions::default())?;
            println!("wrote {} pairs; manifests {}, {}, {}", ds.pairs, ds.train.display(), ds.val.display(), ds.test.display());
            Ok(())
        }
        Command::Disentangle { checkpoint, manifest } => {
            let mut cfg = checkpoint_config(checkpoint)?;
            cfg.apply_overrides(&flag_overrides(g))?;
            cfg.validate()?;
            let out = out_dir(g, "panels");
            match cfg.precision {
                Precision::F32 => disentangle::<f32>(&cfg, checkpoint, manifest, &out),
                Precision::F64 => disentangle::<f64>(&cfg, checkpoint, manifest, &out),
            }
        }
    }
}

/// `--set` values followed by the dedicated flags, as overrides.
fn flag_overrides(g: &Global) -> Vec<String> {
    let mut o = g.overrides.clone();
    if let Some(s) = g.seed {
        o.push(format!("seed={s}"));
    }
    if g.deterministic {
        o.push("deterministic=true".into());
    }
    o
}

fn run_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) if !p.is_file() => return Err(Error::Config(format!("config file {} not found", p.display()))),
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&flag_overrides(g))?;
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(g: &Global, default: &str) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

/// Phantoms at the configured image size, lesions scaled with the height.
fn phantom_config(cfg: &RunConfig, lesion_rate: f64) -> PhantomConfig {
    let d = PhantomConfig::default();
    let max = (cfg.image_h * d.lesion_max / d.height).min(cfg.image_w.saturating_sub(1)).max(4);
    let min = (cfg.image_h * d.lesion_min / d.height).clamp(4, max);
    PhantomConfig {
        height: cfg.image_h,
        width: cfg.image_w,
        lesion_min: min,
        lesion_max: max,
        lesion_prob_right: lesion_rate,
        lesion_prob_left: lesion_rate,
        ..d
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn synthesize<T: Scalar>(cfg: &RunConfig, manifest: &Path, policy: SidePolicy, out: &Path) -> Result<()> {
    if cfg.tumor_set.is_empty() {
        return Err(Error::Config("key `tumor_set`: required for synthesis".into()));
    }
    let set = resolve_tumor_set::<T>(cfg)?.expect("nonempty tumor set");
    let m = load_manifest(manifest)?;
    create_dir(&out.join("images"))?;
    create_dir(&out.join("masks"))?;
    let absolute = |p: &Path| std::path::absolute(m.resolve(p)).unwrap_or_else(|_| m.resolve(p));
    let mut rows: Vec<ManifestRow> = m
        .rows
        .iter()
        .map(|r| ManifestRow {
            right_path: absolute(&r.right_path),
            left_path: absolute(&r.left_path),
            mask_r_path: r.mask_r_path.as_deref().map(absolute),
            mask_l_path: r.mask_l_path.as_deref().map(absolute),
            ..r.clone()
        })
        .collect();
    let mut made = 0usize;
    for (i, row) in m.rows.iter().enumerate().filter(|(_, r)| !r.y_asy) {
        let pair = load_pair::<T>(&m, row, cfg.image_h, cfg.image_w)?;
        let rec = match synthesize_asymmetric(&pair, &set, derive_seed(cfg.seed, &[i as u64]), policy, &SynthConfig::default()) {
            Ok(r) => r,
            Err(Error::PlacementExhausted { .. }) => {
                eprintln!("warning: {}: no room for a tumor, skipped", row.pair_id);
                continue;
            }
            Err(e) => return Err(e),
        };
        let id = format!("{}_syn", row.pair_id);
        let rel = |kind: &str, side: &str| PathBuf::from(kind).join(format!("{id}_{side}.png"));
        let fake = &rec.fake;
        save_gray_png(out.join(rel("images", "R")), &fake.right.pixels)?;
        save_gray_png(out.join(rel("images", "L")), &fake.left.pixels.mirrored())?;
        save_mask_png(out.join(rel("masks", "R")), &rec.inserted_mask_r)?;
        save_mask_png(out.join(rel("masks", "L")), &rec.inserted_mask_l.mirrored())?;
        rows.push(ManifestRow {
            pair_id: id.clone(),
            right_path: rel("images", "R"),
            left_path: rel("images", "L"),
            view: row.view,
            y_r: fake.y_r,
            y_l: fake.y_l,
            y_asy: fake.y_asy,
            mask_r_path: Some(rel("masks", "R")),
            mask_l_path: Some(rel("masks", "L")),
            split: row.split,
        });
        made += 1;
    }
    let path = out.join("manifest.csv");
    write_manifest(&path, &Manifest { rows, base_dir: out.to_path_buf() })?;
    cfg.write_echo(&out.join("config.txt"))?;
    println!("synthesized {made} pairs; manifest {}", path.display());
    Ok(())
}

fn disentangle<T: Scalar>(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, out: &Path) -> Result<()> {
    let ck = load_checkpoint::<T>(checkpoint)?;
    let asyc = Asyc::new(cfg.asyc_config())?;
    let decoder = Decoder::new(cfg.decoder_config(), &asyc.config.encoder)?;
    let m = load_manifest(manifest)?;
    create_dir(out)?;
    for row in &m.rows {
        let pair = load_pair::<T>(&m, row, cfg.image_h, cfg.image_w)?;
        let d = disentangle_pair(&asyc, &ck.state.asyc, &decoder, &ck.state.decoder, &pair)?;
        for (lat, cam) in [(Laterality::Right, &d.asyc.cam_r), (Laterality::Left, &d.asyc.cam_l)] {
            let input = &pair.side(lat).pixels;
            let side = d.side(lat);
            let panels = [
                RgbImage::from_gray(input),
                RgbImage::from_gray(&side.x_n.pixels),
                RgbImage::from_gray(&side.x_ab),
                overlay(input, cam, cfg.cam_threshold, pair.mask(lat))?,
            ];
            let path = out.join(format!("{}_{}.png", row.pair_id, lat.as_str()));
            hconcat(&panels)?.save(&path)?;
            println!("{} {} x_ab mean {:.4}", row.pair_id, lat.as_str(), side.x_ab.mean().as_f64());
        }
    }
    cfg.write_echo(&out.join("config.txt"))?;
    Ok(())
}
