//! Writes a phantom dataset to disk as PNGs plus split manifests.
//!
//! Images are stored in acquisition orientation: left sides are mirrored
//! on disk, so loading through the manifest exercises the same
//! preprocessing path as real data.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{generate_phantom, PhantomConfig};
use crate::error::{Error, Result};
use crate::imgio::{save_gray_png, save_mask_png, write_manifest, Manifest, ManifestRow, Split, View};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.7, val: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomDataset {
    /// All rows with their split.
    pub manifest: PathBuf,
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub pairs: usize,
}

/// Seed of pair `i` of a dataset generated with `seed`.
pub fn phantom_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, &[0x7068_616e, i as u64])
}

pub fn write_phantom_dataset(dir: &Path, pairs: usize, seed: u64, cfg: &PhantomConfig, fractions: SplitFractions) -> Result<PhantomDataset> {
    cfg.validate()?;
    if pairs == 0 {
        return Err(Error::Config("phantom dataset needs at least one pair".into()));
    }
    if !(fractions.train >= 0.0 && fractions.val >= 0.0 && fractions.train + fractions.val <= 1.0) {
        return Err(Error::Config("split fractions must be nonnegative and sum to at most 1".into()));
    }
    for sub in ["images", "masks"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut order: Vec<usize> = (0..pairs).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7370_6c74])));
    let n_train = (fractions.train * pairs as f64).round() as usize;
    let n_val = ((fractions.val * pairs as f64).round() as usize).min(pairs - n_train);
    let mut split = vec![Split::Test; pairs];
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let mut rows = Vec::with_capacity(pairs);
    for (i, &split) in split.iter().enumerate() {
        let id = format!("ph{i:05}");
        let view = if i % 2 == 0 { View::Cc } else { View::Mlo };
        let pair = generate_phantom::<f64>(phantom_seed(seed, i), id.clone(), view, cfg)?;
        let rel = |kind: &str, name: String| PathBuf::from(kind).join(name);
        let (rp, lp) = (rel("images", format!("{id}_R.png")), rel("images", format!("{id}_L.png")));
        let (rm, lm) = (rel("masks", format!("{id}_R.png")), rel("masks", format!("{id}_L.png")));
        save_gray_png(dir.join(&rp), &pair.right.pixels)?;
        save_gray_png(dir.join(&lp), &pair.left.pixels.mirrored())?;
        save_mask_png(dir.join(&rm), pair.mask_r.as_ref().expect("phantom masks"))?;
        save_mask_png(dir.join(&lm), &pair.mask_l.as_ref().expect("phantom masks").mirrored())?;
        rows.push(ManifestRow {
            pair_id: id,
            right_path: rp,
            left_path: lp,
            view,
            y_r: pair.y_r,
            y_l: pair.y_l,
            y_asy: pair.y_asy,
            mask_r_path: Some(rm),
            mask_l_path: Some(lm),
            split: Some(split),
        });
    }
    let write = |name: &str, keep: Option<Split>| -> Result<PathBuf> {
        let path = dir.join(name);
        let rows = rows.iter().filter(|r| keep.is_none() || r.split == keep).cloned().collect();
        write_manifest(&path, &Manifest { rows, base_dir: dir.to_path_buf() })?;
        Ok(path)
    };
    Ok(PhantomDataset {
        manifest: write("manifest.csv", None)?,
        train: write("train.csv", Some(Split::Train))?,
        val: write("val.csv", Some(Split::Val))?,
        test: write("test.csv", Some(Split::Test))?,
        pairs,
    })
}
