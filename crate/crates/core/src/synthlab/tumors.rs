//! Tumor patch libraries: extraction from annotated pairs, procedural
//! blobs, and on-disk persistence (PNG patches plus `index.csv`).

use std::path::Path;

use bimg_tensor::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Plane;
use crate::imgio::{load_gray_png, save_gray_png, BilateralPair, Laterality};

pub const MIN_PATCH: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TumorPatch<T> {
    pub patch: Plane<T>,
    pub source_id: String,
    /// `(row, col, h, w)` of the crop in its source image.
    pub bbox: Option<(usize, usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TumorSet<T> {
    pub patches: Vec<TumorPatch<T>>,
    pub origin_dataset: String,
}

impl<T: Scalar> TumorSet<T> {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let index = dir.join("index.csv");
        let io = |e: csv::Error| Error::io(&index, std::io::Error::other(e.to_string()));
        let mut w = csv::Writer::from_path(&index).map_err(io)?;
        w.write_record(["file", "source_id", "origin", "bbox_row", "bbox_col", "bbox_h", "bbox_w"]).map_err(io)?;
        for (i, p) in self.patches.iter().enumerate() {
            let file = format!("patch_{i:05}.png");
            save_gray_png(dir.join(&file), &p.patch)?;
            let (a, b, c, d) = p.bbox.map_or_else(
                || Default::default(),
                |(r, c, h, w)| (r.to_string(), c.to_string(), h.to_string(), w.to_string()),
            );
            w.write_record([file, p.source_id.clone(), self.origin_dataset.clone(), a, b, c, d]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(&index, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let index = dir.join("index.csv");
        let text = std::fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut set = TumorSet { patches: Vec::new(), origin_dataset: String::new() };
        for (i, rec) in reader.records().enumerate() {
            let parse = |msg: String| Error::Parse { path: index.clone(), row: i + 1, msg };
            let rec = rec.map_err(|e| parse(e.to_string()))?;
            let get = |k: usize| rec.get(k).ok_or_else(|| parse(format!("missing field {k}")));
            let raw = load_gray_png(dir.join(get(0)?))?;
            set.origin_dataset = get(2)?.to_string();
            let nums: Vec<&str> = (3..7).map(|k| rec.get(k).unwrap_or("")).collect();
            let bbox = if nums.iter().all(|s| !s.is_empty()) {
                let v: std::result::Result<Vec<usize>, _> = nums.iter().map(|s| s.parse::<usize>()).collect();
                let v = v.map_err(|e| parse(e.to_string()))?;
                Some((v[0], v[1], v[2], v[3]))
            } else {
                None
            };
            set.patches.push(TumorPatch {
                patch: Plane::new(raw.height, raw.width, raw.pixels)?.cast(),
                source_id: get(1)?.to_string(),
                bbox,
            });
        }
        Ok(set)
    }
}

/// One patch per 8-connected mask component: the tight bounding-box crop of
/// the image, min-max rescaled. Components under 4 pixels on a side are
/// skipped.
pub fn extract_tumor_patches<T: Scalar>(pairs: &[BilateralPair<T>], origin_dataset: &str) -> Result<TumorSet<T>> {
    let mut set = TumorSet { patches: Vec::new(), origin_dataset: origin_dataset.to_string() };
    for pair in pairs {
        for side in [Laterality::Right, Laterality::Left] {
            let Some(mask) = pair.mask(side) else { continue };
            let img = &pair.side(side).pixels;
            for (k, comp) in mask.components(true).iter().enumerate() {
                let (r, c, h, w) = comp.bbox().expect("nonempty component");
                if h < MIN_PATCH || w < MIN_PATCH {
                    continue;
                }
                let crop = img.crop(r, c, h, w)?;
                let patch = crop.min_max_normalized().unwrap_or(crop);
                set.patches.push(TumorPatch { patch, source_id: format!("{}:{side}:{k}", pair.pair_id), bbox: Some((r, c, h, w)) });
            }
        }
    }
    if set.is_empty() {
        return Err(Error::EmptySet("no lesion masks to extract tumor patches from".into()));
    }
    Ok(set)
}

/// Bright lobulated blob in `[0,1]`, brightest near the centre.
pub fn procedural_blob<T: Scalar, R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize) -> Plane<T> {
    let lobes = rng.gen_range(2..=5) as f64;
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let depth = rng.gen_range(0.05..0.2);
    let base = rng.gen_range(0.8..0.95);
    let grain: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-0.03..0.03)).collect();
    Plane::from_fn(h, w, |r, c| {
        let u = (r as f64 + 0.5) / h as f64 * 2.0 - 1.0;
        let v = (c as f64 + 0.5) / w as f64 * 2.0 - 1.0;
        let radius = 1.0 + depth * (lobes * v.atan2(u) + phase).sin();
        let d = (u * u + v * v).sqrt() / radius;
        let core = (1.0 - d * d).max(0.0);
        T::lit((base * (0.75 + 0.25 * core) + grain[r * w + c]).clamp(0.0, 1.0))
    })
}

pub fn procedural_tumor_set<T: Scalar>(seed: u64, count: usize, min_size: usize, max_size: usize) -> Result<TumorSet<T>> {
    if count == 0 {
        return Err(Error::EmptySet("procedural tumor set needs at least one patch".into()));
    }
    if min_size < MIN_PATCH || max_size < min_size {
        return Err(Error::Config(format!("patch sizes must satisfy {MIN_PATCH} <= min <= max")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patches = (0..count)
        .map(|i| {
            let h = rng.gen_range(min_size..=max_size);
            let w = rng.gen_range(min_size..=max_size);
            TumorPatch { patch: procedural_blob(&mut rng, h, w), source_id: format!("procedural:{i}"), bbox: None }
        })
        .collect();
    Ok(TumorSet { patches, origin_dataset: "procedural".into() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::{GrayImage, View};

    fn pair_with_mask(mask: Plane<bool>) -> BilateralPair<f64> {
        let (h, w) = mask.dims();
        let img = Plane::from_fn(h, w, |r, c| ((r + 2 * c) % 7) as f64 / 7.0);
        let r = GrayImage::new(img.clone(), Laterality::Right, View::Cc).unwrap();
        let l = GrayImage::new(img, Laterality::Left, View::Cc).unwrap();
        BilateralPair::new("p", r, l, true, false).unwrap().with_masks(Some(mask), None).unwrap()
    }

    #[test]
    fn one_patch_per_component_with_tight_crop() {
        let mask = Plane::from_fn(100, 80, |r, c| (10..50).contains(&r) && (5..35).contains(&c) || (60..70).contains(&r) && (50..60).contains(&c));
        let set = extract_tumor_patches(&[pair_with_mask(mask)], "x").unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.patches[0].patch.dims(), (40, 30));
        assert_eq!(set.patches[0].bbox, Some((10, 5, 40, 30)));
        let (lo, hi) = set.patches[0].patch.min_max();
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn no_masks_is_an_empty_set_error() {
        let mut p = pair_with_mask(Plane::filled(8, 8, false));
        p.mask_r = None;
        assert!(matches!(extract_tumor_patches(&[p], "x"), Err(Error::EmptySet(_))));
    }

    #[test]
    fn persistence_roundtrip_keeps_metadata() {
        let set = procedural_tumor_set::<f64>(3, 4, 6, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        set.save(dir.path()).unwrap();
        let back = TumorSet::<f64>::load(dir.path()).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back.origin_dataset, "procedural");
        for (a, b) in set.patches.iter().zip(&back.patches) {
            assert_eq!(a.source_id, b.source_id);
            assert!(a.patch.l1(&b.patch).unwrap() < 1e-4);
        }
    }

    #[test]
    fn procedural_blobs_are_valid_patches() {
        let set = procedural_tumor_set::<f32>(1, 8, 4, 12).unwrap();
        for p in &set.patches {
            assert!(p.patch.in_unit_range());
            assert!(p.patch.height() >= 4 && p.patch.width() >= 4);
        }
    }
}
