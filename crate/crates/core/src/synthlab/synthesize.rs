//! Synthetic asymmetry: tumors blended into one or both sides of a
//! symmetric pair.

use std::fmt;
use std::str::FromStr;

use bimg_tensor::Scalar;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{blend_tumors, box_inside, gaussian_alpha, TumorInsertion, TumorSet};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Plane};
use crate::imgio::{BilateralPair, GrayImage, Laterality};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SidePolicy {
    Right,
    Left,
    Both,
    /// One of the three above, uniformly.
    Random,
}

impl fmt::Display for SidePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SidePolicy::Right => "right",
            SidePolicy::Left => "left",
            SidePolicy::Both => "both",
            SidePolicy::Random => "random",
        })
    }
}

impl FromStr for SidePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "right" => Ok(SidePolicy::Right),
            "left" => Ok(SidePolicy::Left),
            "both" => Ok(SidePolicy::Both),
            "random" => Ok(SidePolicy::Random),
            other => Err(Error::Config(format!("unknown side policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub alpha_peak: f64,
    pub mask_threshold: f64,
    pub max_attempts: usize,
    /// Preprocessed intensity above which a pixel counts as breast tissue.
    pub foreground_threshold: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { alpha_peak: 0.9, mask_threshold: 0.25, max_attempts: 100, foreground_threshold: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisRecord<T> {
    pub fake: BilateralPair<T>,
    /// The input pair before insertion.
    pub real: BilateralPair<T>,
    pub inserted_mask_r: BinaryMask,
    pub inserted_mask_l: BinaryMask,
    pub insertions_r: Vec<TumorInsertion<T>>,
    pub insertions_l: Vec<TumorInsertion<T>>,
}

impl<T: Scalar> SynthesisRecord<T> {
    pub fn synthesized(&self, side: Laterality) -> bool {
        match side {
            Laterality::Right => !self.insertions_r.is_empty(),
            Laterality::Left => !self.insertions_l.is_empty(),
        }
    }

    pub fn inserted_mask(&self, side: Laterality) -> &BinaryMask {
        match side {
            Laterality::Right => &self.inserted_mask_r,
            Laterality::Left => &self.inserted_mask_l,
        }
    }

    /// Canonical little-endian serialisation of every field.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let put_plane = |out: &mut Vec<u8>, p: &Plane<T>| {
            out.extend_from_slice(&(p.height() as u64).to_le_bytes());
            out.extend_from_slice(&(p.width() as u64).to_le_bytes());
            for v in p.data() {
                v.write_le(out);
            }
        };
        let put_mask = |out: &mut Vec<u8>, m: Option<&BinaryMask>| match m {
            None => out.push(0),
            Some(m) => {
                out.push(1);
                out.extend_from_slice(&(m.height() as u64).to_le_bytes());
                out.extend_from_slice(&(m.width() as u64).to_le_bytes());
                out.extend(m.data().iter().map(|&b| b as u8));
            }
        };
        for pair in [&self.fake, &self.real] {
            out.extend_from_slice(pair.pair_id.as_bytes());
            out.push(0);
            out.extend([pair.y_r as u8, pair.y_l as u8, pair.y_asy as u8]);
            put_plane(&mut out, &pair.right.pixels);
            put_plane(&mut out, &pair.left.pixels);
            put_mask(&mut out, pair.mask_r.as_ref());
            put_mask(&mut out, pair.mask_l.as_ref());
        }
        put_mask(&mut out, Some(&self.inserted_mask_r));
        put_mask(&mut out, Some(&self.inserted_mask_l));
        for ins in self.insertions_r.iter().chain(&self.insertions_l) {
            out.extend_from_slice(&(ins.patch_index as u64).to_le_bytes());
            out.extend_from_slice(&(ins.center.0 as u64).to_le_bytes());
            out.extend_from_slice(&(ins.center.1 as u64).to_le_bytes());
            put_plane(&mut out, &ins.alpha);
        }
        out
    }
}

fn place_side<T: Scalar>(
    img: &GrayImage<T>,
    set: &TumorSet<T>,
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
) -> Result<(GrayImage<T>, Vec<TumorInsertion<T>>, BinaryMask)> {
    let (h, w) = img.pixels.dims();
    let thr = T::lit(cfg.foreground_threshold);
    let foreground: Vec<(usize, usize)> =
        (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).filter(|&(r, c)| img.pixels.get(r, c) > thr).collect();
    let n = rng.gen_range(1..=3);
    let mut insertions = Vec::with_capacity(n);
    for _ in 0..n {
        let patch_index = rng.gen_range(0..set.len());
        let (ph, pw) = set.patches[patch_index].patch.dims();
        let mut center = None;
        for _ in 0..cfg.max_attempts {
            let Some(&cand) = foreground.choose(rng) else { break };
            if box_inside(cand, ph, pw, h, w) {
                center = Some(cand);
                break;
            }
        }
        let center = center.ok_or(Error::PlacementExhausted { attempts: cfg.max_attempts })?;
        let alpha = gaussian_alpha(h, w, center, ph, pw, cfg.alpha_peak)?;
        insertions.push(TumorInsertion { patch_index, center, alpha });
    }
    let fake = blend_tumors(img, &insertions, set)?;
    let thr = T::lit(cfg.mask_threshold);
    let mask = Plane::from_fn(h, w, |r, c| insertions.iter().any(|i| i.alpha.get(r, c) > thr));
    Ok((fake, insertions, mask))
}

/// Inserts 1 to 3 tumors per chosen side. Deterministic in `seed`.
pub fn synthesize_asymmetric<T: Scalar>(
    pair: &BilateralPair<T>,
    set: &TumorSet<T>,
    seed: u64,
    policy: SidePolicy,
    cfg: &SynthConfig,
) -> Result<SynthesisRecord<T>> {
    if pair.y_asy || pair.y_r || pair.y_l {
        return Err(Error::Validation(format!("{}: synthesis needs a symmetric pair", pair.pair_id)));
    }
    if set.is_empty() {
        return Err(Error::EmptySet("tumor set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = match policy {
        SidePolicy::Random => [SidePolicy::Right, SidePolicy::Left, SidePolicy::Both][rng.gen_range(0..3)],
        p => p,
    };
    let (h, w) = pair.dims();
    let mut fake = pair.clone();
    let mut record = SynthesisRecord {
        fake: pair.clone(),
        real: pair.clone(),
        inserted_mask_r: Plane::filled(h, w, false),
        inserted_mask_l: Plane::filled(h, w, false),
        insertions_r: Vec::new(),
        insertions_l: Vec::new(),
    };
    if matches!(policy, SidePolicy::Right | SidePolicy::Both) {
        let (img, ins, mask) = place_side(&pair.right, set, &mut rng, cfg)?;
        fake.right = img;
        fake.y_r = true;
        fake.mask_r = Some(mask.clone());
        record.inserted_mask_r = mask;
        record.insertions_r = ins;
    }
    if matches!(policy, SidePolicy::Left | SidePolicy::Both) {
        let (img, ins, mask) = place_side(&pair.left, set, &mut rng, cfg)?;
        fake.left = img;
        fake.y_l = true;
        fake.mask_l = Some(mask.clone());
        record.inserted_mask_l = mask;
        record.insertions_l = ins;
    }
    fake.y_asy = true;
    fake.validate()?;
    record.fake = fake;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlab::procedural_tumor_set;

    fn symmetric_pair() -> BilateralPair<f64> {
        let p = Plane::from_fn(64, 32, |r, c| if c < 28 { 0.3 + 0.2 * ((r + c) % 5) as f64 / 5.0 } else { 0.0 });
        let right = GrayImage::new(p.clone(), Laterality::Right, crate::imgio::View::Cc).unwrap();
        let left = GrayImage::new(p, Laterality::Left, crate::imgio::View::Cc).unwrap();
        BilateralPair::new("s", right, left, false, false).unwrap()
    }

    #[test]
    fn right_policy_labels_only_the_right_side() {
        let set = procedural_tumor_set(1, 3, 6, 10).unwrap();
        let rec = synthesize_asymmetric(&symmetric_pair(), &set, 5, SidePolicy::Right, &SynthConfig::default()).unwrap();
        assert_eq!((rec.fake.y_r, rec.fake.y_l, rec.fake.y_asy), (true, false, true));
        assert!(rec.synthesized(Laterality::Right) && !rec.synthesized(Laterality::Left));
        assert_eq!(rec.fake.left, rec.real.left);
        assert!((1..=3).contains(&rec.insertions_r.len()));
    }

    #[test]
    fn mask_area_counts_alpha_above_threshold() {
        let set = procedural_tumor_set(2, 3, 6, 10).unwrap();
        let cfg = SynthConfig::default();
        let rec = synthesize_asymmetric(&symmetric_pair(), &set, 9, SidePolicy::Both, &cfg).unwrap();
        for (ins, mask) in [(&rec.insertions_r, &rec.inserted_mask_r), (&rec.insertions_l, &rec.inserted_mask_l)] {
            let mut count = 0;
            for r in 0..64 {
                for c in 0..32 {
                    let a = ins.iter().map(|i| i.alpha.get(r, c)).fold(0.0, f64::max);
                    if a > cfg.mask_threshold {
                        count += 1;
                    }
                }
            }
            assert_eq!(mask.count(), count);
        }
    }

    #[test]
    fn oversized_patches_exhaust_placement() {
        let set = procedural_tumor_set(2, 1, 40, 40).unwrap();
        let err = synthesize_asymmetric(&symmetric_pair(), &set, 0, SidePolicy::Left, &SynthConfig::default()).unwrap_err();
        assert!(matches!(err, Error::PlacementExhausted { attempts: 100 }));
    }

    #[test]
    fn asymmetric_inputs_and_empty_sets_are_rejected() {
        let set = procedural_tumor_set(2, 1, 6, 6).unwrap();
        let mut p = symmetric_pair();
        p.y_r = true;
        p.y_asy = true;
        assert!(synthesize_asymmetric(&p, &set, 0, SidePolicy::Right, &SynthConfig::default()).is_err());
        let empty = TumorSet::<f64> { patches: vec![], origin_dataset: "x".into() };
        assert!(matches!(
            synthesize_asymmetric(&symmetric_pair(), &empty, 0, SidePolicy::Right, &SynthConfig::default()),
            Err(Error::EmptySet(_))
        ));
    }
}
