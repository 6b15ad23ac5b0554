//! Procedural bilateral phantoms with known lesion masks.
//!
//! Both sides are produced in canonical orientation (chest wall on column
//! 0) from one shared anatomy; each side adds its own pixel noise. The
//! anatomy, each side's noise and the lesions draw from separate ChaCha
//! streams, so a lesion-free variant of a seed matches it outside lesions.

use bimg_tensor::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{blend_tumors, box_inside, gaussian_alpha, procedural_blob, TumorInsertion, TumorPatch, TumorSet};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Plane};
use crate::imgio::{BilateralPair, GrayImage, Laterality, View};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    /// Standard deviation of the per-side pixel noise.
    pub noise: f64,
    pub lesion_prob_right: f64,
    pub lesion_prob_left: f64,
    pub lesion_min: usize,
    pub lesion_max: usize,
    pub alpha_peak: f64,
    pub mask_threshold: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            height: 128,
            width: 64,
            noise: 0.02,
            lesion_prob_right: 0.5,
            lesion_prob_left: 0.5,
            lesion_min: 14,
            lesion_max: 22,
            alpha_peak: 0.9,
            mask_threshold: 0.25,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 8 {
            return Err(Error::Config("phantom size must be at least 16x8".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("phantom noise must be a nonnegative number".into()));
        }
        for p in [self.lesion_prob_right, self.lesion_prob_left] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("lesion probability {p} outside [0,1]")));
            }
        }
        if self.lesion_min < 4 || self.lesion_max < self.lesion_min || self.lesion_max >= self.width {
            return Err(Error::Config("lesion sizes must satisfy 4 <= min <= max < width".into()));
        }
        if !(self.alpha_peak > 0.0 && self.alpha_peak <= 1.0) || !(0.0..1.0).contains(&self.mask_threshold) {
            return Err(Error::Config("alpha peak must lie in (0,1] and mask threshold in [0,1)".into()));
        }
        Ok(())
    }
}

const STREAM_ANATOMY: u64 = 0;
const STREAM_NOISE_R: u64 = 1;
const STREAM_NOISE_L: u64 = 2;
const STREAM_LESIONS: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Half-ellipse anchored on column 0 that spans the full height and reaches
/// the far border around its middle, filled with low-frequency texture.
/// Background is exactly 0; tissue stays within `[0.35, 0.85]`.
fn anatomy(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Plane<f64> {
    let cy = h as f64 * rng.gen_range(0.47..0.53);
    let ay = h as f64 * rng.gen_range(0.56..0.64);
    let ax = w as f64 * rng.gen_range(1.02..1.12);
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let fy = rng.gen_range(0.5..3.0) / h as f64;
            let fx = rng.gen_range(0.5..3.0) / w as f64;
            let amp = rng.gen_range(0.02..0.06);
            (fy, fx, rng.gen_range(0.0..std::f64::consts::TAU), amp)
        })
        .collect();
    let density = rng.gen_range(0.1..0.2);
    Plane::from_fn(h, w, |r, c| {
        let dy = (r as f64 + 0.5 - cy) / ay;
        let dx = (c as f64 + 0.5) / ax;
        let d2 = dy * dy + dx * dx;
        if d2 >= 1.0 {
            return 0.0;
        }
        let tau = std::f64::consts::TAU;
        let texture: f64 = waves.iter().map(|&(fy, fx, ph, a)| a * (tau * (fy * r as f64 + fx * c as f64) + ph).cos()).sum();
        let glandular = density * (1.0 - dx).max(0.0);
        let skin = 0.8 + 0.2 * (1.0 - d2).sqrt();
        ((0.5 + glandular + texture) * skin).clamp(0.35, 0.85)
    })
}

fn add_noise(base: &Plane<f64>, sigma: f64, rng: &mut ChaCha8Rng) -> Plane<f64> {
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let noise: Vec<f64> = (0..base.len()).map(|_| normal.sample(rng)).collect();
    let mut out = base.clone();
    for (v, n) in out.data_mut().iter_mut().zip(noise) {
        if *v != 0.0 && sigma > 0.0 {
            *v = (*v + n).clamp(0.05, 1.0);
        }
    }
    out
}

fn lesion<T: Scalar>(
    img: &GrayImage<T>,
    anatomy: &Plane<f64>,
    rng: &mut ChaCha8Rng,
    cfg: &PhantomConfig,
) -> Result<(GrayImage<T>, BinaryMask)> {
    let (h, w) = img.pixels.dims();
    let ph = rng.gen_range(cfg.lesion_min..=cfg.lesion_max);
    let pw = rng.gen_range(cfg.lesion_min..=cfg.lesion_max);
    let patch: Plane<T> = procedural_blob(rng, ph, pw);
    let candidates: Vec<(usize, usize)> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .filter(|&(r, c)| anatomy.get(r, c) > 0.0 && box_inside((r, c), ph, pw, h, w))
        .filter(|&(r, c)| {
            let (r0, c0) = super::patch_origin((r, c), ph, pw);
            let (r0, c0) = (r0 as usize, c0 as usize);
            [(r0, c0), (r0 + ph - 1, c0), (r0, c0 + pw - 1), (r0 + ph - 1, c0 + pw - 1)]
                .iter()
                .all(|&(y, x)| anatomy.get(y, x) > 0.0)
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::PlacementExhausted { attempts: 0 });
    }
    let center = candidates[rng.gen_range(0..candidates.len())];
    let alpha: Plane<T> = gaussian_alpha(h, w, center, ph, pw, cfg.alpha_peak)?;
    let set = TumorSet { patches: vec![TumorPatch { patch, source_id: "phantom".into(), bbox: None }], origin_dataset: "phantom".into() };
    let ins = [TumorInsertion { patch_index: 0, center, alpha }];
    let out = blend_tumors(img, &ins, &set)?;
    let thr = T::lit(cfg.mask_threshold);
    let mask = ins[0].alpha.map(|a| a > thr);
    Ok((out, mask))
}

/// Mirror-symmetric phantom pair with lesions drawn per side.
pub fn generate_phantom<T: Scalar>(seed: u64, pair_id: impl Into<String>, view: View, cfg: &PhantomConfig) -> Result<BilateralPair<T>> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let base = anatomy(&mut stream(seed, STREAM_ANATOMY), h, w);
    let right = add_noise(&base, cfg.noise, &mut stream(seed, STREAM_NOISE_R));
    let left = add_noise(&base, cfg.noise, &mut stream(seed, STREAM_NOISE_L));
    let mut right = GrayImage::new(right.cast::<T>(), Laterality::Right, view)?;
    let mut left = GrayImage::new(left.cast::<T>(), Laterality::Left, view)?;
    let mut rng = stream(seed, STREAM_LESIONS);
    let draw_r = rng.gen_bool(cfg.lesion_prob_right);
    let draw_l = rng.gen_bool(cfg.lesion_prob_left);
    let mut mask_r = Plane::filled(h, w, false);
    let mut mask_l = Plane::filled(h, w, false);
    if draw_r {
        (right, mask_r) = lesion(&right, &base, &mut rng, cfg)?;
    }
    if draw_l {
        (left, mask_l) = lesion(&left, &base, &mut rng, cfg)?;
    }
    BilateralPair::new(pair_id, right, left, draw_r, draw_l)?.with_masks(Some(mask_r), Some(mask_l))
}
