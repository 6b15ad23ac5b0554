//! Breast-region crop, intensity rescale, resize and mirroring.

use bimg_tensor::Scalar;

use super::resample::{resize_bilinear, resize_nearest};
use super::{GrayImage, Laterality, View};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Plane};

/// Undecoded single-channel intensities in any nonnegative range.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::DegenerateInput("empty image".into()));
        }
        if pixels.len() != height * width {
            return Err(Error::Validation(format!("raw image {height}x{width} needs {} values", height * width)));
        }
        if pixels.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation("raw intensities must be finite and nonnegative".into()));
        }
        Ok(RawImage { height, width, pixels })
    }

    pub fn from_plane<T: Scalar>(p: &Plane<T>) -> Result<Self> {
        Self::new(p.height(), p.width(), p.data().iter().map(|v| v.as_f64()).collect())
    }
}

/// Crop and orientation applied by [`preprocess`]; replays the same
/// geometry on masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub crop_row: usize,
    pub crop_col: usize,
    pub crop_h: usize,
    pub crop_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub mirrored: bool,
}

impl Geometry {
    pub fn apply_mask(&self, mask: &BinaryMask) -> BinaryMask {
        let cropped = mask.crop(self.crop_row, self.crop_col, self.crop_h, self.crop_w).expect("crop inside mask");
        let m = resize_nearest(&cropped, self.out_h, self.out_w);
        if self.mirrored {
            m.mirrored()
        } else {
            m
        }
    }
}

/// Otsu threshold over a 256-bin histogram spanning `[min, max]`. Returns
/// the upper edge of the last background bin; foreground is `v > t`.
pub fn otsu_threshold(values: &[f64]) -> Option<f64> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return None;
    }
    const BINS: usize = 256;
    let scale = BINS as f64 / (hi - lo);
    let mut hist = [0u64; BINS];
    for &v in values {
        hist[(((v - lo) * scale) as usize).min(BINS - 1)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &n)| i as f64 * n as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_k) = (-1.0, 0);
    for (k, &n) in hist.iter().enumerate().take(BINS - 1) {
        w0 += n as f64;
        sum0 += k as f64 * n as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_k = k;
        }
    }
    Some(lo + (best_k + 1) as f64 / scale)
}

/// Otsu foreground, largest 4-connected component, bounding-box crop,
/// bilinear resize to `(target_h, target_w)`, min-max rescale to `[0,1]`,
/// and a horizontal flip for left views.
pub fn preprocess<T: Scalar>(
    raw: &RawImage,
    laterality: Laterality,
    view: View,
    target_h: usize,
    target_w: usize,
) -> Result<(GrayImage<T>, Geometry)> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::Config("target size must be positive".into()));
    }
    if raw.pixels.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateInput("all-zero image".into()));
    }
    let t = otsu_threshold(&raw.pixels).ok_or_else(|| Error::DegenerateInput("constant image has no foreground contrast".into()))?;
    let fg = Plane::new(raw.height, raw.width, raw.pixels.iter().map(|&v| v > t).collect())?;
    let largest = fg
        .components(false)
        .into_iter()
        .max_by_key(|c| c.count())
        .ok_or_else(|| Error::DegenerateInput("no foreground".into()))?;
    let (r0, c0, h, w) = largest.bbox().expect("nonempty component");
    let src = Plane::new(raw.height, raw.width, raw.pixels.clone())?;
    let crop = src.crop(r0, c0, h, w)?;
    let resized = resize_bilinear(&crop, target_h, target_w);
    let norm = resized
        .min_max_normalized()
        .ok_or_else(|| Error::DegenerateInput("breast region is constant".into()))?;
    let mut pixels: Plane<T> = norm.cast();
    let mirrored = laterality == Laterality::Left;
    if mirrored {
        pixels = pixels.mirrored();
    }
    let geometry = Geometry { crop_row: r0, crop_col: c0, crop_h: h, crop_w: w, out_h: target_h, out_w: target_w, mirrored };
    Ok((GrayImage::new(pixels, laterality, view)?, geometry))
}
