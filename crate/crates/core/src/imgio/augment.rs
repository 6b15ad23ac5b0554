//! Random zoom and crop, resampled back onto the canonical grid.

use bimg_tensor::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::resample::{window_bilinear, window_nearest};
use super::{BilateralPair, GrayImage};
use crate::error::{Error, Result};
use crate::grid::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub zoom_min: f64,
    pub zoom_max: f64,
    /// Fraction of each axis kept before zooming.
    pub crop_fraction: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams { zoom_min: 0.9, zoom_max: 1.1, crop_fraction: 0.9 }
    }
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams { zoom_min: 1.0, zoom_max: 1.0, crop_fraction: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_zoom = (0.8..=1.2).contains(&self.zoom_min) && (0.8..=1.2).contains(&self.zoom_max) && self.zoom_min <= self.zoom_max;
        if !ok_zoom {
            return Err(Error::Config(format!("zoom range [{}, {}] must lie within [0.8, 1.2]", self.zoom_min, self.zoom_max)));
        }
        if !(self.crop_fraction > 0.8 && self.crop_fraction <= 1.0) {
            return Err(Error::Config(format!("crop fraction {} must lie in (0.8, 1.0]", self.crop_fraction)));
        }
        Ok(())
    }

    /// Draws one transform for an `h x w` image.
    pub fn sample(&self, seed: u64, h: usize, w: usize) -> Result<AugmentTransform> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zoom = if self.zoom_max > self.zoom_min { rng.gen_range(self.zoom_min..=self.zoom_max) } else { self.zoom_min };
        let win_h = h as f64 * self.crop_fraction / zoom;
        let win_w = w as f64 * self.crop_fraction / zoom;
        let mut offset = |len: f64, win: f64| {
            let slack = len - win;
            if slack == 0.0 {
                0.0
            } else {
                rng.gen_range(slack.min(0.0)..=slack.max(0.0))
            }
        };
        let off_y = offset(h as f64, win_h);
        let off_x = offset(w as f64, win_w);
        Ok(AugmentTransform { off_y, off_x, win_h, win_w })
    }
}

/// Source window mapped onto the full output grid. Pixels sampled from
/// outside the source read as background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentTransform {
    pub off_y: f64,
    pub off_x: f64,
    pub win_h: f64,
    pub win_w: f64,
}

impl AugmentTransform {
    fn window(&self) -> (f64, f64, f64, f64) {
        (self.off_y, self.off_x, self.win_h, self.win_w)
    }

    pub fn apply<T: Scalar>(&self, img: &GrayImage<T>) -> GrayImage<T> {
        let p = window_bilinear(&img.pixels, self.window(), img.height(), img.width(), T::zero());
        img.with_pixels(p.map(|v| v.max(T::zero()).min(T::one())))
    }

    pub fn apply_mask(&self, m: &BinaryMask) -> BinaryMask {
        window_nearest(m, self.window(), m.height(), m.width())
    }
}

pub fn augment<T: Scalar>(img: &GrayImage<T>, seed: u64, params: &AugmentParams) -> Result<GrayImage<T>> {
    Ok(params.sample(seed, img.height(), img.width())?.apply(img))
}

/// One shared transform for both sides and both masks.
pub fn augment_pair<T: Scalar>(pair: &BilateralPair<T>, seed: u64, params: &AugmentParams) -> Result<BilateralPair<T>> {
    let (h, w) = pair.dims();
    let t = params.sample(seed, h, w)?;
    Ok(BilateralPair {
        pair_id: pair.pair_id.clone(),
        right: t.apply(&pair.right),
        left: t.apply(&pair.left),
        y_r: pair.y_r,
        y_l: pair.y_l,
        y_asy: pair.y_asy,
        mask_r: pair.mask_r.as_ref().map(|m| t.apply_mask(m)),
        mask_l: pair.mask_l.as_ref().map(|m| t.apply_mask(m)),
    })
}
