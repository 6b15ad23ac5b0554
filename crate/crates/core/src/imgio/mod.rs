//! Images, bilateral pairs, manifests, preprocessing and augmentation.

mod augment;
mod manifest;
mod png;
mod preprocess;
pub mod resample;

use std::fmt;
use std::str::FromStr;

use bimg_tensor::Scalar;

pub use augment::{augment, augment_pair, AugmentParams, AugmentTransform};
pub use manifest::{load_manifest, write_manifest, Manifest, ManifestRow, Split};
pub use png::{load_gray_png, load_mask_png, load_pair, save_gray_png, save_mask_png, save_rgb_png};
pub use preprocess::{otsu_threshold, preprocess, Geometry, RawImage};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Plane};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Laterality {
    Right,
    Left,
}

impl Laterality {
    pub fn other(self) -> Self {
        match self {
            Laterality::Right => Laterality::Left,
            Laterality::Left => Laterality::Right,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Laterality::Right => "right",
            Laterality::Left => "left",
        }
    }
}

impl fmt::Display for Laterality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum View {
    Cc,
    Mlo,
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Cc => "CC",
            View::Mlo => "MLO",
        })
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CC" => Ok(View::Cc),
            "MLO" => Ok(View::Mlo),
            other => Err(Error::Validation(format!("unknown view `{other}`"))),
        }
    }
}

/// Preprocessed single-view image. Left views are stored mirrored so the
/// chest wall sits on column 0 for both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage<T> {
    pub pixels: Plane<T>,
    pub laterality: Laterality,
    pub view: View,
}

impl<T: Scalar> GrayImage<T> {
    pub fn new(pixels: Plane<T>, laterality: Laterality, view: View) -> Result<Self> {
        if !pixels.all_finite() || !pixels.in_unit_range() {
            return Err(Error::Validation("image pixels must be finite and within [0,1]".into()));
        }
        Ok(GrayImage { pixels, laterality, view })
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn with_pixels(&self, pixels: Plane<T>) -> Self {
        GrayImage { pixels, laterality: self.laterality, view: self.view }
    }

    pub fn cast<U: Scalar>(&self) -> GrayImage<U> {
        GrayImage { pixels: self.pixels.cast(), laterality: self.laterality, view: self.view }
    }
}

/// `y_asy = 1 - (1 - y_r)(1 - y_l)`.
pub fn asymmetry_label(y_r: bool, y_l: bool) -> bool {
    y_r || y_l
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilateralPair<T> {
    pub pair_id: String,
    pub right: GrayImage<T>,
    pub left: GrayImage<T>,
    pub y_r: bool,
    pub y_l: bool,
    pub y_asy: bool,
    pub mask_r: Option<BinaryMask>,
    pub mask_l: Option<BinaryMask>,
}

impl<T: Scalar> BilateralPair<T> {
    /// Pair with `y_asy` derived from the side labels.
    pub fn new(pair_id: impl Into<String>, right: GrayImage<T>, left: GrayImage<T>, y_r: bool, y_l: bool) -> Result<Self> {
        let pair = BilateralPair {
            pair_id: pair_id.into(),
            right,
            left,
            y_r,
            y_l,
            y_asy: asymmetry_label(y_r, y_l),
            mask_r: None,
            mask_l: None,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn with_masks(mut self, mask_r: Option<BinaryMask>, mask_l: Option<BinaryMask>) -> Result<Self> {
        self.mask_r = mask_r;
        self.mask_l = mask_l;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.y_asy && (self.y_r || self.y_l) {
            return Err(Error::Validation(format!("{}: y_asy = 0 with an abnormal side", self.pair_id)));
        }
        if self.right.view != self.left.view {
            return Err(Error::Validation(format!("{}: sides have different views", self.pair_id)));
        }
        if !self.right.pixels.same_dims(&self.left.pixels) {
            return Err(Error::Validation(format!("{}: sides have different dimensions", self.pair_id)));
        }
        for m in [&self.mask_r, &self.mask_l].into_iter().flatten() {
            if !m.same_dims(&self.right.pixels) {
                return Err(Error::Validation(format!("{}: mask dimensions differ from image", self.pair_id)));
            }
        }
        Ok(())
    }

    pub fn side(&self, side: Laterality) -> &GrayImage<T> {
        match side {
            Laterality::Right => &self.right,
            Laterality::Left => &self.left,
        }
    }

    pub fn label(&self, side: Laterality) -> bool {
        match side {
            Laterality::Right => self.y_r,
            Laterality::Left => self.y_l,
        }
    }

    pub fn mask(&self, side: Laterality) -> Option<&BinaryMask> {
        match side {
            Laterality::Right => self.mask_r.as_ref(),
            Laterality::Left => self.mask_l.as_ref(),
        }
    }

    /// Exchanges the two sides together with their labels and masks.
    pub fn swapped(&self) -> Self {
        let mut right = self.left.clone();
        let mut left = self.right.clone();
        right.laterality = Laterality::Right;
        left.laterality = Laterality::Left;
        BilateralPair {
            pair_id: self.pair_id.clone(),
            right,
            left,
            y_r: self.y_l,
            y_l: self.y_r,
            y_asy: self.y_asy,
            mask_r: self.mask_l.clone(),
            mask_l: self.mask_r.clone(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.right.pixels.dims()
    }

    pub fn cast<U: Scalar>(&self) -> BilateralPair<U> {
        BilateralPair {
            pair_id: self.pair_id.clone(),
            right: self.right.cast(),
            left: self.left.cast(),
            y_r: self.y_r,
            y_l: self.y_l,
            y_asy: self.y_asy,
            mask_r: self.mask_r.clone(),
            mask_l: self.mask_l.clone(),
        }
    }
}
