//! Grayscale PNG decoding and encoding.

use std::path::Path;

use bimg_tensor::Scalar;
use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::manifest::{Manifest, ManifestRow};
use super::preprocess::{preprocess, RawImage};
use super::{BilateralPair, Laterality};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Plane};

fn image_err(path: &Path, e: impl ToString) -> Error {
    Error::Image { path: path.to_path_buf(), msg: e.to_string() }
}

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.is_file() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
    }
    image::open(path).map_err(|e| image_err(path, e))
}

/// Intensities divided by the format maximum (255 or 65535).
pub fn load_gray_png(path: impl AsRef<Path>) -> Result<RawImage> {
    let path = path.as_ref();
    let (w, h, pixels) = match open(path)? {
        DynamicImage::ImageLuma8(b) => (b.width(), b.height(), b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (b.width(), b.height(), b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()),
        other => {
            let b = other.into_luma16();
            (b.width(), b.height(), b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
        }
    };
    RawImage::new(h as usize, w as usize, pixels)
}

/// Nonzero pixels are set.
pub fn load_mask_png(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let b = open(path)?.into_luma16();
    let (w, h) = (b.width() as usize, b.height() as usize);
    Plane::new(h, w, b.into_raw().into_iter().map(|v| v != 0).collect())
}

/// 16-bit grayscale; values are clamped to `[0,1]` first.
pub fn save_gray_png<T: Scalar>(path: impl AsRef<Path>, p: &Plane<T>) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<u16> = p.data().iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(p.width() as u32, p.height() as u32, data).ok_or_else(|| image_err(path, "buffer size"))?;
    buf.save(path).map_err(|e| image_err(path, e))
}

pub fn save_mask_png(path: impl AsRef<Path>, m: &BinaryMask) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<u8> = m.data().iter().map(|&v| if v { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(m.width() as u32, m.height() as u32, data).ok_or_else(|| image_err(path, "buffer size"))?;
    buf.save(path).map_err(|e| image_err(path, e))
}

/// Interleaved RGB8 buffer of `height x width` pixels.
pub fn save_rgb_png(path: impl AsRef<Path>, height: usize, width: usize, rgb: Vec<u8>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, rgb).ok_or_else(|| image_err(path, "buffer size"))?;
    buf.save(path).map_err(|e| image_err(path, e))
}

/// Loads, preprocesses and pairs one manifest row. Masks follow the same
/// crop, resize and mirroring as their image.
pub fn load_pair<T: Scalar>(manifest: &Manifest, row: &ManifestRow, height: usize, width: usize) -> Result<BilateralPair<T>> {
    let side = |img: &Path, mask: Option<&std::path::PathBuf>, lat: Laterality| -> Result<_> {
        let raw = load_gray_png(manifest.resolve(img))?;
        let (g, geo) = preprocess::<T>(&raw, lat, row.view, height, width)?;
        let m = match mask {
            Some(p) => {
                let m = load_mask_png(manifest.resolve(p))?;
                if (m.height(), m.width()) != (raw.height, raw.width) {
                    return Err(Error::Validation(format!("{}: mask size differs from its image", row.pair_id)));
                }
                Some(geo.apply_mask(&m))
            }
            None => None,
        };
        Ok((g, m))
    };
    let (right, mask_r) = side(&row.right_path, row.mask_r_path.as_ref(), Laterality::Right)?;
    let (left, mask_l) = side(&row.left_path, row.mask_l_path.as_ref(), Laterality::Left)?;
    let mut pair = BilateralPair::new(row.pair_id.clone(), right, left, row.y_r, row.y_l)?;
    pair.y_asy = row.y_asy;
    pair.with_masks(mask_r, mask_l)
}
