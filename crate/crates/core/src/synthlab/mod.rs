//! Gaussian alpha maps, multi-tumor alpha blending, asymmetric pair
//! synthesis, tumor libraries and procedural phantoms.

mod dataset;
mod phantom;
mod synthesize;
mod tumors;

use bimg_tensor::Scalar;

pub use dataset::{phantom_seed, write_phantom_dataset, PhantomDataset, SplitFractions};
pub use phantom::{generate_phantom, PhantomConfig};
pub use synthesize::{synthesize_asymmetric, SidePolicy, SynthConfig, SynthesisRecord};
pub use tumors::{extract_tumor_patches, procedural_blob, procedural_tumor_set, TumorPatch, TumorSet};

use crate::error::{Error, Result};
use crate::grid::Plane;
use crate::imgio::GrayImage;

/// Alpha map of one placed patch. Nonzero only inside the patch's box.
#[derive(Debug, Clone, PartialEq)]
pub struct TumorInsertion<T> {
    pub patch_index: usize,
    pub center: (usize, usize),
    pub alpha: Plane<T>,
}

/// Top-left corner of a `ph x pw` box centred at `center`.
pub fn patch_origin(center: (usize, usize), ph: usize, pw: usize) -> (isize, isize) {
    (center.0 as isize - (ph / 2) as isize, center.1 as isize - (pw / 2) as isize)
}

/// Whether the whole `ph x pw` box centred at `center` lies inside `h x w`.
pub fn box_inside(center: (usize, usize), ph: usize, pw: usize, h: usize, w: usize) -> bool {
    let (r0, c0) = patch_origin(center, ph, pw);
    r0 >= 0 && c0 >= 0 && r0 as usize + ph <= h && c0 as usize + pw <= w
}

/// `peak * exp(-(dr^2 / 2 sr^2 + dc^2 / 2 sc^2))` with `s = size / 4`,
/// zero outside the patch box placed at `center`.
pub fn gaussian_alpha<T: Scalar>(
    image_h: usize,
    image_w: usize,
    center: (usize, usize),
    patch_h: usize,
    patch_w: usize,
    alpha_peak: f64,
) -> Result<Plane<T>> {
    if center.0 >= image_h || center.1 >= image_w {
        return Err(Error::Placement(format!("center {center:?} outside {image_h}x{image_w} image")));
    }
    if !(alpha_peak > 0.0 && alpha_peak <= 1.0) {
        return Err(Error::Config(format!("alpha_peak {alpha_peak} must lie in (0, 1]")));
    }
    if patch_h == 0 || patch_w == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    let (sr, sc) = (patch_h as f64 / 4.0, patch_w as f64 / 4.0);
    let (top, left) = patch_origin(center, patch_h, patch_w);
    let mut alpha = Plane::zeros(image_h, image_w);
    let rows = top.max(0) as usize..((top + patch_h as isize).max(0) as usize).min(image_h);
    let cols = left.max(0) as usize..((left + patch_w as isize).max(0) as usize).min(image_w);
    for r in rows {
        let dr = r as f64 - center.0 as f64;
        for c in cols.clone() {
            let dc = c as f64 - center.1 as f64;
            let e = (dr * dr) / (2.0 * sr * sr) + (dc * dc) / (2.0 * sc * sc);
            alpha.set(r, c, T::lit(alpha_peak * (-e).exp()));
        }
    }
    Ok(alpha)
}

/// `clamp(x * prod(1 - a_k) + sum(t_k * a_k), 0, 1)` where `t_k` is patch
/// `k` placed at its centre (zero elsewhere). Pixels untouched by every
/// alpha keep their exact input value.
pub fn blend_tumors<T: Scalar>(x: &GrayImage<T>, insertions: &[TumorInsertion<T>], patches: &TumorSet<T>) -> Result<GrayImage<T>> {
    if insertions.is_empty() || insertions.len() > 3 {
        return Err(Error::Config(format!("between 1 and 3 insertions required, got {}", insertions.len())));
    }
    let (h, w) = x.pixels.dims();
    let mut placed = Vec::with_capacity(insertions.len());
    for ins in insertions {
        let patch = patches
            .patches
            .get(ins.patch_index)
            .ok_or_else(|| Error::Lookup(format!("patch index {} out of range ({} patches)", ins.patch_index, patches.len())))?;
        if ins.alpha.dims() != (h, w) {
            return Err(Error::Validation("alpha map must match the image size".into()));
        }
        let (ph, pw) = patch.patch.dims();
        placed.push((patch, patch_origin(ins.center, ph, pw), &ins.alpha));
    }
    let mut out = x.pixels.clone();
    for r in 0..h {
        for c in 0..w {
            if placed.iter().all(|(_, _, a)| a.get(r, c) == T::zero()) {
                continue;
            }
            let mut keep = T::one();
            let mut add = T::zero();
            for (patch, (r0, c0), a) in &placed {
                let a = a.get(r, c);
                keep *= T::one() - a;
                let (pr, pc) = (r as isize - r0, c as isize - c0);
                let (ph, pw) = patch.patch.dims();
                if pr >= 0 && pc >= 0 && (pr as usize) < ph && (pc as usize) < pw {
                    add += patch.patch.get(pr as usize, pc as usize) * a;
                }
            }
            let v = x.pixels.get(r, c) * keep + add;
            out.set(r, c, v.max(T::zero()).min(T::one()));
        }
    }
    Ok(x.with_pixels(out))
}
