//! Coordinate remapping with bilinear (intensities) or nearest (masks)
//! sampling. Integer source coordinates reproduce source pixels exactly.

use bimg_tensor::Scalar;

use crate::grid::{BinaryMask, Plane};

/// Align-corners coordinate of output index `i` over an output extent `n_out`
/// spanning `len` source pixels starting at `start`.
#[inline]
pub fn axis_coord(i: usize, n_out: usize, start: f64, len: f64) -> f64 {
    if n_out <= 1 {
        start + (len - 1.0) / 2.0
    } else {
        start + i as f64 * (len - 1.0) / (n_out - 1) as f64
    }
}

/// Bilinear sample at `(y, x)`; neighbours outside the plane read `outside`.
pub fn sample_bilinear<T: Scalar>(p: &Plane<T>, y: f64, x: f64, outside: T) -> T {
    let (h, w) = (p.height() as isize, p.width() as isize);
    let y0 = y.floor();
    let x0 = x.floor();
    let (wy, wx) = (T::lit(y - y0), T::lit(x - x0));
    let (y0, x0) = (y0 as isize, x0 as isize);
    let at = |r: isize, c: isize| {
        if r < 0 || c < 0 || r >= h || c >= w {
            outside
        } else {
            p.get(r as usize, c as usize)
        }
    };
    let top = if wx == T::zero() { at(y0, x0) } else { at(y0, x0) * (T::one() - wx) + at(y0, x0 + 1) * wx };
    if wy == T::zero() {
        return top;
    }
    let bottom = if wx == T::zero() { at(y0 + 1, x0) } else { at(y0 + 1, x0) * (T::one() - wx) + at(y0 + 1, x0 + 1) * wx };
    top * (T::one() - wy) + bottom * wy
}

/// Nearest sample at `(y, x)`; positions outside the plane read `false`.
pub fn sample_nearest(m: &BinaryMask, y: f64, x: f64) -> bool {
    let (r, c) = (y.round(), x.round());
    if r < 0.0 || c < 0.0 || r >= m.height() as f64 || c >= m.width() as f64 {
        return false;
    }
    m.get(r as usize, c as usize)
}

/// Samples the window `(oy, ox, wh, ww)` of `src` onto an `out_h x out_w` grid.
pub fn window_bilinear<T: Scalar>(src: &Plane<T>, window: (f64, f64, f64, f64), out_h: usize, out_w: usize, outside: T) -> Plane<T> {
    let (oy, ox, wh, ww) = window;
    Plane::from_fn(out_h, out_w, |i, j| {
        sample_bilinear(src, axis_coord(i, out_h, oy, wh), axis_coord(j, out_w, ox, ww), outside)
    })
}

pub fn window_nearest(src: &BinaryMask, window: (f64, f64, f64, f64), out_h: usize, out_w: usize) -> BinaryMask {
    let (oy, ox, wh, ww) = window;
    Plane::from_fn(out_h, out_w, |i, j| sample_nearest(src, axis_coord(i, out_h, oy, wh), axis_coord(j, out_w, ox, ww)))
}

/// Align-corners bilinear resize.
pub fn resize_bilinear<T: Scalar>(src: &Plane<T>, out_h: usize, out_w: usize) -> Plane<T> {
    window_bilinear(src, (0.0, 0.0, src.height() as f64, src.width() as f64), out_h, out_w, T::zero())
}

pub fn resize_nearest(src: &BinaryMask, out_h: usize, out_w: usize) -> BinaryMask {
    window_nearest(src, (0.0, 0.0, src.height() as f64, src.width() as f64), out_h, out_w)
}

/// Half-pixel-centre bilinear upsampling with edge clamping, used for
/// feature-grid to image maps.
pub fn upsample_bilinear_centered<T: Scalar>(src: &Plane<T>, out_h: usize, out_w: usize) -> Plane<T> {
    let (h, w) = (src.height() as f64, src.width() as f64);
    let coord = |i: usize, n: usize, len: f64| ((i as f64 + 0.5) * len / n as f64 - 0.5).clamp(0.0, len - 1.0);
    Plane::from_fn(out_h, out_w, |i, j| sample_bilinear(src, coord(i, out_h, h), coord(j, out_w, w), T::zero()))
}
