//! RGB panels: CAM overlays, image strips and the loss curve.

use std::path::Path;

use bimg_tensor::Scalar;

use super::metrics::binarize_cam;
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Plane};
use crate::imgio::save_rgb_png;

pub const HEAT: [u8; 3] = [255, 32, 0];
pub const CAM_CONTOUR: [u8; 3] = [255, 230, 0];
pub const MASK_CONTOUR: [u8; 3] = [0, 220, 60];
const HEAT_OPACITY: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl RgbImage {
    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        RgbImage { height, width, data: rgb.repeat(height * width) }
    }

    pub fn from_gray<T: Scalar>(p: &Plane<T>) -> Self {
        let data = p.data().iter().flat_map(|&v| [to_u8(v.as_f64()); 3]).collect();
        RgbImage { height: p.height(), width: p.width(), data }
    }

    pub fn get(&self, r: usize, c: usize) -> [u8; 3] {
        let i = 3 * (r * self.width + c);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, r: usize, c: usize, rgb: [u8; 3]) {
        let i = 3 * (r * self.width + c);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_rgb_png(path, self.height, self.width, self.data.clone())
    }
}

/// Set pixels with at least one 4-neighbour outside the set or the frame.
pub fn contour(m: &BinaryMask) -> BinaryMask {
    let (h, w) = m.dims();
    Plane::from_fn(h, w, |r, c| {
        m.get(r, c) && (r == 0 || c == 0 || r + 1 == h || c + 1 == w || !m.get(r - 1, c) || !m.get(r + 1, c) || !m.get(r, c - 1) || !m.get(r, c + 1))
    })
}

/// Grayscale image under a translucent CAM heat layer, the CAM contour at
/// `threshold` and, if given, the reference mask contour.
pub fn overlay<T: Scalar>(img: &Plane<T>, cam: &Plane<T>, threshold: f64, mask: Option<&BinaryMask>) -> Result<RgbImage> {
    if !img.same_dims(cam) || mask.is_some_and(|m| m.dims() != img.dims()) {
        return Err(Error::Validation("overlay inputs differ in size".into()));
    }
    let mut out = RgbImage::from_gray(img);
    for r in 0..img.height() {
        for c in 0..img.width() {
            let a = HEAT_OPACITY * cam.get(r, c).as_f64().clamp(0.0, 1.0);
            let base = out.get(r, c);
            let mix = |k: usize| (base[k] as f64 * (1.0 - a) + HEAT[k] as f64 * a).round() as u8;
            out.set(r, c, [mix(0), mix(1), mix(2)]);
        }
    }
    let edges = contour(&binarize_cam(cam, threshold)?);
    for (r, c) in positions(&edges) {
        out.set(r, c, CAM_CONTOUR);
    }
    if let Some(m) = mask {
        for (r, c) in positions(&contour(m)) {
            out.set(r, c, MASK_CONTOUR);
        }
    }
    Ok(out)
}

fn positions(m: &BinaryMask) -> impl Iterator<Item = (usize, usize)> + '_ {
    let w = m.width();
    m.data().iter().enumerate().filter(|(_, &v)| v).map(move |(i, _)| (i / w, i % w))
}

/// Panels side by side with a two-pixel black gap.
pub fn hconcat(panels: &[RgbImage]) -> Result<RgbImage> {
    const GAP: usize = 2;
    let Some(first) = panels.first() else {
        return Err(Error::Validation("no panels".into()));
    };
    let h = first.height;
    if panels.iter().any(|p| p.height != h) {
        return Err(Error::Validation("panels differ in height".into()));
    }
    let w = panels.iter().map(|p| p.width).sum::<usize>() + GAP * (panels.len() - 1);
    let mut out = RgbImage::filled(h, w, [0, 0, 0]);
    let mut x0 = 0;
    for p in panels {
        for r in 0..h {
            let src = &p.data[3 * r * p.width..3 * (r + 1) * p.width];
            out.data[3 * (r * w + x0)..3 * (r * w + x0 + p.width)].copy_from_slice(src);
        }
        x0 += p.width + GAP;
    }
    Ok(out)
}

const SERIES: [(&str, [u8; 3]); 6] = [
    ("loss_total", [0, 0, 0]),
    ("loss_diag", [214, 39, 40]),
    ("loss_rec", [31, 119, 180]),
    ("loss_dics", [44, 160, 44]),
    ("loss_syn", [148, 103, 189]),
    ("loss_refine", [255, 127, 14]),
];

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), rgb: [u8; 3]) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as usize) < img.width && (y as usize) < img.height {
            img.set(y as usize, x as usize, rgb);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Per-step loss components of a metrics CSV drawn as polylines on a
/// shared linear axis starting at zero. Colours follow `SERIES`.
pub fn loss_curve_png(metrics_csv: &Path, png: &Path) -> Result<()> {
    const W: usize = 640;
    const H: usize = 360;
    const M: usize = 24;
    let err = |e: csv::Error| Error::Validation(format!("{}: {e}", metrics_csv.display()));
    let mut rdr = csv::Reader::from_path(metrics_csv).map_err(err)?;
    let headers = rdr.headers().map_err(err)?.clone();
    let cols: Vec<(usize, [u8; 3])> =
        SERIES.iter().filter_map(|(name, rgb)| headers.iter().position(|h| h == *name).map(|i| (i, *rgb))).collect();
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); cols.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(err)?;
        let Some(step) = rec.get(0).and_then(|s| s.parse::<f64>().ok()) else { continue };
        for (k, &(i, _)) in cols.iter().enumerate() {
            if let Some(v) = rec.get(i).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite()) {
                series[k].push((step, v));
            }
        }
    }
    let pts = series.iter().flatten();
    let x_max = pts.clone().map(|p| p.0).fold(1.0, f64::max);
    let y_max = pts.map(|p| p.1).fold(1e-12, f64::max);
    let mut img = RgbImage::filled(H, W, [255, 255, 255]);
    let to_px = |(x, y): (f64, f64)| {
        let px = M as f64 + x / x_max * (W - 2 * M) as f64;
        let py = (H - M) as f64 - y / y_max * (H - 2 * M) as f64;
        (px.round() as i64, py.round() as i64)
    };
    draw_line(&mut img, (M as i64, (H - M) as i64), ((W - M) as i64, (H - M) as i64), [120, 120, 120]);
    draw_line(&mut img, (M as i64, M as i64), (M as i64, (H - M) as i64), [120, 120, 120]);
    for (s, &(_, rgb)) in series.iter().zip(&cols) {
        for w in s.windows(2) {
            draw_line(&mut img, to_px(w[0]), to_px(w[1]), rgb);
        }
        if let [only] = s.as_slice() {
            let p = to_px(*only);
            draw_line(&mut img, p, p, rgb);
        }
    }
    img.save(png)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contour_of_a_block_is_its_rim() {
        let m = Plane::from_fn(6, 6, |r, c| (1..5).contains(&r) && (1..5).contains(&c));
        let e = contour(&m);
        assert_eq!(e.count(), 12);
        assert!(!e.get(2, 2) && e.get(1, 1));
    }

    #[test]
    fn overlay_marks_cam_and_mask_edges() {
        let img = Plane::filled(8, 8, 0.5f64);
        let cam = Plane::from_fn(8, 8, |r, c| if (2..6).contains(&r) && (2..6).contains(&c) { 1.0 } else { 0.0 });
        let mask = Plane::from_fn(8, 8, |r, _| r == 7);
        let o = overlay(&img, &cam, 0.5, Some(&mask)).unwrap();
        assert_eq!(o.get(2, 2), CAM_CONTOUR);
        assert_eq!(o.get(7, 3), MASK_CONTOUR);
        assert_eq!(o.get(0, 0), [128, 128, 128]);
        assert!(overlay(&img, &Plane::filled(4, 4, 0.0), 0.5, None).is_err());
    }

    #[test]
    fn hconcat_places_panels_with_a_gap() {
        let a = RgbImage::filled(2, 3, [1, 1, 1]);
        let b = RgbImage::filled(2, 1, [9, 9, 9]);
        let c = hconcat(&[a, b]).unwrap();
        assert_eq!((c.height, c.width), (2, 6));
        assert_eq!(c.get(1, 2), [1, 1, 1]);
        assert_eq!(c.get(1, 3), [0, 0, 0]);
        assert_eq!(c.get(0, 5), [9, 9, 9]);
    }

    #[test]
    fn loss_curve_renders_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("m.csv");
        std::fs::write(&csv, "step,epoch,lr,loss_total,loss_diag\n0,0,0.1,2.0,1.5\n1,0,0.1,1.0,0.5\n2,0,0.1,,\n").unwrap();
        let png = dir.path().join("c.png");
        loss_curve_png(&csv, &png).unwrap();
        let img = image::open(&png).unwrap();
        assert_eq!((img.width(), img.height()), (640, 360));
    }
}
