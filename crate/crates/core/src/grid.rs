//! Row-major 2-D arrays: images, alpha maps, CAMs and binary masks.

use bimg_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// `{0,1}` mask stored as booleans.
pub type BinaryMask = Plane<bool>;

impl<T: Copy> Plane<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Validation(format!(
                "plane {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Plane { height, width, data })
    }

    pub fn filled(height: usize, width: usize, v: T) -> Self {
        Plane { height, width, data: vec![v; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Plane { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.width + c] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn same_dims<U>(&self, other: &Plane<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Horizontal flip: column `c` becomes `width - 1 - c`.
    pub fn mirrored(&self) -> Self {
        Plane::from_fn(self.height, self.width, |r, c| self.get(r, self.width - 1 - c))
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Plane<U> {
        Plane { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Sub-rectangle starting at `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, h: usize, w: usize) -> Result<Self> {
        if r0 + h > self.height || c0 + w > self.width {
            return Err(Error::Validation(format!(
                "crop {h}x{w} at ({r0},{c0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(Plane::from_fn(h, w, |r, c| self.get(r0 + r, c0 + c)))
    }
}

impl<T: Scalar> Plane<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Plane::filled(height, width, T::zero())
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        self.data.iter().copied().sum::<T>() / T::from_usize_lossy(self.data.len())
    }

    /// Mean absolute difference (the per-pixel L1 distance).
    pub fn l1(&self, other: &Self) -> Result<T> {
        if !self.same_dims(other) {
            return Err(Error::Validation(format!(
                "L1 between {}x{} and {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let s: T = self.data.iter().zip(&other.data).map(|(&a, &b)| (a - b).abs()).sum();
        Ok(s / T::from_usize_lossy(self.data.len()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|&v| v >= T::zero() && v <= T::one())
    }

    /// Affine rescale onto `[0, 1]`; `None` when the plane is constant.
    pub fn min_max_normalized(&self) -> Option<Self> {
        let (lo, hi) = self.min_max();
        if !(hi > lo) {
            return None;
        }
        let span = hi - lo;
        Some(self.map(|v| ((v - lo) / span).max(T::zero()).min(T::one())))
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_vec(&[1, 1, self.height, self.width], self.data.clone()).expect("plane dims")
    }

    pub fn cast<U: Scalar>(&self) -> Plane<U> {
        self.map(|v| U::lit(v.as_f64()))
    }
}

impl Plane<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&v| v)
    }

    /// Tight bounding box `(r0, c0, h, w)` of the set pixels.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    r0 = r0.min(r);
                    r1 = r1.max(r);
                    c0 = c0.min(c);
                    c1 = c1.max(c);
                }
            }
        }
        (r0 != usize::MAX).then(|| (r0, c0, r1 - r0 + 1, c1 - c0 + 1))
    }

    /// Connected components of the set pixels in raster order of their
    /// first pixel. `diagonal` selects 8- over 4-connectivity.
    pub fn components(&self, diagonal: bool) -> Vec<BinaryMask> {
        let (h, w) = self.dims();
        let mut label = vec![usize::MAX; h * w];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for start in 0..h * w {
            if !self.data[start] || label[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut comp = Plane::filled(h, w, false);
            label[start] = id;
            stack.push(start);
            while let Some(i) = stack.pop() {
                comp.data[i] = true;
                let (r, c) = ((i / w) as isize, (i % w) as isize);
                for dr in -1isize..=1 {
                    for dc in -1isize..=1 {
                        if (dr == 0 && dc == 0) || (!diagonal && dr != 0 && dc != 0) {
                            continue;
                        }
                        let (nr, nc) = (r + dr, c + dc);
                        if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                            continue;
                        }
                        let j = nr as usize * w + nc as usize;
                        if self.data[j] && label[j] == usize::MAX {
                            label[j] = id;
                            stack.push(j);
                        }
                    }
                }
            }
            out.push(comp);
        }
        out
    }
}
