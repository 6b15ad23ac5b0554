//! Bounds-checked strided matrix multiply on top of `matrixmultiply`.

use crate::scalar::Scalar;

/// A strided 2-D view into a flat buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Layout { offset: 0, rows, cols, rs: cols, cs: 1 }
    }

    /// Row-major sub-block: `rows x cols` starting at `offset`, with row stride `rs`.
    pub fn strided(offset: usize, rows: usize, cols: usize, rs: usize) -> Self {
        Layout { offset, rows, cols, rs, cs: 1 }
    }

    pub fn at(mut self, offset: usize) -> Self {
        self.offset = offset;
        self
    }

    /// Transposed view of the same storage.
    pub fn t(self) -> Self {
        Layout { offset: self.offset, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn end(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return self.offset;
        }
        self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
    }
}

/// `C = alpha * A * B + beta * C`.
///
/// Panics on inconsistent dimensions or out-of-bounds views.
pub fn gemm<T: Scalar>(
    alpha: T,
    a: &[T],
    la: Layout,
    b: &[T],
    lb: Layout,
    beta: T,
    c: &mut [T],
    lc: Layout,
) {
    assert_eq!(la.rows, lc.rows, "gemm: A rows vs C rows");
    assert_eq!(la.cols, lb.rows, "gemm: inner dimension");
    assert_eq!(lb.cols, lc.cols, "gemm: B cols vs C cols");
    assert!(la.end() <= a.len(), "gemm: A view out of bounds");
    assert!(lb.end() <= b.len(), "gemm: B view out of bounds");
    assert!(lc.end() <= c.len(), "gemm: C view out of bounds");
    let (m, k, n) = (la.rows, la.cols, lb.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = lc.offset + i * lc.rs + j * lc.cs;
                c[idx] = if beta == T::zero() { T::zero() } else { c[idx] * beta };
            }
        }
        return;
    }
    // SAFETY: the asserts above bound every reachable index of each view.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(la.offset),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr().add(lb.offset),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr().add(lc.offset),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}
