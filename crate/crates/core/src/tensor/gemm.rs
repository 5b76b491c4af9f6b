//! Strided matrix product `C = alpha·A·B + beta·C` over slices.

/// Matrix view: slice plus row and column strides.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> Mat<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }

    fn fits(&self, rows: usize, cols: usize) -> bool {
        rows == 0 || cols == 0 || (rows - 1) * self.rs + (cols - 1) * self.cs < self.data.len()
    }
}

/// `c` is row-major `m × n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64]) {
    assert!(a.fits(m, k) && b.fits(k, n) && c.len() >= m * n, "gemm operand out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the bounds of every operand were checked above and `c` does
    // not alias `a` or `b` (it is borrowed mutably).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
