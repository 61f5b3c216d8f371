//! Complex matrix products through the `matrixmultiply` kernels, which beat
//! the generic ones from about 8×8 upwards.

use matrixmultiply::{zgemm, CGemmOption};

use crate::CMatrix;

/// Multiply-adds below which the generic product is faster.
const KERNEL_MIN_WORK: usize = 512;

/// a·b.
pub(crate) fn mul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.ncols(), b.nrows(), "inner dimensions differ");
    let (m, k, n) = (a.nrows(), a.ncols(), b.ncols());
    if m * k * n < KERNEL_MIN_WORK {
        return a * b;
    }
    let mut c = CMatrix::zeros(m, n);
    // SAFETY: Complex<f64> is repr(C) with the same layout as [f64; 2]; the
    // pointers cover column-major buffers of the stated shapes, and `c` does
    // not alias `a` or `b`.
    unsafe {
        zgemm(
            CGemmOption::Standard,
            CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.as_ptr().cast(),
            1,
            m as isize,
            b.as_ptr().cast(),
            1,
            k as isize,
            [0.0, 0.0],
            c.as_mut_ptr().cast(),
            1,
            m as isize,
        );
    }
    c
}
