use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type. `f32` is the working precision; `f64` backs
/// the gradient-check suites.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self;
    fn to_f64_lossy(self) -> f64;

    /// `C = A B + beta C` for strided `A: m x k`, `B: k x n`, `C: m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: (&[Self], isize, isize), b: (&[Self], isize, isize), beta: Self, c: (&mut [Self], isize, isize));
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows > 0 && cols > 0 {
        let last = (rows - 1) as isize * rs + (cols - 1) as isize * cs;
        assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
    }
}

impl Scalar for f32 {
    fn gemm(m: usize, k: usize, n: usize, a: (&[Self], isize, isize), b: (&[Self], isize, isize), beta: Self, c: (&mut [Self], isize, isize)) {
        check_extent(a.0.len(), m, k, a.1, a.2);
        check_extent(b.0.len(), k, n, b.1, b.2);
        check_extent(c.0.len(), m, n, c.1, c.2);
        // SAFETY: every operand's extent was bounds-checked above.
        unsafe {
            matrixmultiply::sgemm(m, k, n, 1.0, a.0.as_ptr(), a.1, a.2, b.0.as_ptr(), b.1, b.2, beta, c.0.as_mut_ptr(), c.1, c.2);
        }
    }

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn gemm(m: usize, k: usize, n: usize, a: (&[Self], isize, isize), b: (&[Self], isize, isize), beta: Self, c: (&mut [Self], isize, isize)) {
        check_extent(a.0.len(), m, k, a.1, a.2);
        check_extent(b.0.len(), k, n, b.1, b.2);
        check_extent(c.0.len(), m, n, c.1, c.2);
        // SAFETY: every operand's extent was bounds-checked above.
        unsafe {
            matrixmultiply::dgemm(m, k, n, 1.0, a.0.as_ptr(), a.1, a.2, b.0.as_ptr(), b.1, b.2, beta, c.0.as_mut_ptr(), c.1, c.2);
        }
    }

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}
