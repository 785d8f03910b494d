//! Floating point scalar abstraction.
//!
//! Model math runs in `f32`; gradient checks rebuild the same graph in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Scalar types a [`crate::Tensor`] can hold.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const NAME: &'static str;

    /// `c = alpha * a * b + beta * c` with arbitrary row/column strides.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    /// In-place elementwise `exp`.
    fn exp_slice(xs: &mut [Self]);

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

/// Branch-free `exp` for `f32` that the compiler can vectorize.
///
/// Range reduction `x = n ln2 + r` with `|r| <= ln2 / 2`, then a degree-7
/// polynomial for `e^r`; relative error stays below 2e-7 on the normal range.
/// Inputs below `-87.3` flush to zero.
#[inline(always)]
pub fn expf_fast(x: f32) -> f32 {
    // adding 1.5 * 2^23 rounds to an integer held in the low mantissa bits
    const SHIFT: f32 = 12_582_912.0;
    let under = x < -87.3;
    let x = x.max(-87.3).min(88.7);
    let t = x * std::f32::consts::LOG2_E + SHIFT;
    let nf = t - SHIFT;
    let n = (t.to_bits() as i32).wrapping_sub(SHIFT.to_bits() as i32);
    let r = x - nf * 0.693_359_4 - nf * -2.121_944_4e-4;
    let mut y = 1.987_569_1e-4f32;
    y = y * r + 1.398_199_9e-3;
    y = y * r + 8.333_452e-3;
    y = y * r + 4.166_579_6e-2;
    y = y * r + 1.666_666_5e-1;
    y = y * r + 5e-1;
    y = y * r * r + r + 1.0;
    let out = y * f32::from_bits(((n + 127) as u32) << 23);
    if under {
        0.0
    } else {
        out
    }
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $kernel:path, $exp:expr) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            fn exp_slice(xs: &mut [Self]) {
                let f: fn(Self) -> Self = $exp;
                xs.iter_mut().for_each(|v| *v = f(*v));
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: all three operands were bounds checked against their strides above.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm, expf_fast);
impl_scalar!(f64, "f64", matrixmultiply::dgemm, f64::exp);
