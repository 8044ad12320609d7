//! Activation storage and the GEMM kernel shared by all layers.
//!
//! Activations use a channel-major `[C, N, H, W]` layout so a convolution over
//! the whole batch is a single matrix product and channel concatenation is a
//! plain append.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the network (`f32` for training and
/// inference, `f64` for gradient checking).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    /// `c <- alpha * a * b + beta * c` on strided matrices.
    ///
    /// # Safety
    /// All pointers must be valid for every element addressed by the given
    /// shapes and strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }

    /// exp used by activations and softmax; may trade the last ulp for speed.
    fn fast_exp(self) -> Self {
        self.exp()
    }
}

/// Branch-free f32 exp (Cephes polynomial, ~2 ulp) that the compiler can
/// vectorize, unlike the libm call.
#[inline(always)]
pub(crate) fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const ROUND: f32 = 12_582_912.0; // 1.5 * 2^23
    let x = x.clamp(-87.3, 88.3);
    let n = (x * LOG2E + ROUND) - ROUND;
    let r = x - n * 0.693_359_4 + n * 2.121_944_4e-4;
    let mut p = 1.987_569_1e-4_f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5e-1;
    let y = p * r * r + r + 1.0;
    y * f32::from_bits(((n as i32 + 127) as u32) << 23)
}

impl Real for f32 {
    #[inline(always)]
    fn fast_exp(self) -> Self {
        exp_f32(self)
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Read-only strided matrix view.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn strided(data: &'a [T], rows: usize, cols: usize, rs: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

pub struct MatMut<'a, T> {
    pub data: &'a mut [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatMut<'a, T> {
    pub fn row_major(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn strided(data: &'a mut [T], rows: usize, cols: usize, rs: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs,
            cs: 1,
        }
    }
}

fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// `c <- alpha * a * b + beta * c`, bounds-checked.
pub fn gemm<T: Real>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: MatMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "gemm output shape");
    assert!(
        extent(a.rows, a.cols, a.rs, a.cs) <= a.data.len(),
        "gemm: a out of bounds"
    );
    assert!(
        extent(b.rows, b.cols, b.rs, b.cs) <= b.data.len(),
        "gemm: b out of bounds"
    );
    assert!(
        extent(c.rows, c.cols, c.rs, c.cs) <= c.data.len(),
        "gemm: c out of bounds"
    );
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    if a.cols == 0 {
        for i in 0..c.rows {
            for j in 0..c.cols {
                let v = &mut c.data[i * c.rs + j * c.cs];
                *v = if beta == T::zero() { T::zero() } else { beta * *v };
            }
        }
        return;
    }
    // SAFETY: extents checked above; c does not alias a or b (distinct borrows).
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// Batch of feature maps in `[C, N, H, W]` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Act<T> {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Act<T> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            n,
            h,
            w,
            data: vec![T::zero(); c * n * h * w],
        }
    }

    pub fn from_vec(c: usize, n: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * n * h * w, "activation size");
        Self { c, n, h, w, data }
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    /// Elements per channel across the batch.
    pub fn plane(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.c, self.n, self.h, self.w) == (other.c, other.n, other.h, other.w)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other), "add: shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Channel concatenation.
    pub fn concat(&self, other: &Self) -> Self {
        assert_eq!((self.n, self.h, self.w), (other.n, other.h, other.w), "concat");
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Self {
            c: self.c + other.c,
            data,
            ..*self
        }
    }

    /// Inverse of [`Act::concat`]: first `c_first` channels, then the rest.
    pub fn split(mut self, c_first: usize) -> (Self, Self) {
        let rest = self.data.split_off(c_first * self.plane());
        let second = Self {
            c: self.c - c_first,
            data: rest,
            ..self
        };
        let first = Self { c: c_first, ..self };
        (first, second)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Act<U> {
        Act {
            c: self.c,
            n: self.n,
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_exp_is_accurate() {
        let mut x = -87.0f32;
        while x < 88.0 {
            let (fast, exact) = (exp_f32(x), (x as f64).exp());
            assert!(
                ((fast as f64 - exact) / exact).abs() < 5e-7,
                "exp({x}) = {fast} vs {exact}"
            );
            x += 0.0137;
        }
        assert_eq!(exp_f32(0.0), 1.0);
        assert!(exp_f32(-1e4) >= 0.0 && exp_f32(-1e4) < 1e-37);
        assert!(exp_f32(1e4).is_finite());
    }

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let expect = naive(&a, &b, m, k, n);
        let mut c = vec![0.0; m * n];
        gemm(
            1.0,
            MatRef::row_major(&a, m, k),
            MatRef::row_major(&b, k, n),
            0.0,
            MatMut::row_major(&mut c, m, n),
        );
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        // a^T stored as k x m, transposed back
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c2 = vec![1.0; m * n];
        gemm(
            1.0,
            MatRef::row_major(&at, k, m).t(),
            MatRef::row_major(&b, k, n),
            1.0,
            MatMut::row_major(&mut c2, m, n),
        );
        for (x, y) in c2.iter().zip(&expect) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = Act::<f32>::from_vec(2, 2, 1, 2, (0..8).map(|v| v as f32).collect());
        let b = Act::<f32>::from_vec(1, 2, 1, 2, vec![9.0; 4]);
        let cat = a.concat(&b);
        assert_eq!(cat.c, 3);
        let (x, y) = cat.split(2);
        assert_eq!(x, a);
        assert_eq!(y, b);
    }
}
