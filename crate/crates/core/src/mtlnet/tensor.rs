//! Dense row-major storage and a GEMM wrapper over `matrixmultiply`.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type of the network: `f32` for training and
/// inference, `f64` for gradient checking.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Default + Debug + Send + Sync + Sum + 'static
{
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n`
    /// matrices; `c` must not alias `a` or `b`.
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

    /// ELU activation; implementations may trade the last ulp for speed.
    fn elu(self) -> Self;

    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

macro_rules! impl_real {
    ($t:ty, $f:path, $elu:path) => {
        impl Real for $t {
            #[inline(always)]
            fn elu(self) -> Self {
                $elu(self)
            }

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
            ) {
                $f(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm, fast_elu_f32);
impl_real!(f64, matrixmultiply::dgemm, exact_elu_f64);

#[inline]
fn exact_elu_f64(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// `e^x` for `x <= 0` via `2^n * p(r)`, relative error about 2e-7.
#[inline(always)]
fn exp_nonpositive_f32(x: f32) -> f32 {
    let x = x.max(-87.0);
    let t = x * std::f32::consts::LOG2_E;
    // Round to nearest via the 1.5 * 2^23 trick; |t| < 2^22 here.
    const MAGIC: f32 = 12_582_912.0;
    let n = (t + MAGIC) - MAGIC;
    let r = (t - n) * std::f32::consts::LN_2;
    let p = 1.0
        + r * (1.0
            + r * (0.5 + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0))))));
    let scale = f32::from_bits(((n as i32 + 127) as u32) << 23);
    p * scale
}

#[inline(always)]
fn fast_elu_f32(x: f32) -> f32 {
    let neg = exp_nonpositive_f32(x.min(0.0)) - 1.0;
    if x > 0.0 {
        x
    } else {
        neg
    }
}

/// `c = beta * c + op(a) * op(b)`, where `a` is stored row-major as
/// `a_dims.0 x a_dims.1` and `op` transposes when the flag is set.
pub fn gemm<T: Real>(
    a: &[T],
    a_dims: (usize, usize),
    trans_a: bool,
    b: &[T],
    b_dims: (usize, usize),
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), a_dims.0 * a_dims.1, "lhs storage");
    assert_eq!(b.len(), b_dims.0 * b_dims.1, "rhs storage");
    let (m, k) = if trans_a { (a_dims.1, a_dims.0) } else { a_dims };
    let (k2, n) = if trans_b { (b_dims.1, b_dims.0) } else { b_dims };
    assert_eq!(k, k2, "inner dimensions");
    assert_eq!(c.len(), m * n, "output storage");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, a_dims.1 as isize) } else { (a_dims.1 as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b_dims.1 as isize) } else { (b_dims.1 as isize, 1) };
    // SAFETY: shapes and strides are checked against the slice lengths above,
    // and `c` is a unique borrow distinct from `a` and `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Convenience: returns `op(a) * op(b)` as a new buffer.
pub fn matmul<T: Real>(
    a: &[T],
    a_dims: (usize, usize),
    trans_a: bool,
    b: &[T],
    b_dims: (usize, usize),
    trans_b: bool,
) -> Vec<T> {
    let m = if trans_a { a_dims.1 } else { a_dims.0 };
    let n = if trans_b { b_dims.0 } else { b_dims.1 };
    let mut c = vec![T::zero(); m * n];
    gemm(a, a_dims, trans_a, b, b_dims, trans_b, T::zero(), &mut c);
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns of a 2-D tensor; 1-D tensors read as a single row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [c] => (1, *c),
            s => panic!("not a matrix: {s:?}"),
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }
}

/// Adds `bias` to every row of the `rows x bias.len()` matrix `x`.
pub fn add_row_bias<T: Real>(x: &mut [T], bias: &[T]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

/// Accumulates column sums of `x` into `acc`.
pub fn add_col_sums<T: Real>(x: &[T], acc: &mut [T]) {
    for row in x.chunks_exact(acc.len()) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += *v;
        }
    }
}
