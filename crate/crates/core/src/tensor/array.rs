use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use super::TensorError;

/// Element type tag used by checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U8 = 2,
}

impl DType {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            2 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

/// Scalar type of every tensor. Implemented for `f32` (training, inference)
/// and `f64` (gradient checks).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + fmt::Debug
    + fmt::Display
    + Sum
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    /// Row-major `c = a·b (+ c)` through strided views.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping `m×k`, `k×n`
    /// and `m×n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
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

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
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
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f32 {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
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
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f64 {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Row-major matrix product `c (+)= op(a)·op(b)` where `op` optionally
/// transposes. `a` is stored `m×k` (or `k×m` when `a_t`), `b` is `k×n`
/// (or `n×k` when `b_t`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<F: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    a_t: bool,
    b: &[F],
    b_t: bool,
    c: &mut [F],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { F::one() } else { F::zero() };
    // SAFETY: bounds asserted above; the slices do not alias (`c` is &mut).
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
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

/// Batch × channels × height × width.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}×{}×{}", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Dense N×C×H×W array without gradient bookkeeping.
#[derive(Clone, PartialEq)]
pub struct Array<F> {
    shape: Shape,
    data: Vec<F>,
}

impl<F: fmt::Debug> fmt::Debug for Array<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Array({}, {:?}{})", self.shape, head, if self.data.len() > 8 { " …" } else { "" })
    }
}

impl<F: Real> Array<F> {
    pub fn zeros(shape: Shape) -> Self {
        Array { shape, data: vec![F::zero(); shape.numel()] }
    }

    pub fn full(shape: Shape, v: F) -> Self {
        Array { shape, data: vec![v; shape.numel()] }
    }

    pub fn scalar(v: F) -> Self {
        Array { shape: Shape::scalar(), data: vec![v] }
    }

    pub fn from_vec(shape: Shape, data: Vec<F>) -> Result<Self, TensorError> {
        if data.len() != shape.numel() {
            return Err(TensorError::ElementCount { shape, len: data.len() });
        }
        Ok(Array { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Array { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> F {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: F) {
        let o = self.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// The contiguous H×W plane of (n, c).
    pub fn plane(&self, n: usize, c: usize) -> &[F] {
        let p = self.shape.plane();
        let o = (n * self.shape.c + c) * p;
        &self.data[o..o + p]
    }

    /// All channels of sample `n`.
    pub fn sample(&self, n: usize) -> &[F] {
        let s = self.shape.c * self.shape.plane();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [F] {
        let s = self.shape.c * self.shape.plane();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self, TensorError> {
        if shape.numel() != self.data.len() {
            return Err(TensorError::ElementCount { shape, len: self.data.len() });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Array { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Array {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> F {
        // Pairwise-free plain sum in f64 keeps f32 reductions stable and deterministic.
        F::of(self.data.iter().map(|v| v.as_f64()).sum::<f64>())
    }

    pub fn mean(&self) -> F {
        F::of(self.data.iter().map(|v| v.as_f64()).sum::<f64>() / self.data.len().max(1) as f64)
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert between precisions.
    pub fn cast<G: Real>(&self) -> Array<G> {
        Array { shape: self.shape, data: self.data.iter().map(|v| G::of(v.as_f64())).collect() }
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(parts: &[&Array<F>]) -> Result<Self, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty("concat"))?.shape;
        let mut c_total = 0;
        for p in parts {
            let s = p.shape;
            if s.n != first.n || s.h != first.h || s.w != first.w {
                return Err(TensorError::ShapeMismatch { op: "concat", left: first, right: s });
            }
            c_total += s.c;
        }
        let shape = first.with_c(c_total);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..first.n {
            for p in parts {
                data.extend_from_slice(p.sample(n));
            }
        }
        Ok(Array { shape, data })
    }

    /// Channels `[start, start+len)`.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self, TensorError> {
        if start + len > self.shape.c {
            return Err(TensorError::ChannelRange { start, len, channels: self.shape.c });
        }
        let p = self.shape.plane();
        let shape = self.shape.with_c(len);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..self.shape.n {
            let base = n * self.shape.c * p;
            data.extend_from_slice(&self.data[base + start * p..base + (start + len) * p]);
        }
        Ok(Array { shape, data })
    }

    /// Spatial window `[y0, y0+h) × [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self, TensorError> {
        if y0 + h > self.shape.h || x0 + w > self.shape.w {
            return Err(TensorError::CropOutOfBounds { shape: self.shape, y0, x0, h, w });
        }
        let s = self.shape;
        Ok(Array::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| self.at(n, c, y0 + y, x0 + x)))
    }

    /// Pad bottom/right by mirror reflection (no edge repeat) up to `h × w`.
    pub fn pad_reflect(&self, h: usize, w: usize) -> Result<Self, TensorError> {
        let s = self.shape;
        if h < s.h || w < s.w || (h > s.h && s.h < 2) || (w > s.w && s.w < 2) {
            return Err(TensorError::CropOutOfBounds { shape: s, y0: 0, x0: 0, h, w });
        }
        let reflect = |i: usize, len: usize| -> usize {
            // period 2(len-1)
            let period = 2 * (len - 1);
            let j = i % period;
            if j < len {
                j
            } else {
                period - j
            }
        };
        Ok(Array::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| {
            let yy = if y < s.h { y } else { reflect(y, s.h) };
            let xx = if x < s.w { x } else { reflect(x, s.w) };
            self.at(n, c, yy, xx)
        }))
    }

    /// Stack single-sample arrays along the batch axis.
    pub fn stack(items: &[&Array<F>]) -> Result<Self, TensorError> {
        let first = items.first().ok_or(TensorError::Empty("stack"))?.shape;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for it in items {
            if it.shape.c != first.c || it.shape.h != first.h || it.shape.w != first.w {
                return Err(TensorError::ShapeMismatch { op: "stack", left: first, right: it.shape });
            }
            n += it.shape.n;
            data.extend_from_slice(&it.data);
        }
        Ok(Array { shape: Shape { n, ..first }, data })
    }

    /// Sample `n` as its own 1×C×H×W array.
    pub fn select(&self, n: usize) -> Self {
        Array { shape: Shape { n: 1, ..self.shape }, data: self.sample(n).to_vec() }
    }
}
