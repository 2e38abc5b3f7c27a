//! im2col / col2im convolution kernels over [`gemm`].
//!
//! Weight layouts follow the usual conventions: a convolution stores
//! `[C_out, C_in, k, k]`, a transposed convolution `[C_in, C_out, k, k]`.

use super::array::{gemm, Array, Real, Shape};
use super::TensorError;

/// Kernel geometry shared by forward and transposed convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Extra rows/cols appended to a transposed convolution's output.
    pub output_padding: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        ConvGeom { kernel, stride, padding, output_padding: 0 }
    }

    /// "Same"-style geometry: padding `k/2`, output padding `stride-1`
    /// so that transposed convolutions exactly invert the downsampling.
    pub fn same(kernel: usize, stride: usize) -> Self {
        ConvGeom { kernel, stride, padding: kernel / 2, output_padding: stride.saturating_sub(1) }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.stride == 0 || self.kernel == 0 {
            return Err(TensorError::InvalidGeometry(format!(
                "kernel {} / stride {} must be positive",
                self.kernel, self.stride
            )));
        }
        if self.output_padding >= self.stride.max(1) && self.output_padding > 0 {
            return Err(TensorError::InvalidGeometry(format!(
                "output padding {} must be smaller than stride {}",
                self.output_padding, self.stride
            )));
        }
        Ok(())
    }

    /// Forward output length, `floor((len + 2p − k)/s) + 1`.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    /// Transposed output length, `(len − 1)·s − 2p + k + output_padding`.
    pub fn transposed_out_len(&self, len: usize) -> Option<usize> {
        let full = (len.checked_sub(1)?) * self.stride + self.kernel + self.output_padding;
        full.checked_sub(2 * self.padding).filter(|&v| v > 0)
    }
}

fn im2col<F: Real>(img: &[F], c: usize, h: usize, w: usize, g: &ConvGeom, ho: usize, wo: usize, col: &mut [F]) {
    let k = g.kernel;
    let cols = ho * wo;
    for ci in 0..c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * cols;
                let dst = &mut col[row..row + cols];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *d = if ix < 0 || ix >= w as isize { F::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<F: Real>(col: &[F], c: usize, h: usize, w: usize, g: &ConvGeom, ho: usize, wo: usize, img: &mut [F]) {
    let k = g.kernel;
    let cols = ho * wo;
    for ci in 0..c {
        let plane = &mut img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * cols;
                let src = &col[row..row + cols];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_weight(op: &'static str, w: Shape, expect_in: usize, in_axis_first: bool, k: usize) -> Result<(), TensorError> {
    let cin = if in_axis_first { w.n } else { w.c };
    if cin != expect_in || w.h != k || w.w != k {
        return Err(TensorError::WeightLayout { op, weight: w, input_channels: expect_in, kernel: k });
    }
    Ok(())
}

/// Output shape of a forward convolution.
pub fn conv2d_shape(x: Shape, w: Shape, g: &ConvGeom) -> Result<Shape, TensorError> {
    g.validate()?;
    check_weight("conv2d", w, x.c, false, g.kernel)?;
    let (ho, wo) = match (g.out_len(x.h), g.out_len(x.w)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(TensorError::NonPositiveOutput { op: "conv2d", input: x, geom: *g }),
    };
    Ok(Shape::new(x.n, w.n, ho, wo))
}

/// Output shape of a transposed convolution.
pub fn conv_transpose2d_shape(x: Shape, w: Shape, g: &ConvGeom) -> Result<Shape, TensorError> {
    g.validate()?;
    check_weight("conv_transpose2d", w, x.c, true, g.kernel)?;
    let (ho, wo) = match (g.transposed_out_len(x.h), g.transposed_out_len(x.w)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(TensorError::NonPositiveOutput { op: "conv_transpose2d", input: x, geom: *g }),
    };
    Ok(Shape::new(x.n, w.c, ho, wo))
}

fn add_bias<F: Real>(out: &mut Array<F>, bias: Option<&Array<F>>) {
    if let Some(b) = bias {
        let s = out.shape();
        let p = s.plane();
        let bd = b.data();
        for n in 0..s.n {
            let sample = out.sample_mut(n);
            for c in 0..s.c {
                for v in &mut sample[c * p..(c + 1) * p] {
                    *v += bd[c];
                }
            }
        }
    }
}

fn bias_grad<F: Real>(gout: &Array<F>) -> Array<F> {
    let s = gout.shape();
    let p = s.plane();
    let mut acc = vec![0f64; s.c];
    for n in 0..s.n {
        let sample = gout.sample(n);
        for (c, a) in acc.iter_mut().enumerate() {
            *a += sample[c * p..(c + 1) * p].iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    Array::from_vec(Shape::new(s.c, 1, 1, 1), acc.into_iter().map(F::of).collect()).expect("bias shape")
}

pub fn conv2d_forward<F: Real>(x: &Array<F>, w: &Array<F>, b: Option<&Array<F>>, g: &ConvGeom) -> Result<Array<F>, TensorError> {
    let xs = x.shape();
    let os = conv2d_shape(xs, w.shape(), g)?;
    let kk = xs.c * g.kernel * g.kernel;
    let cols = os.plane();
    let mut col = vec![F::zero(); kk * cols];
    let mut out = Array::zeros(os);
    for n in 0..xs.n {
        im2col(x.sample(n), xs.c, xs.h, xs.w, g, os.h, os.w, &mut col);
        gemm(os.c, kk, cols, w.data(), false, &col, false, out.sample_mut(n), false);
    }
    add_bias(&mut out, b);
    Ok(out)
}

/// Gradients of a forward convolution. Each output is computed only when requested.
pub fn conv2d_backward<F: Real>(
    x: &Array<F>,
    w: &Array<F>,
    gout: &Array<F>,
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> (Option<Array<F>>, Option<Array<F>>, Option<Array<F>>) {
    let xs = x.shape();
    let os = gout.shape();
    let kk = xs.c * g.kernel * g.kernel;
    let cols = os.plane();
    let mut col = vec![F::zero(); kk * cols];
    let mut dx = need.0.then(|| Array::zeros(xs));
    let mut dw = need.1.then(|| Array::zeros(w.shape()));
    for n in 0..xs.n {
        let go = gout.sample(n);
        if let Some(dw) = dw.as_mut() {
            im2col(x.sample(n), xs.c, xs.h, xs.w, g, os.h, os.w, &mut col);
            // dW[Cout, K] += gout[Cout, P] · colᵀ[P, K]
            gemm(os.c, cols, kk, go, false, &col, true, dw.data_mut(), true);
        }
        if let Some(dx) = dx.as_mut() {
            // dcol[K, P] = Wᵀ[K, Cout] · gout[Cout, P]
            gemm(kk, os.c, cols, w.data(), true, go, false, &mut col, false);
            col2im(&col, xs.c, xs.h, xs.w, g, os.h, os.w, dx.sample_mut(n));
        }
    }
    let db = need.2.then(|| bias_grad(gout));
    (dx, dw, db)
}

pub fn conv_transpose2d_forward<F: Real>(
    x: &Array<F>,
    w: &Array<F>,
    b: Option<&Array<F>>,
    g: &ConvGeom,
) -> Result<Array<F>, TensorError> {
    let xs = x.shape();
    let os = conv_transpose2d_shape(xs, w.shape(), g)?;
    let kk = os.c * g.kernel * g.kernel;
    let cols = xs.plane();
    let mut col = vec![F::zero(); kk * cols];
    let mut out = Array::zeros(os);
    for n in 0..xs.n {
        // col[Cout·k·k, HW] = Wᵀ · x
        gemm(kk, xs.c, cols, w.data(), true, x.sample(n), false, &mut col, false);
        col2im(&col, os.c, os.h, os.w, g, xs.h, xs.w, out.sample_mut(n));
    }
    add_bias(&mut out, b);
    Ok(out)
}

pub fn conv_transpose2d_backward<F: Real>(
    x: &Array<F>,
    w: &Array<F>,
    gout: &Array<F>,
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> (Option<Array<F>>, Option<Array<F>>, Option<Array<F>>) {
    let xs = x.shape();
    let os = gout.shape();
    let kk = os.c * g.kernel * g.kernel;
    let cols = xs.plane();
    let mut col = vec![F::zero(); kk * cols];
    let mut dx = need.0.then(|| Array::zeros(xs));
    let mut dw = need.1.then(|| Array::zeros(w.shape()));
    if need.0 || need.1 {
        for n in 0..xs.n {
            im2col(gout.sample(n), os.c, os.h, os.w, g, xs.h, xs.w, &mut col);
            if let Some(dx) = dx.as_mut() {
                // dx[Cin, HW] = W[Cin, K] · col[K, HW]
                gemm(xs.c, kk, cols, w.data(), false, &col, false, dx.sample_mut(n), false);
            }
            if let Some(dw) = dw.as_mut() {
                // dW[Cin, K] += x[Cin, HW] · colᵀ
                gemm(xs.c, cols, kk, x.sample(n), false, &col, true, dw.data_mut(), true);
            }
        }
    }
    let db = need.2.then(|| bias_grad(gout));
    (dx, dw, db)
}

/// Raster-order causal mask over a `k×k` kernel. `inclusive` keeps the centre tap.
pub fn causal_mask<F: Real>(cout: usize, cin: usize, k: usize, inclusive: bool) -> Array<F> {
    let c = k / 2;
    Array::from_fn(Shape::new(cout, cin, k, k), |_, _, y, x| {
        let before = y < c || (y == c && x < c);
        if before || (inclusive && y == c && x == c) {
            F::one()
        } else {
            F::zero()
        }
    })
}
