//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every op appends a node holding its output value. Nodes are created in
//! topological order, so `backward` is a single reverse sweep.

use super::array::{gemm, Array, Real, Shape};
use super::conv::{self, ConvGeom};
use super::TensorError;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    Scale(Var, F),
    Square(Var),
    Sqrt(Var),
    Exp(Var),
    Log(Var),
    Powf(Var, F),
    Softplus(Var),
    LeakyRelu(Var, F),
    Clip { x: Var, lo: F, hi: F, straight_through: bool },
    ClampMin(Var, F),
    SumAll(Var),
    MeanAll(Var),
    MeanSpatial(Var),
    BroadcastMul { mask: Var, x: Var },
    ExpandChannels(Var),
    Concat(Vec<Var>),
    SliceChannels { x: Var, start: usize },
    AvgPool2(Var),
    Blur { x: Var, taps: Vec<F> },
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    ConvT { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Gdn { x: Var, beta: Var, gamma: Var, inverse: bool },
    LaplaceBits { y: Var, mu: Var, b: Var },
}

struct Node<F> {
    value: Array<F>,
    grad: Option<Array<F>>,
    requires_grad: bool,
    op: Op<F>,
}

/// Probability floor applied by [`Graph::laplace_bits`].
pub const MASS_FLOOR: f64 = 1.0 / 65536.0;

/// A tape of differentiable operations over [`Array`] values.
pub struct Graph<F: Real> {
    nodes: Vec<Node<F>>,
    floored: usize,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: Shape, b: Shape) -> Result<(), TensorError> {
    if a != b {
        return Err(TensorError::ShapeMismatch { op, left: a, right: b });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Laplace probability mass of `[d-½, d+½)` for zero-mean scale `b`, in f64.
pub(crate) fn laplace_mass(d: f64, b: f64) -> f64 {
    let a = d.abs();
    if a >= 0.5 {
        0.5 * (-(a - 0.5) / b).exp() * -(-1.0 / b).exp_m1()
    } else {
        1.0 - 0.5 * ((-(0.5 - a) / b).exp() + (-(0.5 + a) / b).exp())
    }
}

fn laplace_pdf(v: f64, b: f64) -> f64 {
    (-v.abs() / b).exp() / (2.0 * b)
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), floored: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of probability masses floored at [`MASS_FLOOR`] so far.
    pub fn floored_masses(&self) -> usize {
        self.floored
    }

    fn push(&mut self, op_name: &'static str, value: Array<F>, op: Op<F>, inputs: &[Var]) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Insert a leaf. Leaves with `requires_grad` collect gradients on `backward`.
    pub fn leaf(&mut self, value: Array<F>, requires_grad: bool) -> Result<Var, TensorError> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node { value, grad: None, requires_grad, op: Op::Leaf });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Array<F>) -> Result<Var, TensorError> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Array<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Array<F>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Array<F>> {
        self.nodes[v.0].grad.take()
    }

    /// Scalar value of a 1-element node.
    pub fn item(&self, v: Var) -> F {
        self.nodes[v.0].value.data()[0]
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(F) -> F, op: Op<F>) -> Result<Var, TensorError> {
        let value = self.value(x).map(f);
        self.push(name, value, op, &[x])
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F, op: Op<F>) -> Result<Var, TensorError> {
        same_shape(name, self.shape(a), self.shape(b))?;
        let value = self.value(a).zip_map(self.value(b), f);
        self.push(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn add_scalar(&mut self, x: Var, s: F) -> Result<Var, TensorError> {
        self.unary("add_scalar", x, |v| v + s, Op::AddScalar(x))
    }

    pub fn scale(&mut self, x: Var, s: F) -> Result<Var, TensorError> {
        self.unary("scale", x, |v| v * s, Op::Scale(x, s))
    }

    /// `1 − x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var, TensorError> {
        let neg = self.scale(x, -F::one())?;
        self.add_scalar(neg, F::one())
    }

    pub fn square(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("square", x, |v| v * v, Op::Square(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("sqrt", x, |v| v.sqrt(), Op::Sqrt(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("exp", x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("log", x, |v| v.ln(), Op::Log(x))
    }

    pub fn powf(&mut self, x: Var, p: F) -> Result<Var, TensorError> {
        self.unary("powf", x, |v| v.powf(p), Op::Powf(x, p))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary("softplus", x, |v| F::of(softplus(v.as_f64())), Op::Softplus(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: F) -> Result<Var, TensorError> {
        if !(slope > F::zero() && slope < F::one()) {
            return Err(TensorError::InvalidArgument(format!("leaky relu slope {slope} outside (0, 1)")));
        }
        self.unary("leaky_relu", x, |v| if v >= F::zero() { v } else { v * slope }, Op::LeakyRelu(x, slope))
    }

    /// Clamp into `[lo, hi]`. The gradient is zero outside the range unless
    /// `straight_through`, which passes it unchanged everywhere.
    pub fn clip(&mut self, x: Var, lo: F, hi: F, straight_through: bool) -> Result<Var, TensorError> {
        if lo > hi {
            return Err(TensorError::InvalidArgument(format!("clip bounds lo={lo} > hi={hi}")));
        }
        self.unary("clip", x, |v| v.max(lo).min(hi), Op::Clip { x, lo, hi, straight_through })
    }

    pub fn clamp_min(&mut self, x: Var, lo: F) -> Result<Var, TensorError> {
        self.unary("clamp_min", x, |v| v.max(lo), Op::ClampMin(x, lo))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x).sum();
        self.push("sum_all", Array::scalar(v), Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x).mean();
        self.push("mean_all", Array::scalar(v), Op::MeanAll(x), &[x])
    }

    /// Mean over H×W: `N×C×H×W → N×C×1×1`.
    pub fn mean_spatial(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let s = xv.shape();
        let p = s.plane() as f64;
        let mut out = Vec::with_capacity(s.n * s.c);
        for n in 0..s.n {
            for c in 0..s.c {
                out.push(F::of(xv.plane(n, c).iter().map(|v| v.as_f64()).sum::<f64>() / p));
            }
        }
        let value = Array::from_vec(Shape::new(s.n, s.c, 1, 1), out)?;
        self.push("mean_spatial", value, Op::MeanSpatial(x), &[x])
    }

    /// Multiply every channel of `x` (N×C×H×W) by the single-channel `mask` (N×1×H×W).
    pub fn broadcast_mul(&mut self, mask: Var, x: Var) -> Result<Var, TensorError> {
        let ms = self.shape(mask);
        let xs = self.shape(x);
        if ms.c != 1 || ms.n != xs.n || ms.h != xs.h || ms.w != xs.w {
            return Err(TensorError::ShapeMismatch { op: "broadcast_mul", left: ms, right: xs });
        }
        let mv = self.value(mask);
        let xv = self.value(x);
        let p = xs.plane();
        let mut out = Array::zeros(xs);
        for n in 0..xs.n {
            let m = mv.sample(n);
            let src = xv.sample(n);
            let dst = out.sample_mut(n);
            for c in 0..xs.c {
                for i in 0..p {
                    dst[c * p + i] = m[i] * src[c * p + i];
                }
            }
        }
        self.push("broadcast_mul", out, Op::BroadcastMul { mask, x }, &[mask, x])
    }

    /// Repeat a 1×C×1×1 vector over the batch and spatial axes of `shape`.
    pub fn expand_channels(&mut self, x: Var, shape: Shape) -> Result<Var, TensorError> {
        let xs = self.shape(x);
        if xs.n != 1 || xs.h != 1 || xs.w != 1 || xs.c != shape.c {
            return Err(TensorError::ShapeMismatch { op: "expand_channels", left: xs, right: shape });
        }
        let xv = self.value(x);
        let value = Array::from_fn(shape, |_, c, _, _| xv.data()[c]);
        self.push("expand_channels", value, Op::ExpandChannels(x), &[x])
    }

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let arrays: Vec<&Array<F>> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Array::concat_channels(&arrays)?;
        self.push("concat", value, Op::Concat(parts.to_vec()), parts)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let value = self.value(x).slice_channels(start, len)?;
        self.push("slice_channels", value, Op::SliceChannels { x, start }, &[x])
    }

    /// 2×2 average pooling with stride 2. Odd trailing rows/cols are dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.h < 2 || s.w < 2 {
            return Err(TensorError::InvalidArgument(format!("avg_pool2 needs at least 2×2, got {s}")));
        }
        let os = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
        let q = F::of(0.25);
        let value = Array::from_fn(os, |n, c, y, x0| {
            (xv.at(n, c, 2 * y, 2 * x0)
                + xv.at(n, c, 2 * y, 2 * x0 + 1)
                + xv.at(n, c, 2 * y + 1, 2 * x0)
                + xv.at(n, c, 2 * y + 1, 2 * x0 + 1))
                * q
        });
        self.push("avg_pool2", value, Op::AvgPool2(x), &[x])
    }

    /// Separable "valid" filtering of each channel with the 1-D `taps`
    /// applied along both axes.
    pub fn blur(&mut self, x: Var, taps: &[F]) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let s = xv.shape();
        let k = taps.len();
        if k == 0 || s.h < k || s.w < k {
            return Err(TensorError::InvalidArgument(format!("blur window {k} does not fit {s}")));
        }
        let value = blur_forward(xv, taps);
        self.push("blur", value, Op::Blur { x, taps: taps.to_vec() }, &[x])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var, TensorError> {
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs.numel() != self.shape(w).n {
                return Err(TensorError::ShapeMismatch { op: "conv2d bias", left: bs, right: self.shape(w) });
            }
        }
        let value = conv::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv2d", value, Op::Conv { x, w, b, geom }, &inputs)
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var, TensorError> {
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs.numel() != self.shape(w).c {
                return Err(TensorError::ShapeMismatch { op: "conv_transpose2d bias", left: bs, right: self.shape(w) });
            }
        }
        let value = conv::conv_transpose2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv_transpose2d", value, Op::ConvT { x, w, b, geom }, &inputs)
    }

    /// Generalized divisive normalization, `y_c = x_c / sqrt(β_c + Σ_j γ_cj x_j²)`;
    /// `inverse` multiplies instead. `beta` holds C values, `gamma` C×C.
    pub fn gdn(&mut self, x: Var, beta: Var, gamma: Var, inverse: bool) -> Result<Var, TensorError> {
        let xs = self.shape(x);
        let bs = self.shape(beta);
        let gs = self.shape(gamma);
        if bs.numel() != xs.c {
            return Err(TensorError::ShapeMismatch { op: "gdn beta", left: bs, right: xs });
        }
        if gs.numel() != xs.c * xs.c {
            return Err(TensorError::ShapeMismatch { op: "gdn gamma", left: gs, right: xs });
        }
        if let Some(c) = self.value(beta).data().iter().position(|&b| b <= F::zero()) {
            return Err(TensorError::NonPositiveBeta { channel: c });
        }
        if let Some(i) = self.value(gamma).data().iter().position(|&g| g < F::zero()) {
            return Err(TensorError::InvalidArgument(format!("gdn gamma entry {i} is negative")));
        }
        let norm = gdn_norm(self.value(x), self.value(beta), self.value(gamma));
        let xv = self.value(x);
        let value = xv.zip_map(&norm, |v, n| if inverse { v * n } else { v / n });
        self.push("gdn", value, Op::Gdn { x, beta, gamma, inverse }, &[x, beta, gamma])
    }

    /// Per-element information content `−log2 P(y)` of integer-centred bins
    /// under a Laplace(μ, b) density. Masses below [`MASS_FLOOR`] are floored
    /// and counted.
    pub fn laplace_bits(&mut self, y: Var, mu: Var, b: Var) -> Result<Var, TensorError> {
        same_shape("laplace_bits", self.shape(y), self.shape(mu))?;
        same_shape("laplace_bits", self.shape(y), self.shape(b))?;
        let (yv, mv, bv) = (self.value(y), self.value(mu), self.value(b));
        if let Some(i) = bv.data().iter().position(|&s| s <= F::zero()) {
            return Err(TensorError::InvalidArgument(format!("laplace scale at {i} is not positive")));
        }
        let mut floored = 0;
        let bits: Vec<F> = yv
            .data()
            .iter()
            .zip(mv.data())
            .zip(bv.data())
            .map(|((&y, &m), &s)| {
                let mass = laplace_mass(y.as_f64() - m.as_f64(), s.as_f64());
                if !(mass >= MASS_FLOOR) {
                    floored += 1;
                }
                F::of(-mass.max(MASS_FLOOR).log2())
            })
            .collect();
        let value = Array::from_vec(yv.shape(), bits)?;
        self.floored += floored;
        self.push("laplace_bits", value, Op::LaplaceBits { y, mu, b }, &[y, mu, b])
    }

    /// Reverse sweep from a scalar `loss`, populating gradients of every
    /// node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(TensorError::NotScalar(ls));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Array::full(ls, F::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let contributions = self.local_grads(i, &g)?;
            self.nodes[i].grad = Some(g);
            for (v, dg) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                if !dg.all_finite() {
                    return Err(TensorError::NonFinite { op: "backward" });
                }
                match &mut self.nodes[v.0].grad {
                    Some(acc) => acc.add_assign(&dg),
                    slot @ None => *slot = Some(dg),
                }
            }
        }
        Ok(())
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, i: usize, g: &Array<F>) -> Result<Vec<(Var, Array<F>)>, TensorError> {
        let out = &self.nodes[i].value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut res = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    res.push((*a, g.zip_map(val(*b), |g, y| g * y)));
                }
                if self.rg(*b) {
                    res.push((*b, g.zip_map(val(*a), |g, x| g * x)));
                }
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                if self.rg(*a) {
                    res.push((*a, g.zip_map(bv, |g, y| g / y)));
                }
                if self.rg(*b) {
                    // d(a/b)/db = −out/b
                    let t = g.zip_map(out, |g, o| g * o);
                    res.push((*b, t.zip_map(bv, |t, y| -t / y)));
                }
            }
            Op::AddScalar(x) => res.push((*x, g.clone())),
            Op::Scale(x, s) => {
                let s = *s;
                res.push((*x, g.map(|v| v * s)));
            }
            Op::Square(x) => res.push((*x, g.zip_map(val(*x), |g, x| g * (x + x)))),
            Op::Sqrt(x) => res.push((*x, g.zip_map(out, |g, o| g / (o + o)))),
            Op::Exp(x) => res.push((*x, g.zip_map(out, |g, o| g * o))),
            Op::Log(x) => res.push((*x, g.zip_map(val(*x), |g, x| g / x))),
            Op::Powf(x, p) => {
                let p = *p;
                res.push((*x, g.zip_map(val(*x), |g, x| g * p * x.powf(p - F::one()))));
            }
            Op::Softplus(x) => res.push((*x, g.zip_map(val(*x), |g, x| g * F::of(sigmoid(x.as_f64()))))),
            Op::LeakyRelu(x, s) => {
                let s = *s;
                res.push((*x, g.zip_map(val(*x), |g, x| if x >= F::zero() { g } else { g * s })));
            }
            Op::Clip { x, lo, hi, straight_through } => {
                if *straight_through {
                    res.push((*x, g.clone()));
                } else {
                    let (lo, hi) = (*lo, *hi);
                    res.push((*x, g.zip_map(val(*x), |g, x| if x >= lo && x <= hi { g } else { F::zero() })));
                }
            }
            Op::ClampMin(x, lo) => {
                let lo = *lo;
                res.push((*x, g.zip_map(val(*x), |g, x| if x > lo { g } else { F::zero() })));
            }
            Op::SumAll(x) => {
                let g0 = g.data()[0];
                res.push((*x, Array::full(val(*x).shape(), g0)));
            }
            Op::MeanAll(x) => {
                let xs = val(*x).shape();
                let g0 = g.data()[0] / F::of(xs.numel() as f64);
                res.push((*x, Array::full(xs, g0)));
            }
            Op::MeanSpatial(x) => {
                let xs = val(*x).shape();
                let inv = F::of(1.0 / xs.plane() as f64);
                let gd = g.data();
                res.push((*x, Array::from_fn(xs, |n, c, _, _| gd[n * xs.c + c] * inv)));
            }
            Op::BroadcastMul { mask, x } => {
                let mv = val(*mask);
                let xv = val(*x);
                let xs = xv.shape();
                let p = xs.plane();
                if self.rg(*x) {
                    let mut dx = Array::zeros(xs);
                    for n in 0..xs.n {
                        let m = mv.sample(n);
                        let gs = g.sample(n);
                        let d = dx.sample_mut(n);
                        for c in 0..xs.c {
                            for j in 0..p {
                                d[c * p + j] = gs[c * p + j] * m[j];
                            }
                        }
                    }
                    res.push((*x, dx));
                }
                if self.rg(*mask) {
                    let mut dm = Array::zeros(mv.shape());
                    for n in 0..xs.n {
                        let gs = g.sample(n);
                        let xsamp = xv.sample(n);
                        let d = dm.sample_mut(n);
                        for c in 0..xs.c {
                            for j in 0..p {
                                d[j] += gs[c * p + j] * xsamp[c * p + j];
                            }
                        }
                    }
                    res.push((*mask, dm));
                }
            }
            Op::ExpandChannels(x) => {
                let s = g.shape();
                let mut d = vec![F::zero(); s.c];
                for n in 0..s.n {
                    for (c, slot) in d.iter_mut().enumerate() {
                        *slot += g.plane(n, c).iter().fold(F::zero(), |a, &v| a + v);
                    }
                }
                res.push((*x, Array::from_vec(val(*x).shape(), d)?));
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &v in parts {
                    let c = val(v).shape().c;
                    if self.rg(v) {
                        res.push((v, g.slice_channels(start, c)?));
                    }
                    start += c;
                }
            }
            Op::SliceChannels { x, start } => {
                let xs = val(*x).shape();
                let gs = g.shape();
                let p = xs.plane();
                let mut dx = Array::zeros(xs);
                for n in 0..xs.n {
                    let src = g.sample(n);
                    dx.sample_mut(n)[start * p..(start + gs.c) * p].copy_from_slice(src);
                }
                res.push((*x, dx));
            }
            Op::AvgPool2(x) => {
                let xs = val(*x).shape();
                let q = F::of(0.25);
                res.push((
                    *x,
                    Array::from_fn(xs, |n, c, y, x0| {
                        let (oy, ox) = (y / 2, x0 / 2);
                        if oy < g.shape().h && ox < g.shape().w {
                            g.at(n, c, oy, ox) * q
                        } else {
                            F::zero()
                        }
                    }),
                ));
            }
            Op::Blur { x, taps } => res.push((*x, blur_backward(g, val(*x).shape(), taps))),
            Op::Conv { x, w, b, geom } => {
                let need = (self.rg(*x), self.rg(*w), b.map(|b| self.rg(b)).unwrap_or(false));
                let (dx, dw, db) = conv::conv2d_backward(val(*x), val(*w), g, geom, need);
                res.extend(dx.map(|d| (*x, d)));
                res.extend(dw.map(|d| (*w, d)));
                if let (Some(b), Some(db)) = (b, db) {
                    res.push((*b, db.reshape(val(*b).shape())?));
                }
            }
            Op::ConvT { x, w, b, geom } => {
                let need = (self.rg(*x), self.rg(*w), b.map(|b| self.rg(b)).unwrap_or(false));
                let (dx, dw, db) = conv::conv_transpose2d_backward(val(*x), val(*w), g, geom, need);
                res.extend(dx.map(|d| (*x, d)));
                res.extend(dw.map(|d| (*w, d)));
                if let (Some(b), Some(db)) = (b, db) {
                    res.push((*b, db.reshape(val(*b).shape())?));
                }
            }
            Op::Gdn { x, beta, gamma, inverse } => {
                let (dx, db, dg) = gdn_backward(val(*x), val(*beta), val(*gamma), g, *inverse);
                if self.rg(*x) {
                    res.push((*x, dx));
                }
                if self.rg(*beta) {
                    res.push((*beta, db.reshape(val(*beta).shape())?));
                }
                if self.rg(*gamma) {
                    res.push((*gamma, dg.reshape(val(*gamma).shape())?));
                }
            }
            Op::LaplaceBits { y, mu, b } => {
                let (yv, mv, bv) = (val(*y), val(*mu), val(*b));
                let n = yv.len();
                let mut dy = vec![F::zero(); n];
                let mut db = vec![F::zero(); n];
                let ln2 = std::f64::consts::LN_2;
                for i in 0..n {
                    let d = yv.data()[i].as_f64() - mv.data()[i].as_f64();
                    let s = bv.data()[i].as_f64();
                    let mass = laplace_mass(d, s).max(MASS_FLOOR);
                    let (u, l) = (d + 0.5, d - 0.5);
                    let (pu, pl) = (laplace_pdf(u, s), laplace_pdf(l, s));
                    let dbits_dmass = -1.0 / (ln2 * mass);
                    let gi = g.data()[i].as_f64();
                    dy[i] = F::of(gi * dbits_dmass * (pu - pl));
                    db[i] = F::of(gi * dbits_dmass * (-u * pu + l * pl) / s);
                }
                let shape = yv.shape();
                let dy = Array::from_vec(shape, dy)?;
                if self.rg(*mu) {
                    res.push((*mu, dy.map(|v| -v)));
                }
                if self.rg(*y) {
                    res.push((*y, dy));
                }
                if self.rg(*b) {
                    res.push((*b, Array::from_vec(shape, db)?));
                }
            }
        }
        Ok(res)
    }
}

fn blur_h<F: Real>(src: &[F], h: usize, w: usize, taps: &[F], dst: &mut [F]) {
    let k = taps.len();
    let wo = w - k + 1;
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut dst[y * wo..(y + 1) * wo];
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = F::zero();
            for (t, &tap) in taps.iter().enumerate() {
                acc += tap * row[x + t];
            }
            *o = acc;
        }
    }
}

fn blur_v<F: Real>(src: &[F], h: usize, w: usize, taps: &[F], dst: &mut [F]) {
    let k = taps.len();
    let ho = h - k + 1;
    for y in 0..ho {
        let out = &mut dst[y * w..(y + 1) * w];
        out.fill(F::zero());
        for (t, &tap) in taps.iter().enumerate() {
            let row = &src[(y + t) * w..(y + t + 1) * w];
            for (o, &r) in out.iter_mut().zip(row) {
                *o += tap * r;
            }
        }
    }
}

fn blur_forward<F: Real>(x: &Array<F>, taps: &[F]) -> Array<F> {
    let s = x.shape();
    let k = taps.len();
    let (ho, wo) = (s.h - k + 1, s.w - k + 1);
    let mut out = Array::zeros(Shape::new(s.n, s.c, ho, wo));
    let mut tmp = vec![F::zero(); s.h * wo];
    let po = ho * wo;
    for n in 0..s.n {
        for c in 0..s.c {
            blur_h(x.plane(n, c), s.h, s.w, taps, &mut tmp);
            let o = (n * s.c + c) * po;
            blur_v(&tmp, s.h, wo, taps, &mut out.data_mut()[o..o + po]);
        }
    }
    out
}

fn blur_backward<F: Real>(g: &Array<F>, xs: Shape, taps: &[F]) -> Array<F> {
    let k = taps.len();
    let gs = g.shape();
    let wo = gs.w;
    let mut dx = Array::zeros(xs);
    let mut tmp = vec![F::zero(); xs.h * wo];
    let pi = xs.plane();
    for n in 0..xs.n {
        for c in 0..xs.c {
            let gp = g.plane(n, c);
            // adjoint of vertical pass
            tmp.fill(F::zero());
            for y in 0..gs.h {
                for (t, &tap) in taps.iter().enumerate() {
                    let dst = &mut tmp[(y + t) * wo..(y + t + 1) * wo];
                    for (d, &gv) in dst.iter_mut().zip(&gp[y * wo..(y + 1) * wo]) {
                        *d += tap * gv;
                    }
                }
            }
            // adjoint of horizontal pass
            let o = (n * xs.c + c) * pi;
            let dst = &mut dx.data_mut()[o..o + pi];
            for y in 0..xs.h {
                let row = &tmp[y * wo..(y + 1) * wo];
                let out = &mut dst[y * xs.w..(y + 1) * xs.w];
                for (x, &gv) in row.iter().enumerate() {
                    for t in 0..k {
                        out[x + t] += taps[t] * gv;
                    }
                }
            }
        }
    }
    dx
}

/// `sqrt(β_c + Σ_j γ_cj x_j²)` at every position.
fn gdn_norm<F: Real>(x: &Array<F>, beta: &Array<F>, gamma: &Array<F>) -> Array<F> {
    let s = x.shape();
    let p = s.plane();
    let mut out = Array::zeros(s);
    let mut sq = vec![F::zero(); s.c * p];
    for n in 0..s.n {
        for (q, &v) in sq.iter_mut().zip(x.sample(n)) {
            *q = v * v;
        }
        let dst = out.sample_mut(n);
        gemm(s.c, s.c, p, gamma.data(), false, &sq, false, dst, false);
        for c in 0..s.c {
            let b = beta.data()[c];
            for v in &mut dst[c * p..(c + 1) * p] {
                *v = (*v + b).sqrt();
            }
        }
    }
    out
}

fn gdn_backward<F: Real>(
    x: &Array<F>,
    beta: &Array<F>,
    gamma: &Array<F>,
    g: &Array<F>,
    inverse: bool,
) -> (Array<F>, Array<F>, Array<F>) {
    let s = x.shape();
    let p = s.plane();
    let norm = gdn_norm(x, beta, gamma);
    let mut dx = Array::zeros(s);
    let mut dbeta = vec![F::zero(); s.c];
    let mut dgamma = Array::zeros(Shape::new(s.c, s.c, 1, 1));
    let mut t = vec![F::zero(); s.c * p];
    let mut sq = vec![F::zero(); s.c * p];
    let half = F::of(0.5);
    for n in 0..s.n {
        let xs = x.sample(n);
        let gs = g.sample(n);
        let ns = norm.sample(n);
        // t_c = ∂y_c/∂s_c · g_c where s_c = norm_c².
        for i in 0..s.c * p {
            t[i] = if inverse {
                gs[i] * xs[i] * half / ns[i]
            } else {
                -gs[i] * xs[i] * half / (ns[i] * ns[i] * ns[i])
            };
            sq[i] = xs[i] * xs[i];
        }
        for c in 0..s.c {
            dbeta[c] += t[c * p..(c + 1) * p].iter().copied().sum::<F>();
        }
        // dγ[c, j] += Σ_pos t_c · x_j²
        gemm(s.c, p, s.c, &t, false, &sq, true, dgamma.data_mut(), true);
        // dx_k = g_k·∂y_k/∂x_k(direct) + 2 x_k Σ_c γ_ck t_c
        let d = dx.sample_mut(n);
        gemm(s.c, s.c, p, gamma.data(), true, &t, false, d, false);
        for i in 0..s.c * p {
            let direct = if inverse { gs[i] * ns[i] } else { gs[i] / ns[i] };
            d[i] = direct + (xs[i] + xs[i]) * d[i];
        }
    }
    let db = Array::from_vec(Shape::new(s.c, 1, 1, 1), dbeta).expect("beta grad");
    (dx, db, dgamma)
}
