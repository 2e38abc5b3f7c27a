//! Parameter storage and the layer types the codec networks are assembled from.

use rand::Rng;

use super::array::{Array, Real, Shape};
use super::conv::{causal_mask, ConvGeom};
use super::graph::{Graph, Var};
use super::TensorError;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct Param<F> {
    pub name: String,
    /// Natural dimensions (e.g. `[C]` for a bias); `value` holds the same
    /// elements as a 4-D array.
    pub dims: Vec<usize>,
    pub value: Array<F>,
}

/// Named, ordered parameters of one network.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
}

/// Graph handles for every parameter of a store, created by [`ParamStore::bind`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

fn dims_to_shape(dims: &[usize]) -> Shape {
    let mut d = [1usize; 4];
    for (slot, &v) in d.iter_mut().zip(dims) {
        *slot = v;
    }
    if dims.len() > 4 {
        d[3] *= dims[4..].iter().product::<usize>();
    }
    Shape::new(d[0], d[1], d[2], d[3])
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, dims: &[usize], data: Vec<F>) -> ParamId {
        let shape = dims_to_shape(dims);
        let value = Array::from_vec(shape, data).expect("parameter element count");
        self.params.push(Param { name: name.into(), dims: dims.to_vec(), value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Put every parameter on the graph. Frozen (`trainable == false`)
    /// parameters are constants and receive no gradient.
    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Result<Bound, TensorError> {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), trainable))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Bound { vars })
    }

    /// Move gradients off the graph, in parameter order.
    pub fn take_grads(&self, g: &mut Graph<F>, bound: &Bound) -> Vec<Option<Array<F>>> {
        bound.vars.iter().map(|&v| g.take_grad(v)).collect()
    }

    /// FNV-1a over names and raw element bytes.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        let mut buf = Vec::new();
        for p in &self.params {
            eat(p.name.as_bytes());
            buf.clear();
            for &v in p.value.data() {
                v.write_le(&mut buf);
            }
            eat(&buf);
        }
        h
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), dims: p.dims.clone(), value: p.value.cast() })
                .collect(),
        }
    }
}

fn uniform_init<F: Real>(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<F> {
    (0..n).map(|_| F::of(rng.gen_range(-bound..bound))).collect()
}

/// Spatial masking of a convolution kernel in raster order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    None,
    /// Only taps strictly before the centre.
    Exclusive,
    /// Taps before and at the centre.
    Inclusive,
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
    pub mask: MaskKind,
}

impl Conv2d {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geom: ConvGeom,
        rng: &mut impl Rng,
    ) -> Self {
        let k = geom.kernel;
        let fan_in = in_channels * k * k;
        let bound = (3.0 / fan_in as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            &[out_channels, in_channels, k, k],
            uniform_init(rng, out_channels * fan_in, bound),
        );
        let bias = store.add(format!("{name}.bias"), &[out_channels], vec![F::zero(); out_channels]);
        Conv2d { weight, bias, geom, in_channels, out_channels, mask: MaskKind::None }
    }

    /// Stride-1 "same" convolution whose kernel sees only raster-causal taps.
    pub fn masked<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        mask: MaskKind,
        rng: &mut impl Rng,
    ) -> Result<Self, TensorError> {
        if mask != MaskKind::None && kernel % 2 == 0 {
            return Err(TensorError::EvenMaskedKernel(kernel));
        }
        let mut conv = Conv2d::new(store, name, in_channels, out_channels, ConvGeom::new(kernel, 1, kernel / 2), rng);
        conv.mask = mask;
        Ok(conv)
    }

    pub fn zero_init<F: Real>(&self, store: &mut ParamStore<F>) {
        store.get_mut(self.weight).value.data_mut().fill(F::zero());
        store.get_mut(self.bias).value.data_mut().fill(F::zero());
    }

    /// The kernel mask as a constant array, if any.
    pub fn mask_array<F: Real>(&self) -> Option<Array<F>> {
        match self.mask {
            MaskKind::None => None,
            MaskKind::Exclusive => Some(causal_mask(self.out_channels, self.in_channels, self.geom.kernel, false)),
            MaskKind::Inclusive => Some(causal_mask(self.out_channels, self.in_channels, self.geom.kernel, true)),
        }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var, TensorError> {
        let mut w = p.var(self.weight);
        if let Some(mask) = self.mask_array() {
            let m = g.constant(mask)?;
            w = g.mul(w, m)?;
        }
        g.conv2d(x, w, Some(p.var(self.bias)), self.geom)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvTranspose2d {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geom: ConvGeom,
        rng: &mut impl Rng,
    ) -> Self {
        let k = geom.kernel;
        let fan_in = (in_channels * k * k / (geom.stride * geom.stride)).max(1);
        let bound = (3.0 / fan_in as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            &[in_channels, out_channels, k, k],
            uniform_init(rng, in_channels * out_channels * k * k, bound),
        );
        let bias = store.add(format!("{name}.bias"), &[out_channels], vec![F::zero(); out_channels]);
        ConvTranspose2d { weight, bias, geom, in_channels, out_channels }
    }

    pub fn zero_init<F: Real>(&self, store: &mut ParamStore<F>) {
        store.get_mut(self.weight).value.data_mut().fill(F::zero());
        store.get_mut(self.bias).value.data_mut().fill(F::zero());
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var, TensorError> {
        g.conv_transpose2d(x, p.var(self.weight), Some(p.var(self.bias)), self.geom)
    }
}

/// Lower bound added to the reparameterized GDN β.
pub const GDN_BETA_MIN: f64 = 1e-6;

fn inv_softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp_m1().ln()
    }
}

/// GDN / IGDN with `β = softplus(β_raw) + 1e-6` and `γ = softplus(γ_raw)`.
#[derive(Debug, Clone)]
pub struct Gdn {
    pub beta: ParamId,
    pub gamma: ParamId,
    pub channels: usize,
    pub inverse: bool,
}

impl Gdn {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, channels: usize, inverse: bool) -> Self {
        let beta_raw = F::of(inv_softplus(1.0 - GDN_BETA_MIN));
        let diag = F::of(inv_softplus(0.1));
        let off = F::of(-6.0);
        let beta = store.add(format!("{name}.beta"), &[channels], vec![beta_raw; channels]);
        let gamma_data = (0..channels * channels).map(|i| if i / channels == i % channels { diag } else { off }).collect();
        let gamma = store.add(format!("{name}.gamma"), &[channels, channels], gamma_data);
        Gdn { beta, gamma, channels, inverse }
    }

    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var, TensorError> {
        let b = g.softplus(p.var(self.beta))?;
        let b = g.add_scalar(b, F::of(GDN_BETA_MIN))?;
        let gm = g.softplus(p.var(self.gamma))?;
        g.gdn(x, b, gm, self.inverse)
    }
}

/// Nonlinearity between convolution layers.
#[derive(Debug, Clone)]
pub enum Activation {
    LeakyRelu(f64),
    Gdn(Gdn),
}

impl Activation {
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, x: Var) -> Result<Var, TensorError> {
        match self {
            Activation::LeakyRelu(s) => g.leaky_relu(x, F::of(*s)),
            Activation::Gdn(gdn) => gdn.forward(g, p, x),
        }
    }
}
