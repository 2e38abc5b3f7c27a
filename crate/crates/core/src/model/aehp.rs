//! The autoencoder-with-hyperprior block both networks are built from:
//! g_a / g_s, h_a / h_s, an optional masked-convolution context model and
//! the entropy coding of the quantized latents.

use rand::{Rng, RngCore};

use super::config::BlockConfig;
use super::ModelError;
use crate::entropy::{quantize_infer, quantize_train, scale_from_raw, QuantizedLatents, RangeDecoder, RangeEncoder, B_MIN};
use crate::tensor::{
    softplus, Activation, Array, Bound, Conv2d, ConvGeom, ConvTranspose2d, Gdn, Graph, MaskKind, ParamId, ParamStore,
    Shape, Var,
};

/// Training uses additive uniform noise, inference rounds.
pub enum Phase<'a> {
    Train(&'a mut dyn RngCore),
    Infer,
}

impl Phase<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Phase::Train(_))
    }

    fn quantize(&mut self, g: &mut Graph<f32>, x: Var) -> Result<Var, ModelError> {
        match self {
            Phase::Train(rng) => Ok(quantize_train(g, x, rng)?),
            Phase::Infer => {
                let q = quantize_infer(g.value(x))?;
                Ok(g.constant(q.to_array())?)
            }
        }
    }
}

/// Graph nodes produced by the latent path of one block.
#[derive(Debug, Clone, Copy)]
pub struct LatentOut {
    /// Noisy (train) or rounded (infer) main latents.
    pub y_hat: Var,
    pub z_hat: Var,
    /// Per-element information content of `y_hat` / `z_hat`.
    pub bits_y: Var,
    pub bits_z: Var,
    /// Sum of both, in bits.
    pub total_bits: Var,
}

#[derive(Debug, Clone)]
struct ContextModel {
    masked: Conv2d,
    ep1: Conv2d,
    ep2: Conv2d,
}

#[derive(Debug, Clone)]
enum HyperLayer {
    Down(Conv2d),
    Up(ConvTranspose2d),
}

#[derive(Debug, Clone)]
pub struct AeHp {
    pub cfg: BlockConfig,
    g_a: Vec<Conv2d>,
    g_a_act: Vec<Activation>,
    g_s: Vec<ConvTranspose2d>,
    g_s_act: Vec<Activation>,
    h_a: Vec<Conv2d>,
    h_s: Vec<HyperLayer>,
    z_scale: ParamId,
    context: Option<ContextModel>,
    slope: f64,
}

fn act(store: &mut ParamStore<f32>, name: String, ch: usize, gdn: bool, inverse: bool, slope: f64) -> Activation {
    if gdn {
        Activation::Gdn(Gdn::new(store, &name, ch, inverse))
    } else {
        Activation::LeakyRelu(slope)
    }
}

/// Raw value whose `B_MIN + softplus` is 1.
fn unit_scale_raw() -> f32 {
    ((1.0 - B_MIN).exp_m1()).ln() as f32
}

impl AeHp {
    /// `synth_extra` extra channels are concatenated to the latents before g_s.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore<f32>,
        prefix: &str,
        cfg: &BlockConfig,
        in_ch: usize,
        out_ch: usize,
        synth_extra: usize,
        gdn: bool,
        slope: f64,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        cfg.validate(prefix)?;
        let (f, n, h) = (cfg.f, cfg.n, cfg.hyper);
        let depth = cfg.strides.len();
        let mut g_a = Vec::new();
        let mut g_a_act = Vec::new();
        for (i, &s) in cfg.strides.iter().enumerate() {
            let cin = if i == 0 { in_ch } else { f };
            let cout = if i + 1 == depth { n } else { f };
            g_a.push(Conv2d::new(store, &format!("{prefix}.g_a.{i}"), cin, cout, ConvGeom::same(cfg.kernel, s), rng));
            if i + 1 < depth {
                g_a_act.push(act(store, format!("{prefix}.g_a.gdn{i}"), f, gdn, false, slope));
            }
        }
        let mut g_s = Vec::new();
        let mut g_s_act = Vec::new();
        for (i, &s) in cfg.strides.iter().rev().enumerate() {
            let cin = if i == 0 { n + synth_extra } else { f };
            let cout = if i + 1 == depth { out_ch } else { f };
            g_s.push(ConvTranspose2d::new(store, &format!("{prefix}.g_s.{i}"), cin, cout, ConvGeom::same(cfg.kernel, s), rng));
            if i + 1 < depth {
                g_s_act.push(act(store, format!("{prefix}.g_s.igdn{i}"), f, gdn, true, slope));
            }
        }
        let mut h_a = vec![Conv2d::new(store, &format!("{prefix}.h_a.0"), n, h, ConvGeom::same(3, 1), rng)];
        for (i, &s) in cfg.hyper_strides.iter().enumerate() {
            h_a.push(Conv2d::new(store, &format!("{prefix}.h_a.{}", i + 1), h, h, ConvGeom::same(cfg.hyper_kernel, s), rng));
        }
        let mut h_s = Vec::new();
        for (i, &s) in cfg.hyper_strides.iter().rev().enumerate() {
            let name = format!("{prefix}.h_s.{i}");
            h_s.push(HyperLayer::Up(ConvTranspose2d::new(store, &name, h, h, ConvGeom::same(cfg.hyper_kernel, s), rng)));
        }
        let last = format!("{prefix}.h_s.{}", cfg.hyper_strides.len());
        h_s.push(HyperLayer::Down(Conv2d::new(store, &last, h, 2 * n, ConvGeom::same(3, 1), rng)));
        let z_scale = store.add(format!("{prefix}.z_scale"), &[1, h, 1, 1], vec![unit_scale_raw(); h]);
        let context = if cfg.context {
            Some(ContextModel {
                masked: Conv2d::masked(store, &format!("{prefix}.r"), n, f, cfg.context_kernel, MaskKind::Exclusive, rng)?,
                ep1: Conv2d::new(store, &format!("{prefix}.ep.0"), 2 * n + f, 2 * n, ConvGeom::same(1, 1), rng),
                ep2: Conv2d::new(store, &format!("{prefix}.ep.1"), 2 * n, 2 * n, ConvGeom::same(1, 1), rng),
            })
        } else {
            None
        };
        Ok(AeHp { cfg: cfg.clone(), g_a, g_a_act, g_s, g_s_act, h_a, h_s, z_scale, context, slope })
    }

    /// Zero the last synthesis layer so g_s outputs exactly 0.
    pub fn zero_synthesis_output(&self, store: &mut ParamStore<f32>) {
        if let Some(last) = self.g_s.last() {
            last.zero_init(store);
        }
    }

    pub fn analysis(&self, g: &mut Graph<f32>, p: &Bound, x: Var) -> Result<Var, ModelError> {
        let mut h = x;
        for (i, conv) in self.g_a.iter().enumerate() {
            h = conv.forward(g, p, h)?;
            if let Some(a) = self.g_a_act.get(i) {
                h = a.forward(g, p, h)?;
            }
        }
        Ok(h)
    }

    pub fn synthesis(&self, g: &mut Graph<f32>, p: &Bound, y: Var, extra: Option<Var>) -> Result<Var, ModelError> {
        let mut h = match extra {
            Some(e) => g.concat(&[y, e])?,
            None => y,
        };
        for (i, conv) in self.g_s.iter().enumerate() {
            h = conv.forward(g, p, h)?;
            if let Some(a) = self.g_s_act.get(i) {
                h = a.forward(g, p, h)?;
            }
        }
        Ok(h)
    }

    fn hyper_analysis(&self, g: &mut Graph<f32>, p: &Bound, y: Var) -> Result<Var, ModelError> {
        let mut h = y;
        for (i, conv) in self.h_a.iter().enumerate() {
            h = conv.forward(g, p, h)?;
            if i + 1 < self.h_a.len() {
                h = g.leaky_relu(h, self.slope as f32)?;
            }
        }
        Ok(h)
    }

    fn hyper_synthesis(&self, g: &mut Graph<f32>, p: &Bound, z: Var) -> Result<Var, ModelError> {
        let mut h = z;
        for (i, layer) in self.h_s.iter().enumerate() {
            h = match layer {
                HyperLayer::Down(c) => c.forward(g, p, h)?,
                HyperLayer::Up(c) => c.forward(g, p, h)?,
            };
            if i + 1 < self.h_s.len() {
                h = g.leaky_relu(h, self.slope as f32)?;
            }
        }
        Ok(h)
    }

    /// μ and raw scale channels for the main latents, 2n channels.
    fn entropy_params(&self, g: &mut Graph<f32>, p: &Bound, hs: Var, y_hat: Var) -> Result<Var, ModelError> {
        match &self.context {
            None => Ok(hs),
            Some(cm) => {
                let c = cm.masked.forward(g, p, y_hat)?;
                let e = g.concat(&[hs, c])?;
                let e = cm.ep1.forward(g, p, e)?;
                let e = g.leaky_relu(e, self.slope as f32)?;
                Ok(cm.ep2.forward(g, p, e)?)
            }
        }
    }

    /// Hyperprior and rate for analysis output `y`.
    pub fn latents(&self, g: &mut Graph<f32>, p: &Bound, y: Var, phase: &mut Phase) -> Result<LatentOut, ModelError> {
        let n = self.cfg.n;
        let z = self.hyper_analysis(g, p, y)?;
        let z_hat = phase.quantize(g, z)?;
        let y_hat = phase.quantize(g, y)?;
        let zs = g.shape(z_hat);
        let raw = g.expand_channels(p.var(self.z_scale), zs)?;
        let bz = scale_from_raw(g, raw)?;
        let zero = g.constant(Array::zeros(zs))?;
        let bits_z = g.laplace_bits(z_hat, zero, bz)?;
        let hs = self.hyper_synthesis(g, p, z_hat)?;
        let params = self.entropy_params(g, p, hs, y_hat)?;
        let mu = g.slice_channels(params, 0, n)?;
        let raw_b = g.slice_channels(params, n, n)?;
        let b = scale_from_raw(g, raw_b)?;
        let bits_y = g.laplace_bits(y_hat, mu, b)?;
        let sy = g.sum_all(bits_y)?;
        let sz = g.sum_all(bits_z)?;
        let total_bits = g.add(sy, sz)?;
        Ok(LatentOut { y_hat, z_hat, bits_y, bits_z, total_bits })
    }

    /// Shape of the main latents for a padded `h×w` input.
    pub fn latent_shape(&self, h: usize, w: usize) -> Shape {
        let s = self.cfg.stride_product();
        Shape::new(1, self.cfg.n, h / s, w / s)
    }

    pub fn hyper_shape(&self, h: usize, w: usize) -> Shape {
        let s = self.cfg.total_stride();
        Shape::new(1, self.cfg.hyper, h / s, w / s)
    }

    fn z_scales(&self, store: &ParamStore<f32>) -> Vec<f64> {
        store.get(self.z_scale).value.data().iter().map(|&r| B_MIN + softplus(r as f64)).collect()
    }

    /// h_s(ẑ), computed identically by encoder and decoder.
    fn hyper_features(&self, store: &ParamStore<f32>, z_hat: &QuantizedLatents) -> Result<Array<f32>, ModelError> {
        let mut g = Graph::new();
        let p = store.bind(&mut g, false)?;
        let z = g.constant(z_hat.to_array())?;
        let hs = self.hyper_synthesis(&mut g, &p, z)?;
        Ok(g.value(hs).clone())
    }

    /// (μ, b) of the `n` latents at one position. Only causal neighbours of
    /// `y_hat` are read, in a fixed order, so encoder and decoder agree bitwise.
    fn params_at(&self, store: &ParamStore<f32>, hs: &Array<f32>, y_hat: &Array<f32>, py: usize, px: usize) -> Vec<(f64, f64)> {
        let n = self.cfg.n;
        let s = y_hat.shape();
        let mut feat: Vec<f32> = (0..2 * n).map(|c| hs.at(0, c, py, px)).collect();
        if let Some(cm) = &self.context {
            let w = store.get(cm.masked.weight).value.data();
            let bias = store.get(cm.masked.bias).value.data();
            let k = cm.masked.geom.kernel;
            let c = k / 2;
            for o in 0..cm.masked.out_channels {
                let mut acc = bias[o];
                for ci in 0..n {
                    for ky in 0..=c {
                        let iy = py as isize + ky as isize - c as isize;
                        if iy < 0 {
                            continue;
                        }
                        let kx_end = if ky == c { c } else { k };
                        for kx in 0..kx_end {
                            let ix = px as isize + kx as isize - c as isize;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            acc += w[((o * n + ci) * k + ky) * k + kx] * y_hat.at(0, ci, iy as usize, ix as usize);
                        }
                    }
                }
                feat.push(acc);
            }
            let slope = self.slope as f32;
            let hidden: Vec<f32> = pointwise(store, &cm.ep1, &feat).into_iter().map(|v| if v >= 0.0 { v } else { v * slope }).collect();
            feat = pointwise(store, &cm.ep2, &hidden);
        }
        (0..n).map(|c| (feat[c] as f64, B_MIN + softplus(feat[n + c] as f64))).collect()
    }

    /// Range-code ẑ then ŷ into two chunks.
    pub fn encode(&self, store: &ParamStore<f32>, y_hat: &QuantizedLatents, z_hat: &QuantizedLatents) -> Result<(Vec<u8>, Vec<u8>), ModelError> {
        let zs = self.z_scales(store);
        let mut ez = RangeEncoder::new();
        let sz = z_hat.shape;
        for (i, &v) in z_hat.values.iter().enumerate() {
            ez.encode_laplace(v, 0.0, zs[(i / sz.plane()) % sz.c])?;
        }
        let hs = self.hyper_features(store, z_hat)?;
        let ya = y_hat.to_array::<f32>();
        let sy = y_hat.shape;
        let mut ey = RangeEncoder::new();
        for py in 0..sy.h {
            for px in 0..sy.w {
                let params = self.params_at(store, &hs, &ya, py, px);
                for (c, &(mu, b)) in params.iter().enumerate() {
                    ey.encode_laplace(y_hat.values[ya.offset(0, c, py, px)], mu, b)?;
                }
            }
        }
        Ok((ez.finish(), ey.finish()))
    }

    /// Inverse of [`AeHp::encode`] for a padded `h×w` frame.
    pub fn decode(&self, store: &ParamStore<f32>, z_bytes: &[u8], y_bytes: &[u8], h: usize, w: usize) -> Result<QuantizedLatents, ModelError> {
        let sz = self.hyper_shape(h, w);
        let zs = self.z_scales(store);
        let mut dz = RangeDecoder::new(z_bytes);
        let mut zv = Vec::with_capacity(sz.numel());
        for i in 0..sz.numel() {
            zv.push(dz.decode_laplace(0.0, zs[(i / sz.plane()) % sz.c])?);
        }
        dz.finish()?;
        let z_hat = QuantizedLatents { shape: sz, values: zv };
        let hs = self.hyper_features(store, &z_hat)?;
        let sy = self.latent_shape(h, w);
        if hs.shape() != sy.with_c(2 * self.cfg.n) {
            return Err(ModelError::Config(format!("hyper features {} do not match latents {sy}", hs.shape())));
        }
        let mut ya = Array::<f32>::zeros(sy);
        let mut values = vec![0i32; sy.numel()];
        let mut dy = RangeDecoder::new(y_bytes);
        for py in 0..sy.h {
            for px in 0..sy.w {
                let params = self.params_at(store, &hs, &ya, py, px);
                for (c, &(mu, b)) in params.iter().enumerate() {
                    let v = dy.decode_laplace(mu, b)?;
                    let o = ya.offset(0, c, py, px);
                    values[o] = v;
                    ya.data_mut()[o] = v as f32;
                }
            }
        }
        dy.finish()?;
        Ok(QuantizedLatents { shape: sy, values })
    }
}

/// 1×1 convolution of one feature vector.
fn pointwise(store: &ParamStore<f32>, conv: &Conv2d, input: &[f32]) -> Vec<f32> {
    let w = store.get(conv.weight).value.data();
    let b = store.get(conv.bias).value.data();
    let cin = conv.in_channels;
    (0..conv.out_channels)
        .map(|o| {
            let mut acc = b[o];
            for (i, &x) in input.iter().enumerate() {
                acc += w[o * cin + i] * x;
            }
            acc
        })
        .collect()
}

/// Integer latents held by a graph node.
pub fn to_symbols(g: &Graph<f32>, v: Var) -> Result<QuantizedLatents, ModelError> {
    Ok(quantize_infer(g.value(v))?)
}
