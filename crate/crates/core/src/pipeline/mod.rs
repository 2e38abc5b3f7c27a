//! The complete P-frame system: blending, training, bitstream encode/decode,
//! datasets, the partition diagnostic and RD evaluation.

mod codec;
pub mod data;
mod diagnostic;
mod eval;
mod train;

use thiserror::Error;

pub use codec::{decode, encode, EncodeReport};
pub use data::{FramePair, SynthSpec};
pub use diagnostic::{diagnose, diagnostic_partition, PartitionDiagnostic};
pub use eval::{eval_rd, evaluate_pair, msssim_of, PairEval};
pub use train::{train, LossRecord, Stage, TrainReport, TrainSchedule, LOSS_LOG_HEADER};

use crate::entropy::EntropyError;
use crate::metrics::{ms_ssim, rd_loss, MetricsError, MsSsimConfig, RdTerms};
use crate::model::{CodecOut, LatentOut, ModeOut, ModelError, Phase, System};
use crate::tensor::{Array, Bound, Graph, Shape, TensorError, Var};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("data: {0}")]
    Data(String),
    #[error("bitstream was made with model {found}, loaded model is {expected}")]
    HashMismatch { expected: String, found: String },
    #[error("bitstream does not match the loaded model: {0}")]
    ConfigMismatch(String),
    #[error("non-finite value in epoch {epoch} ({detail}); last good checkpoint: {}", last_good.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    NonFinite { epoch: usize, last_good: Option<std::path::PathBuf>, detail: String },
}

/// Override for ModeNet's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ForcedAlpha {
    #[default]
    None,
    /// Copy everything; CodecNet is bypassed.
    Zeros,
    /// Code everything through CodecNet.
    Ones,
}

/// Graph nodes of one system forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub x_hat: Var,
    pub alpha: Var,
    /// α⊙x̃_t, absent when CodecNet is bypassed.
    pub masked_pred: Option<Var>,
    pub mode: Option<ModeOut>,
    pub codec: Option<CodecOut>,
    pub rm_bits: Var,
    pub rc_bits: Var,
    pub terms: RdTerms,
}

/// The α actually used: ModeNet disabled means all ones.
pub fn effective_forced(sys: &System, forced: ForcedAlpha) -> ForcedAlpha {
    if forced == ForcedAlpha::None && !sys.arch.modenet {
        ForcedAlpha::Ones
    } else {
        forced
    }
}

/// Build m → masking → c → blend → loss on `g`. `x_prev` is the prediction.
#[allow(clippy::too_many_arguments)]
pub fn forward_graph(
    g: &mut Graph<f32>,
    sys: &System,
    pm: &Bound,
    pc: &Bound,
    x_prev: Var,
    x_t: Var,
    lambda: f64,
    phase: &mut Phase,
    forced: ForcedAlpha,
    ms_cfg: &MsSsimConfig,
) -> Result<ForwardNodes, PipelineError> {
    let s = g.shape(x_t);
    if g.shape(x_prev) != s {
        return Err(TensorError::ShapeMismatch { op: "system_forward", left: g.shape(x_prev), right: s }.into());
    }
    let mask_shape = Shape::new(s.n, 1, s.h, s.w);
    let zero_bits = || Array::scalar(0.0f32);
    let (alpha, mode, rm_bits) = match effective_forced(sys, forced) {
        ForcedAlpha::None => {
            let m = sys.modenet.forward(g, pm, x_prev, x_t, phase)?;
            (m.alpha, Some(m), m.latents.total_bits)
        }
        ForcedAlpha::Zeros => (g.constant(Array::zeros(mask_shape))?, None, g.constant(zero_bits())?),
        ForcedAlpha::Ones => (g.constant(Array::full(mask_shape, 1.0))?, None, g.constant(zero_bits())?),
    };
    let (x_hat, codec, masked_pred, rc_bits) = if effective_forced(sys, forced) == ForcedAlpha::Zeros {
        (x_prev, None, None, g.constant(zero_bits())?)
    } else {
        let mp = g.broadcast_mul(alpha, x_prev)?;
        let mt = g.broadcast_mul(alpha, x_t)?;
        let c = sys.codecnet.forward(g, pc, mp, mt, phase)?;
        let x_hat = blend(g, alpha, x_prev, c.x_hat)?;
        (x_hat, Some(c), Some(mp), c.latents.total_bits)
    };
    let terms = rd_loss(g, x_hat, x_t, rm_bits, rc_bits, lambda, ms_cfg)?;
    Ok(ForwardNodes { x_hat, alpha, masked_pred, mode, codec, rm_bits, rc_bits, terms })
}

/// (1 − α)⊙x̃_t + x̂_c.
pub fn blend(g: &mut Graph<f32>, alpha: Var, x_prev: Var, x_hat_c: Var) -> Result<Var, PipelineError> {
    let keep = g.one_minus(alpha)?;
    let copy = g.broadcast_mul(keep, x_prev)?;
    Ok(g.add(copy, x_hat_c)?)
}

/// Everything an inference pass produces, as plain arrays.
#[derive(Debug, Clone)]
pub struct SystemOutput {
    pub x_hat: Array<f32>,
    pub alpha: Array<f32>,
    /// CodecNet output x̂_c (zeros when bypassed).
    pub x_hat_c: Array<f32>,
    pub rm_bits: f64,
    pub rc_bits: f64,
    /// Model-estimated CodecNet bits per pixel, 1×1×H×W.
    pub rate_map: Array<f32>,
    pub loss: f64,
    pub distortion: f64,
    pub msssim: f64,
    pub mode_latents: Option<(Array<f32>, Array<f32>)>,
    pub codec_latents: Option<(Array<f32>, Array<f32>)>,
}

/// Deterministic inference pass on an already padded pair.
pub fn infer(
    sys: &System,
    x_prev: &Array<f32>,
    x_t: &Array<f32>,
    lambda: f64,
    forced: ForcedAlpha,
) -> Result<SystemOutput, PipelineError> {
    let s = x_t.shape();
    let ms_cfg = MsSsimConfig::for_size(s.h, s.w);
    let mut g = Graph::new();
    let pm = sys.mode_params.bind(&mut g, false)?;
    let pc = sys.codec_params.bind(&mut g, false)?;
    let xp = g.constant(x_prev.clone())?;
    let xt = g.constant(x_t.clone())?;
    let nodes = forward_graph(&mut g, sys, &pm, &pc, xp, xt, lambda, &mut Phase::Infer, forced, &ms_cfg)?;
    let ms = ms_ssim(&mut g, nodes.x_hat, xt, &ms_cfg)?;
    let latents = |l: &LatentOut| (g.value(l.y_hat).clone(), g.value(l.z_hat).clone());
    let rate_map = match &nodes.codec {
        Some(c) => rate_map(&g, &c.latents, s, sys.codecnet.net.cfg.stride_product(), sys.codecnet.net.cfg.total_stride()),
        None => Array::zeros(Shape::new(s.n, 1, s.h, s.w)),
    };
    let x_hat_c = nodes.codec.map(|c| g.value(c.x_hat).clone()).unwrap_or_else(|| Array::zeros(s));
    Ok(SystemOutput {
        x_hat: g.value(nodes.x_hat).clone(),
        alpha: g.value(nodes.alpha).clone(),
        x_hat_c,
        rm_bits: g.item(nodes.rm_bits) as f64,
        rc_bits: g.item(nodes.rc_bits) as f64,
        rate_map,
        loss: g.item(nodes.terms.loss) as f64,
        distortion: g.item(nodes.terms.distortion) as f64,
        msssim: g.item(ms) as f64,
        mode_latents: nodes.mode.map(|m| latents(&m.latents)),
        codec_latents: nodes.codec.map(|c| latents(&c.latents)),
    })
}

/// Spread each latent's bits evenly over the pixels of its stride block.
fn rate_map(g: &Graph<f32>, l: &LatentOut, s: Shape, stride: usize, hyper_stride: usize) -> Array<f32> {
    let mut map = vec![0f64; s.n * s.h * s.w];
    for (bits, st) in [(g.value(l.bits_y), stride), (g.value(l.bits_z), hyper_stride)] {
        let bs = bits.shape();
        let share = 1.0 / (st * st) as f64;
        for n in 0..bs.n {
            for c in 0..bs.c {
                for y in 0..bs.h {
                    for x in 0..bs.w {
                        let v = bits.at(n, c, y, x) as f64 * share;
                        for py in y * st..((y + 1) * st).min(s.h) {
                            for px in x * st..((x + 1) * st).min(s.w) {
                                map[(n * s.h + py) * s.w + px] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    Array::from_vec(Shape::new(s.n, 1, s.h, s.w), map.into_iter().map(|v| v as f32).collect()).expect("rate map shape")
}
