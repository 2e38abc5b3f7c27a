//! ModeNet (the transmitted per-pixel mode map α) and CodecNet (the
//! transmission coder), plus the pair of them as one loadable system.

mod aehp;
pub mod config;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use aehp::{to_symbols, AeHp, LatentOut, Phase};
pub use config::{ArchConfig, BlockConfig, CodecMode};

use crate::entropy::EntropyError;
use crate::tensor::checkpoint::{Checkpoint, Record};
use crate::tensor::{Activation, Bound, Conv2d, ConvGeom, Gdn, Graph, ParamStore, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
}

/// Exact number of stored scalar parameters.
pub fn count_parameters(store: &ParamStore<f32>) -> usize {
    store.scalar_count()
}

/// Whether the α clip passes gradients through outside [0, 1].
pub const ALPHA_STRAIGHT_THROUGH: bool = false;

#[derive(Debug, Clone)]
pub struct ModeNet {
    pub net: AeHp,
}

#[derive(Debug, Clone, Copy)]
pub struct ModeOut {
    /// N×1×H×W in [0, 1].
    pub alpha: Var,
    pub latents: LatentOut,
}

impl ModeNet {
    pub fn new(store: &mut ParamStore<f32>, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        let net = AeHp::new(store, "mode", &arch.mode, 6, 1, 0, false, arch.leaky_slope, rng)?;
        net.zero_synthesis_output(store);
        Ok(ModeNet { net })
    }

    pub fn forward(&self, g: &mut Graph<f32>, p: &Bound, x_prev: Var, x_t: Var, phase: &mut Phase) -> Result<ModeOut, ModelError> {
        let (sp, st) = (g.shape(x_prev), g.shape(x_t));
        if sp != st {
            return Err(TensorError::ShapeMismatch { op: "mode_forward", left: sp, right: st }.into());
        }
        check_padded(sp.h, sp.w, self.net.cfg.total_stride())?;
        let x = g.concat(&[x_prev, x_t])?;
        let y = self.net.analysis(g, p, x)?;
        let latents = self.net.latents(g, p, y, phase)?;
        let alpha = self.alpha(g, p, latents.y_hat)?;
        Ok(ModeOut { alpha, latents })
    }

    /// α = clip(g_s(ŷ) + ½, 0, 1).
    pub fn alpha(&self, g: &mut Graph<f32>, p: &Bound, y_hat: Var) -> Result<Var, ModelError> {
        let s = self.net.synthesis(g, p, y_hat, None)?;
        let s = g.add_scalar(s, 0.5)?;
        Ok(g.clip(s, 0.0, 1.0, ALPHA_STRAIGHT_THROUGH)?)
    }
}

fn check_padded(h: usize, w: usize, m: usize) -> Result<(), ModelError> {
    if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
        return Err(ModelError::Input(format!("frame {h}×{w} is not padded to a multiple of {m}")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CodecNet {
    pub mode: CodecMode,
    pub net: AeHp,
    pred: Vec<Conv2d>,
    pred_act: Vec<Activation>,
}

#[derive(Debug, Clone, Copy)]
pub struct CodecOut {
    /// Approximation of α⊙x_t.
    pub x_hat: Var,
    pub latents: LatentOut,
}

impl CodecNet {
    pub fn new(store: &mut ParamStore<f32>, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        let mode = arch.codec_mode;
        let (in_ch, extra) = match mode {
            CodecMode::Image | CodecMode::Difference => (3, 0),
            CodecMode::Conditional => (6, arch.pred_width),
        };
        let net = AeHp::new(store, "codec", &arch.codec, in_ch, 3, extra, true, arch.leaky_slope, rng)?;
        let mut pred = Vec::new();
        let mut pred_act = Vec::new();
        if mode == CodecMode::Conditional {
            let pw = arch.pred_width;
            for (i, &s) in arch.pred_strides.iter().enumerate() {
                let k = (arch.codec.kernel).max(s + 1) | 1;
                let cin = if i == 0 { 3 } else { pw };
                pred.push(Conv2d::new(store, &format!("codec.pred.{i}"), cin, pw, ConvGeom::same(k, s), rng));
                if i + 1 < arch.pred_strides.len() {
                    pred_act.push(Activation::Gdn(Gdn::new(store, &format!("codec.pred.gdn{i}"), pw, false)));
                }
            }
        }
        Ok(CodecNet { mode, net, pred, pred_act })
    }

    fn prediction_features(&self, g: &mut Graph<f32>, p: &Bound, masked_pred: Var) -> Result<Var, ModelError> {
        let mut h = masked_pred;
        for (i, conv) in self.pred.iter().enumerate() {
            h = conv.forward(g, p, h)?;
            if let Some(a) = self.pred_act.get(i) {
                h = a.forward(g, p, h)?;
            }
        }
        Ok(h)
    }

    pub fn forward(
        &self,
        g: &mut Graph<f32>,
        p: &Bound,
        masked_pred: Var,
        masked_target: Var,
        phase: &mut Phase,
    ) -> Result<CodecOut, ModelError> {
        let (sp, st) = (g.shape(masked_pred), g.shape(masked_target));
        if sp != st {
            return Err(TensorError::ShapeMismatch { op: "codec_forward", left: sp, right: st }.into());
        }
        check_padded(st.h, st.w, self.net.cfg.total_stride())?;
        let input = match self.mode {
            CodecMode::Image => masked_target,
            CodecMode::Difference => {
                let d = g.sub(masked_target, masked_pred)?;
                g.scale(d, 0.5)?
            }
            CodecMode::Conditional => g.concat(&[masked_pred, masked_target])?,
        };
        let y = self.net.analysis(g, p, input)?;
        let latents = self.net.latents(g, p, y, phase)?;
        let x_hat = self.reconstruct(g, p, latents.y_hat, masked_pred)?;
        Ok(CodecOut { x_hat, latents })
    }

    /// x̂_c from decoded latents and α⊙x̃_t; never sees x_t.
    pub fn reconstruct(&self, g: &mut Graph<f32>, p: &Bound, y_hat: Var, masked_pred: Var) -> Result<Var, ModelError> {
        match self.mode {
            CodecMode::Image => self.net.synthesis(g, p, y_hat, None),
            CodecMode::Difference => {
                let r = self.net.synthesis(g, p, y_hat, None)?;
                let r = g.scale(r, 2.0)?;
                Ok(g.add(masked_pred, r)?)
            }
            CodecMode::Conditional => {
                let pf = self.prediction_features(g, p, masked_pred)?;
                self.net.synthesis(g, p, y_hat, Some(pf))
            }
        }
    }
}

/// ModeNet and CodecNet with their parameters.
#[derive(Debug, Clone)]
pub struct System {
    pub arch: ArchConfig,
    pub modenet: ModeNet,
    pub codecnet: CodecNet,
    pub mode_params: ParamStore<f32>,
    pub codec_params: ParamStore<f32>,
}

const META_RECORD: &str = "meta.config";

impl System {
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mode_params = ParamStore::new();
        let modenet = ModeNet::new(&mut mode_params, arch, &mut rng)?;
        let mut codec_params = ParamStore::new();
        let codecnet = CodecNet::new(&mut codec_params, arch, &mut rng)?;
        Ok(System { arch: arch.clone(), modenet, codecnet, mode_params, codec_params })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.records.push(Record::bytes_record(META_RECORD, self.arch.to_text().into_bytes()));
        ck.push_store("", &self.mode_params);
        ck.push_store("", &self.codec_params);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let meta = ck.get(META_RECORD).ok_or_else(|| ModelError::Config("checkpoint has no config record".into()))?;
        let text = String::from_utf8(meta.bytes.clone()).map_err(|_| ModelError::Config("config record is not UTF-8".into()))?;
        let arch = ArchConfig::from_text(&text)?;
        let mut sys = System::new(&arch, 0)?;
        ck.load_store("", &mut sys.mode_params)?;
        ck.load_store("", &mut sys.codec_params)?;
        Ok(sys)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        Ok(self.to_checkpoint().to_bytes()?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        System::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// First 8 bytes of SHA-256 over the checkpoint bytes.
    pub fn hash(&self) -> Result<[u8; 8], ModelError> {
        let digest = Sha256::digest(self.to_bytes()?);
        let mut h = [0u8; 8];
        h.copy_from_slice(&digest[..8]);
        Ok(h)
    }

    pub fn mode_parameter_count(&self) -> usize {
        count_parameters(&self.mode_params)
    }

    pub fn codec_parameter_count(&self) -> usize {
        count_parameters(&self.codec_params)
    }
}
