//! Frame pair → `.mdn` bytes and back.

use super::data::FramePair;
use super::{blend, effective_forced, infer, ForcedAlpha, PipelineError};
use crate::entropy::bitstream::{Bitstream, Header, FLAG_CONTEXT, FLAG_MODENET, VERSION};
use crate::entropy::quantize_infer;
use crate::model::System;
use crate::tensor::{Array, Graph, Shape};

#[derive(Debug, Clone)]
pub struct EncodeReport {
    pub bytes: Vec<u8>,
    /// Coded bits per original pixel, header excluded.
    pub bpp: f64,
    pub mode_bytes: usize,
    pub codec_bytes: usize,
    pub padded: (usize, usize),
    /// Encoder-side reconstruction, cropped; what decode must return.
    pub x_hat: Array<f32>,
    pub alpha: Array<f32>,
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

fn hex(h: &[u8; 8]) -> String {
    h.iter().map(|b| format!("{b:02x}")).collect()
}

fn check_single(a: &Array<f32>, what: &str) -> Result<(), PipelineError> {
    let s = a.shape();
    if s.n != 1 || s.c != 3 {
        return Err(PipelineError::Data(format!("{what} must be 1×3×H×W, got {s}")));
    }
    Ok(())
}

/// Pad both frames to the stride multiple, run inference and range-code the
/// latents. `forced` overrides ModeNet (`Zeros` sends no CodecNet data at all).
pub fn encode(sys: &System, pair: &FramePair, forced: ForcedAlpha) -> Result<EncodeReport, PipelineError> {
    check_single(&pair.x_t, "x_t")?;
    let (h, w) = (pair.height(), pair.width());
    let (Ok(h16), Ok(w16)) = (u16::try_from(h), u16::try_from(w)) else {
        return Err(PipelineError::Data(format!("frame {h}×{w} too large for the header")));
    };
    let m = sys.arch.pad_multiple();
    let (ph, pw) = (round_up(h, m), round_up(w, m));
    let xp = pair.x_prev.pad_reflect(ph, pw)?;
    let xt = pair.x_t.pad_reflect(ph, pw)?;
    let forced = effective_forced(sys, forced);
    let out = infer(sys, &xp, &xt, 0.0, forced)?;

    let mut chunks: [Vec<u8>; 4] = Default::default();
    let mut flags = 0;
    if let Some((y, z)) = &out.mode_latents {
        flags |= FLAG_MODENET;
        let (cz, cy) = sys.modenet.net.encode(&sys.mode_params, &quantize_infer(y)?, &quantize_infer(z)?)?;
        chunks[0] = cz;
        chunks[1] = cy;
    }
    if let Some((y, z)) = &out.codec_latents {
        let (cz, cy) = sys.codecnet.net.encode(&sys.codec_params, &quantize_infer(y)?, &quantize_infer(z)?)?;
        chunks[2] = cz;
        chunks[3] = cy;
    }
    if sys.arch.codec.context {
        flags |= FLAG_CONTEXT;
    }
    let bs = Bitstream {
        header: Header {
            version: VERSION,
            codec_config: sys.arch.codec_mode.code(),
            flags,
            width: w16,
            height: h16,
            model_hash: sys.hash()?,
        },
        chunks,
    };
    let bytes = bs.to_bytes()?;
    Ok(EncodeReport {
        bpp: bs.bpp(),
        mode_bytes: bs.chunks[0].len() + bs.chunks[1].len(),
        codec_bytes: bs.chunks[2].len() + bs.chunks[3].len(),
        bytes,
        padded: (ph, pw),
        x_hat: out.x_hat.crop(0, 0, h, w)?,
        alpha: out.alpha.crop(0, 0, h, w)?,
    })
}

/// Reconstruct x̂_t from the stream and the reference frame only.
pub fn decode(sys: &System, bytes: &[u8], x_prev: &Array<f32>) -> Result<Array<f32>, PipelineError> {
    let bs = Bitstream::from_bytes(bytes)?;
    let hd = &bs.header;
    let ours = sys.hash()?;
    if hd.model_hash != ours {
        return Err(PipelineError::HashMismatch { expected: hex(&ours), found: hex(&hd.model_hash) });
    }
    if hd.codec_config != sys.arch.codec_mode.code() {
        return Err(PipelineError::ConfigMismatch(format!("codec config {} vs model {}", hd.codec_config, sys.arch.codec_mode)));
    }
    if hd.context_model() != sys.arch.codec.context {
        return Err(PipelineError::ConfigMismatch("context-model flag differs from the model".into()));
    }
    check_single(x_prev, "x_prev")?;
    let (h, w) = (hd.height as usize, hd.width as usize);
    let s = x_prev.shape();
    if (s.h, s.w) != (h, w) {
        return Err(PipelineError::Data(format!("reference is {}×{}, stream is {h}×{w}", s.h, s.w)));
    }
    let m = sys.arch.pad_multiple();
    let (ph, pw) = (round_up(h, m), round_up(w, m));
    let xp_arr = x_prev.pad_reflect(ph, pw)?;

    let mut g = Graph::new();
    let pm = sys.mode_params.bind(&mut g, false)?;
    let pc = sys.codec_params.bind(&mut g, false)?;
    let xp = g.constant(xp_arr)?;
    let codec_present = !(bs.chunks[2].is_empty() && bs.chunks[3].is_empty());
    let mask = Shape::new(1, 1, ph, pw);
    let alpha = if hd.modenet_present() {
        let yq = sys.modenet.net.decode(&sys.mode_params, &bs.chunks[0], &bs.chunks[1], ph, pw)?;
        let y = g.constant(yq.to_array())?;
        sys.modenet.alpha(&mut g, &pm, y)?
    } else if codec_present {
        g.constant(Array::full(mask, 1.0))?
    } else {
        g.constant(Array::zeros(mask))?
    };
    let x_hat = if codec_present {
        let yq = sys.codecnet.net.decode(&sys.codec_params, &bs.chunks[2], &bs.chunks[3], ph, pw)?;
        let y = g.constant(yq.to_array())?;
        let mp = g.broadcast_mul(alpha, xp)?;
        let xc = sys.codecnet.reconstruct(&mut g, &pc, y, mp)?;
        blend(&mut g, alpha, xp, xc)?
    } else {
        xp
    };
    Ok(g.value(x_hat).crop(0, 0, h, w)?)
}
