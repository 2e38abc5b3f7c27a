//! Browser demo: synthetic pairs, coding a pair in the three α modes, and
//! the quantized Laplace rate model.

use modenet::entropy::cdf::table_bits;
use modenet::model::{ArchConfig, CodecMode, System};
use modenet::pipeline::data::synth_pair;
use modenet::pipeline::{decode, encode, msssim_of, ForcedAlpha, FramePair, SynthSpec};
use modenet::tensor::Array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

const SIDE: usize = 64;

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// 1×C×H×W in [0,1] → RGBA bytes. One channel is shown as gray.
pub fn rgba(a: &Array<f32>) -> Vec<u8> {
    let s = a.shape();
    let mut out = Vec::with_capacity(s.h * s.w * 4);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                let v = a.at(0, c.min(s.c - 1), y, x);
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
    }
    out
}

#[wasm_bindgen]
pub struct Demo {
    sys: System,
    pair: FramePair,
    recon: Array<f32>,
    alpha: Array<f32>,
}

#[wasm_bindgen]
impl Demo {
    /// A 64×64 toy system with weights drawn from `model_seed`.
    #[wasm_bindgen(constructor)]
    pub fn new(model_seed: u32) -> Result<Demo, JsValue> {
        let sys = System::new(&ArchConfig::toy(CodecMode::Conditional), model_seed as u64).map_err(err)?;
        let pair = Self::make_pair(0, 2, 4);
        let blank = Array::zeros(pair.x_t.shape());
        Ok(Demo { sys, pair, recon: blank.clone(), alpha: blank })
    }

    fn make_pair(seed: u32, objects: usize, speed: i32) -> FramePair {
        let spec = SynthSpec { height: SIDE, width: SIDE, objects, speed: (speed.min(1), speed), count: 1, ..SynthSpec::default() };
        synth_pair(&spec, &mut ChaCha8Rng::seed_from_u64(seed as u64))
    }

    pub fn side(&self) -> usize {
        SIDE
    }

    /// Draw a new pair of frames.
    pub fn generate(&mut self, seed: u32, objects: usize, speed: i32) {
        self.pair = Self::make_pair(seed, objects, speed.max(0));
        self.recon = Array::zeros(self.pair.x_t.shape());
        self.alpha = Array::zeros(self.pair.x_t.shape());
    }

    pub fn prev(&self) -> Vec<u8> {
        rgba(&self.pair.x_prev)
    }

    pub fn cur(&self) -> Vec<u8> {
        rgba(&self.pair.x_t)
    }

    pub fn motion(&self) -> Vec<u8> {
        self.pair.motion.as_ref().map(rgba).unwrap_or_default()
    }

    /// Encode and decode the current pair. `mode`: 0 copy, 1 code every
    /// pixel, 2 ModeNet. Returns a one-line summary.
    pub fn code(&mut self, mode: u8) -> Result<String, JsValue> {
        let forced = match mode {
            0 => ForcedAlpha::Zeros,
            1 => ForcedAlpha::Ones,
            _ => ForcedAlpha::None,
        };
        let rep = encode(&self.sys, &self.pair, forced).map_err(err)?;
        let x_hat = decode(&self.sys, &rep.bytes, &self.pair.x_prev).map_err(err)?;
        let ms = msssim_of(&x_hat, &self.pair.x_t).map_err(err)?;
        let summary = format!(
            "{} bytes, {:.3} bpp (mode {} B, codec {} B), MS-SSIM {:.4}, mean α {:.3}",
            rep.bytes.len(),
            rep.bpp,
            rep.mode_bytes,
            rep.codec_bytes,
            ms,
            rep.alpha.mean()
        );
        self.recon = x_hat;
        self.alpha = rep.alpha;
        Ok(summary)
    }

    pub fn recon(&self) -> Vec<u8> {
        rgba(&self.recon)
    }

    pub fn alpha(&self) -> Vec<u8> {
        rgba(&self.alpha)
    }
}

/// Bits spent on each integer symbol in `lo..=hi` under the tabulated
/// quantized Laplace(μ, b).
#[wasm_bindgen]
pub fn laplace_bits(mu: f64, b: f64, lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|s| table_bits(s, mu, b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_modes_code() {
        let mut d = Demo::new(1).unwrap();
        d.generate(3, 2, 5);
        assert_eq!(d.prev().len(), SIDE * SIDE * 4);
        assert_eq!(d.motion().len(), SIDE * SIDE * 4);
        for m in 0..3 {
            let s = d.code(m).unwrap();
            assert!(s.contains("bpp"), "{s}");
            assert_eq!(d.recon().len(), SIDE * SIDE * 4);
        }
        // copy reproduces the previous frame
        d.code(0).unwrap();
        assert_eq!(d.recon(), d.prev());
    }

    #[test]
    fn laplace_bits_peak_at_mean() {
        let bits = laplace_bits(0.0, 1.0, -4, 4);
        let min = bits.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(bits[4], min);
        assert!(bits.iter().all(|b| b.is_finite() && *b > 0.0));
    }
}
