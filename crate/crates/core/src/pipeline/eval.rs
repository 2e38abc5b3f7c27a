//! Rate-distortion evaluation with real coded bits.

use super::codec::{decode, encode};
use super::data::{FramePair, PairSource};
use super::{ForcedAlpha, PipelineError};
use crate::metrics::{ms_ssim, msssim_db, MsSsimConfig, RdPoint};
use crate::model::System;
use crate::tensor::{Array, Graph};

#[derive(Debug, Clone, PartialEq)]
pub struct PairEval {
    pub bpp: f64,
    pub mode_bpp: f64,
    pub msssim: f64,
    pub msssim_db: f64,
    pub alpha_mean: f64,
}

/// MS-SSIM between two single frames, scale count chosen from their size.
pub fn msssim_of(a: &Array<f32>, b: &Array<f32>) -> Result<f64, PipelineError> {
    let s = a.shape();
    let mut g = Graph::<f32>::new();
    let va = g.constant(a.clone())?;
    let vb = g.constant(b.clone())?;
    let m = ms_ssim(&mut g, va, vb, &MsSsimConfig::for_size(s.h, s.w))?;
    Ok(g.item(m) as f64)
}

/// Encode, decode and score one pair.
pub fn evaluate_pair(sys: &System, pair: &FramePair) -> Result<PairEval, PipelineError> {
    let rep = encode(sys, pair, ForcedAlpha::None)?;
    let x_hat = decode(sys, &rep.bytes, &pair.x_prev)?;
    let msssim = msssim_of(&x_hat, &pair.x_t)?;
    let px = (pair.height() * pair.width()) as f64;
    let a = rep.alpha.data();
    Ok(PairEval {
        bpp: rep.bpp,
        mode_bpp: rep.mode_bytes as f64 * 8.0 / px,
        msssim,
        msssim_db: msssim_db(msssim),
        alpha_mean: a.iter().map(|&v| v as f64).sum::<f64>() / a.len() as f64,
    })
}

/// One RD point per (λ, model): mean coded bpp and mean MS-SSIM over `data`.
pub fn eval_rd(models: &[(f64, &System)], data: &dyn PairSource) -> Result<Vec<RdPoint>, PipelineError> {
    if data.is_empty() {
        return Err(PipelineError::Data("evaluation set is empty".into()));
    }
    let mut points = Vec::with_capacity(models.len());
    for &(lambda, sys) in models {
        let (mut bpp, mut ms) = (0.0, 0.0);
        for i in 0..data.len() {
            let e = evaluate_pair(sys, &data.pair(i)?)?;
            bpp += e.bpp;
            ms += e.msssim;
        }
        let k = data.len() as f64;
        points.push(RdPoint::new(lambda, bpp / k, ms / k));
    }
    points.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    Ok(points)
}
