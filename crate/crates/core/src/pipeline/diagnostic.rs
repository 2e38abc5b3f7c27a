//! Post-hoc copy/code partition: pixel i is copied when
//! d(x̃, x; i) ≤ d(x̂, x; i) + λ·r(i). Analysis only.

use super::{infer, ForcedAlpha, PipelineError};
use crate::model::System;
use crate::tensor::Array;

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionDiagnostic {
    pub height: usize,
    pub width: usize,
    pub lambda: f64,
    /// Per-pixel channel-mean squared error of the prediction.
    pub d_copy: Vec<f64>,
    /// Same for the coded reconstruction.
    pub d_code: Vec<f64>,
    /// Coding rate, bits per pixel.
    pub rate: Vec<f64>,
    /// (d_copy − d_code) / rate; `None` where the rate is zero.
    pub ell: Vec<Option<f64>>,
    /// Membership in S (copy).
    pub in_s: Vec<bool>,
    /// Pixels put in S only because their rate is zero.
    pub zero_rate: usize,
    /// Fraction of pixels where S agrees with {α < 0.5}.
    pub agreement: Option<f64>,
}

impl PartitionDiagnostic {
    pub fn copy_count(&self) -> usize {
        self.in_s.iter().filter(|&&s| s).count()
    }

    /// S recomputed from ℓ and λ.
    pub fn recomputed(&self) -> Vec<bool> {
        self.ell.iter().map(|l| l.map_or(true, |l| l <= self.lambda)).collect()
    }
}

fn sq_err(a: &Array<f32>, b: &Array<f32>, y: usize, x: usize) -> f64 {
    let c = a.shape().c;
    (0..c).map(|k| (a.at(0, k, y, x) as f64 - b.at(0, k, y, x) as f64).powi(2)).sum::<f64>() / c as f64
}

/// Evaluate the partition inequality at every pixel. Arrays are single
/// frames; `rate_map` and `alpha` are 1×1×H×W.
pub fn diagnostic_partition(
    x_pred: &Array<f32>,
    x: &Array<f32>,
    x_hat: &Array<f32>,
    rate_map: &Array<f32>,
    lambda: f64,
    alpha: Option<&Array<f32>>,
) -> Result<PartitionDiagnostic, PipelineError> {
    let s = x.shape();
    let plane = |a: &Array<f32>| (a.shape().n, a.shape().h, a.shape().w);
    if s.n != 1 || x_pred.shape() != s || x_hat.shape() != s || plane(rate_map) != (1, s.h, s.w) || rate_map.shape().c != 1 {
        return Err(PipelineError::Data("diagnostic inputs must share one 1×C×H×W frame size".into()));
    }
    if let Some(a) = alpha {
        if a.shape() != rate_map.shape() {
            return Err(PipelineError::Data(format!("α is {}, expected {}", a.shape(), rate_map.shape())));
        }
    }
    if !(lambda >= 0.0) {
        return Err(PipelineError::Data(format!("lambda {lambda} must be ≥ 0")));
    }
    let n = s.h * s.w;
    let mut d = PartitionDiagnostic {
        height: s.h,
        width: s.w,
        lambda,
        d_copy: Vec::with_capacity(n),
        d_code: Vec::with_capacity(n),
        rate: Vec::with_capacity(n),
        ell: Vec::with_capacity(n),
        in_s: Vec::with_capacity(n),
        zero_rate: 0,
        agreement: None,
    };
    let mut agree = 0usize;
    for y in 0..s.h {
        for xx in 0..s.w {
            let dc = sq_err(x_pred, x, y, xx);
            let dx = sq_err(x_hat, x, y, xx);
            let r = rate_map.at(0, 0, y, xx) as f64;
            let ell = (r > 0.0).then(|| (dc - dx) / r);
            let copy = match ell {
                Some(l) => l <= lambda,
                None => {
                    d.zero_rate += 1;
                    true
                }
            };
            if let Some(a) = alpha {
                if (a.at(0, 0, y, xx) < 0.5) == copy {
                    agree += 1;
                }
            }
            d.d_copy.push(dc);
            d.d_code.push(dx);
            d.rate.push(r);
            d.ell.push(ell);
            d.in_s.push(copy);
        }
    }
    if alpha.is_some() {
        d.agreement = Some(agree as f64 / n as f64);
    }
    Ok(d)
}

/// Run the system on a padded pair: x̂ and the rate map come from coding the
/// whole frame (α ≡ 1), agreement is measured against the learned α.
pub fn diagnose(sys: &System, x_prev: &Array<f32>, x_t: &Array<f32>, lambda: f64) -> Result<PartitionDiagnostic, PipelineError> {
    let coded = infer(sys, x_prev, x_t, lambda, ForcedAlpha::Ones)?;
    let learned = infer(sys, x_prev, x_t, lambda, ForcedAlpha::None)?;
    diagnostic_partition(x_prev, x_t, &coded.x_hat, &coded.rate_map, lambda, Some(&learned.alpha))
}
