//! MS-SSIM, its dB scale, the rate-distortion loss and RD point output.

use std::io::Write;

use thiserror::Error;

use crate::tensor::{Graph, Real, TensorError, Var};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image {h}×{w} is too small for {scales} MS-SSIM scales with an {window}-tap window (needs {need}); use fewer scales")]
    TooSmall { h: usize, w: usize, scales: usize, window: usize, need: usize },
    #[error("invalid MS-SSIM config: {0}")]
    Config(String),
    #[error("lambda must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const WANG_EXPONENTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, PartialEq)]
pub struct MsSsimConfig {
    /// One exponent per scale, finest first; renormalized to sum to 1.
    pub exponents: Vec<f64>,
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        MsSsimConfig::with_scales(5).unwrap()
    }
}

impl MsSsimConfig {
    /// The standard constants, keeping the first `scales` exponents.
    pub fn with_scales(scales: usize) -> Result<Self, MetricsError> {
        if scales == 0 || scales > WANG_EXPONENTS.len() {
            return Err(MetricsError::Config(format!("scales must be 1..=5, got {scales}")));
        }
        let total: f64 = WANG_EXPONENTS[..scales].iter().sum();
        Ok(MsSsimConfig {
            exponents: WANG_EXPONENTS[..scales].iter().map(|e| e / total).collect(),
            window: 11,
            sigma: 1.5,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        })
    }

    /// The 3-scale variant for small training crops.
    pub fn small() -> Self {
        MsSsimConfig::with_scales(3).unwrap()
    }

    /// As many scales (at most five) as the smaller side allows.
    pub fn for_size(h: usize, w: usize) -> Self {
        (1..=WANG_EXPONENTS.len())
            .rev()
            .map(|k| MsSsimConfig::with_scales(k).unwrap())
            .find(|c| c.min_size() <= h.min(w))
            .unwrap_or_else(|| MsSsimConfig::with_scales(1).unwrap())
    }

    pub fn scales(&self) -> usize {
        self.exponents.len()
    }

    pub fn min_size(&self) -> usize {
        self.window << (self.scales() - 1)
    }

    pub fn taps(&self) -> Vec<f64> {
        let c = (self.window / 2) as f64;
        let raw: Vec<f64> =
            (0..self.window).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

/// Floor applied to per-scale terms before exponentiation.
const TERM_FLOOR: f64 = 1e-6;

/// MS-SSIM of `a` against `b`, averaged over channels and batch: a scalar node.
pub fn ms_ssim<F: Real>(g: &mut Graph<F>, a: Var, b: Var, cfg: &MsSsimConfig) -> Result<Var, MetricsError> {
    let s = g.shape(a);
    if s != g.shape(b) {
        return Err(TensorError::ShapeMismatch { op: "ms_ssim", left: s, right: g.shape(b) }.into());
    }
    if s.h.min(s.w) < cfg.min_size() {
        return Err(MetricsError::TooSmall {
            h: s.h,
            w: s.w,
            scales: cfg.scales(),
            window: cfg.window,
            need: cfg.min_size(),
        });
    }
    let taps: Vec<F> = cfg.taps().into_iter().map(F::of).collect();
    let (c1, c2) = (F::of(cfg.c1), F::of(cfg.c2));
    let two = F::of(2.0);
    let (mut x, mut y) = (a, b);
    let mut combined: Option<Var> = None;
    for (j, &w) in cfg.exponents.iter().enumerate() {
        if j > 0 {
            x = g.avg_pool2(x)?;
            y = g.avg_pool2(y)?;
        }
        let mx = g.blur(x, &taps)?;
        let my = g.blur(y, &taps)?;
        let xx = g.square(x)?;
        let yy = g.square(y)?;
        let xy = g.mul(x, y)?;
        let exx = g.blur(xx, &taps)?;
        let eyy = g.blur(yy, &taps)?;
        let exy = g.blur(xy, &taps)?;
        let mx2 = g.square(mx)?;
        let my2 = g.square(my)?;
        let mxy = g.mul(mx, my)?;
        let vx = g.sub(exx, mx2)?;
        let vy = g.sub(eyy, my2)?;
        let cov = g.sub(exy, mxy)?;
        let num = g.scale(cov, two)?;
        let num = g.add_scalar(num, c2)?;
        let den = g.add(vx, vy)?;
        let den = g.add_scalar(den, c2)?;
        let mut term = g.div(num, den)?;
        if j + 1 == cfg.scales() {
            let ln = g.scale(mxy, two)?;
            let ln = g.add_scalar(ln, c1)?;
            let ld = g.add(mx2, my2)?;
            let ld = g.add_scalar(ld, c1)?;
            let l = g.div(ln, ld)?;
            term = g.mul(l, term)?;
        }
        let m = g.mean_spatial(term)?;
        let m = g.clamp_min(m, F::of(TERM_FLOOR))?;
        let p = g.powf(m, F::of(w))?;
        combined = Some(match combined {
            None => p,
            Some(c) => g.mul(c, p)?,
        });
    }
    Ok(g.mean_all(combined.expect("at least one scale"))?)
}

/// Output grid of [`msssim_db`], steps per dB; fine enough to be invisible,
/// coarse enough that decimal inputs such as 0.99 land on their exact dB value.
const DB_STEPS: f64 = 1e9;

/// `−10·log10(1 − v)` with `1 − v` clamped to at least `1e-10`.
pub fn msssim_db(v: f64) -> f64 {
    let db = -10.0 * (1.0 - v).max(1e-10).log10();
    (db * DB_STEPS).round() / DB_STEPS
}

/// `(1 − MS-SSIM(x̂, x)) + λ·(R_m + R_c)` with rates given as total bits
/// over the batch and converted to bits per pixel.
pub fn rd_loss<F: Real>(
    g: &mut Graph<F>,
    x_hat: Var,
    x: Var,
    rm_bits: Var,
    rc_bits: Var,
    lambda: f64,
    cfg: &MsSsimConfig,
) -> Result<RdTerms, MetricsError> {
    if !(lambda >= 0.0) {
        return Err(MetricsError::NegativeLambda(lambda));
    }
    let s = g.shape(x);
    let pixels = (s.n * s.h * s.w) as f64;
    let m = ms_ssim(g, x_hat, x, cfg)?;
    let distortion = g.one_minus(m)?;
    let rm = g.scale(rm_bits, F::of(1.0 / pixels))?;
    let rc = g.scale(rc_bits, F::of(1.0 / pixels))?;
    let rate = g.add(rm, rc)?;
    let weighted = g.scale(rate, F::of(lambda))?;
    let loss = g.add(distortion, weighted)?;
    Ok(RdTerms { loss, distortion, rm_bpp: rm, rc_bpp: rc })
}

/// Scalar nodes making up the RD objective.
#[derive(Debug, Clone, Copy)]
pub struct RdTerms {
    pub loss: Var,
    pub distortion: Var,
    pub rm_bpp: Var,
    pub rc_bpp: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    pub lambda: f64,
    pub bpp: f64,
    pub msssim: f64,
    pub msssim_db: f64,
}

impl RdPoint {
    pub fn new(lambda: f64, bpp: f64, msssim: f64) -> Self {
        RdPoint { lambda, bpp, msssim, msssim_db: msssim_db(msssim) }
    }
}

pub const RD_CSV_HEADER: &str = "lambda,bpp,msssim,msssim_db";

pub fn write_rd_csv(mut out: impl Write, points: &[RdPoint]) -> Result<(), MetricsError> {
    writeln!(out, "{RD_CSV_HEADER}")?;
    for p in points {
        writeln!(out, "{},{:.6},{:.6},{:.4}", p.lambda, p.bpp, p.msssim, p.msssim_db)?;
    }
    Ok(())
}
