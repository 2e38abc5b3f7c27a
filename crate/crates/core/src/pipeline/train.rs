//! Warm-up then alternate training.

use std::fmt;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::PairSource;
use super::{effective_forced, forward_graph, ForcedAlpha, PipelineError};
use crate::entropy::EntropyError;
use crate::metrics::{MetricsError, MsSsimConfig};
use crate::model::{ModelError, Phase, System};
use crate::tensor::{Adam, Array, Graph, LrSchedule, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    /// CodecNet-only epochs with ModeNet frozen; at least 1.
    pub warmup_epochs: usize,
    /// Epochs after warm-up, alternating ModeNet then CodecNet. Zero trains
    /// a CodecNet-only system (α ≡ 1).
    pub alternate_epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub lr: f64,
    pub seed: u64,
    /// Defaults to 5 scales when the crops allow it, else 3.
    pub ms_ssim: Option<MsSsimConfig>,
    /// Where per-epoch checkpoints go, if anywhere.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            warmup_epochs: 2,
            alternate_epochs: 18,
            batch_size: 8,
            lambda: 0.01,
            lr: 1e-4,
            seed: 0,
            ms_ssim: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainSchedule {
    pub fn total_epochs(&self) -> usize {
        self.warmup_epochs + self.alternate_epochs
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.warmup_epochs == 0 {
            return Err(PipelineError::Data("warm-up needs at least one epoch".into()));
        }
        if self.batch_size == 0 {
            return Err(PipelineError::Data("batch size must be positive".into()));
        }
        if !(self.lambda >= 0.0) || !(self.lr > 0.0) {
            return Err(PipelineError::Data(format!("need lambda ≥ 0 and lr > 0, got {} and {}", self.lambda, self.lr)));
        }
        Ok(())
    }

    /// Which network trains in 0-based epoch `e`.
    pub fn stage(&self, e: usize) -> Stage {
        if self.alternate_epochs == 0 {
            Stage::CodecOnly
        } else if e < self.warmup_epochs {
            Stage::Warmup
        } else if (e - self.warmup_epochs) % 2 == 0 {
            Stage::Mode
        } else {
            Stage::Codec
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Warmup,
    Mode,
    Codec,
    CodecOnly,
}

impl Stage {
    fn trains_mode(self) -> bool {
        self == Stage::Mode
    }

    fn trains_codec(self) -> bool {
        self != Stage::Mode
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Warmup => "warmup",
            Stage::Mode => "mode",
            Stage::Codec => "codec",
            Stage::CodecOnly => "codec_only",
        })
    }
}

pub const LOSS_LOG_HEADER: &str = "epoch,stage,loss,distortion,rm_bpp,rc_bpp";

/// Means over one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub loss: f64,
    pub distortion: f64,
    pub rm_bpp: f64,
    pub rc_bpp: f64,
}

impl LossRecord {
    pub fn csv_line(&self) -> String {
        format!("{},{},{:.6},{:.6},{:.6},{:.6}", self.epoch, self.stage, self.loss, self.distortion, self.rm_bpp, self.rc_bpp)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub log: Vec<LossRecord>,
    pub steps: usize,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    pub fn csv(&self) -> String {
        let mut s = format!("{LOSS_LOG_HEADER}\n");
        for r in &self.log {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }
}

fn non_finite(e: &PipelineError) -> bool {
    fn tensor(t: &TensorError) -> bool {
        matches!(t, TensorError::NonFinite { .. } | TensorError::NonFiniteGradient { .. })
    }
    fn model(m: &ModelError) -> bool {
        match m {
            ModelError::Tensor(t) => tensor(t),
            ModelError::Entropy(EntropyError::Tensor(t)) => tensor(t),
            _ => false,
        }
    }
    match e {
        PipelineError::Tensor(t) => tensor(t),
        PipelineError::Model(m) => model(m),
        PipelineError::Metrics(MetricsError::Tensor(t)) => tensor(t),
        PipelineError::Entropy(EntropyError::Tensor(t)) => tensor(t),
        _ => false,
    }
}

struct Totals {
    loss: f64,
    distortion: f64,
    rm: f64,
    rc: f64,
    batches: usize,
}

/// Train `sys` in place. On a non-finite loss or gradient the system is
/// rolled back to the start of the failing epoch and an error names the
/// last checkpoint written.
pub fn train(sys: &mut System, data: &dyn PairSource, sched: &TrainSchedule) -> Result<TrainReport, PipelineError> {
    sched.validate()?;
    if data.is_empty() {
        return Err(PipelineError::Data("training set is empty".into()));
    }
    if sched.alternate_epochs == 0 {
        sys.arch.modenet = false;
    }
    let first = data.pair(0)?;
    let m = sys.arch.pad_multiple();
    if first.height() % m != 0 || first.width() % m != 0 {
        return Err(PipelineError::Data(format!(
            "training crops {}×{} must be multiples of {m}",
            first.height(),
            first.width()
        )));
    }
    let ms_cfg = sched.ms_ssim.clone().unwrap_or_else(|| MsSsimConfig::for_size(first.height(), first.width()));
    if let Some(dir) = &sched.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let batches = data.len().div_ceil(sched.batch_size);
    let lr = LrSchedule::new(sched.lr, batches * sched.total_epochs());
    let mut adam_mode = Adam::new(&sys.mode_params);
    let mut adam_codec = Adam::new(&sys.codec_params);
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let mut report = TrainReport::default();
    let mut last_good: Option<PathBuf> = None;
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..sched.total_epochs() {
        let stage = sched.stage(epoch);
        let snapshot = (sys.mode_params.clone(), sys.codec_params.clone());
        order.shuffle(&mut rng);
        let mut t = Totals { loss: 0.0, distortion: 0.0, rm: 0.0, rc: 0.0, batches: 0 };
        let mut run = || -> Result<(), PipelineError> {
            for chunk in order.chunks(sched.batch_size) {
                let pairs = chunk.iter().map(|&i| data.pair(i)).collect::<Result<Vec<_>, _>>()?;
                let prev = Array::stack(&pairs.iter().map(|p| &p.x_prev).collect::<Vec<_>>())?;
                let cur = Array::stack(&pairs.iter().map(|p| &p.x_t).collect::<Vec<_>>())?;
                let mut g = Graph::new();
                let pm = sys.mode_params.bind(&mut g, stage.trains_mode())?;
                let pc = sys.codec_params.bind(&mut g, stage.trains_codec())?;
                let forced = effective_forced(sys, ForcedAlpha::None);
                let xp = g.constant(prev)?;
                let xt = g.constant(cur)?;
                let nodes = forward_graph(&mut g, sys, &pm, &pc, xp, xt, sched.lambda, &mut Phase::Train(&mut rng), forced, &ms_cfg)?;
                let loss = g.item(nodes.terms.loss) as f64;
                if !loss.is_finite() {
                    return Err(TensorError::NonFinite { op: "loss" }.into());
                }
                g.backward(nodes.terms.loss)?;
                let step_lr = lr.at(report.steps);
                if stage.trains_mode() {
                    let grads = sys.mode_params.take_grads(&mut g, &pm);
                    adam_mode.step(&mut sys.mode_params, &grads, step_lr)?;
                } else {
                    let grads = sys.codec_params.take_grads(&mut g, &pc);
                    adam_codec.step(&mut sys.codec_params, &grads, step_lr)?;
                }
                report.steps += 1;
                t.loss += loss;
                t.distortion += g.item(nodes.terms.distortion) as f64;
                t.rm += g.item(nodes.terms.rm_bpp) as f64;
                t.rc += g.item(nodes.terms.rc_bpp) as f64;
                t.batches += 1;
            }
            Ok(())
        };
        if let Err(e) = run() {
            if non_finite(&e) {
                (sys.mode_params, sys.codec_params) = snapshot;
                return Err(PipelineError::NonFinite { epoch: epoch + 1, last_good, detail: e.to_string() });
            }
            return Err(e);
        }
        let k = t.batches.max(1) as f64;
        let rec = LossRecord {
            epoch: epoch + 1,
            stage,
            loss: t.loss / k,
            distortion: t.distortion / k,
            rm_bpp: t.rm / k,
            rc_bpp: t.rc / k,
        };
        log::info!("epoch {} ({}): loss {:.5} D {:.5} Rm {:.4} Rc {:.4}", rec.epoch, rec.stage, rec.loss, rec.distortion, rec.rm_bpp, rec.rc_bpp);
        report.log.push(rec);
        if let Some(dir) = &sched.checkpoint_dir {
            let path = dir.join(format!("epoch_{:03}.mdnw", epoch + 1));
            sys.save(&path)?;
            report.checkpoints.push(path.clone());
            last_good = Some(path);
        }
    }
    Ok(report)
}
