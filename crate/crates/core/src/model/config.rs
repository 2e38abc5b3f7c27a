//! Architecture configuration and its flat `key = value` text form.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::ModelError;

/// Which signal CodecNet transmits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodecMode {
    /// α⊙x_t on its own.
    Image,
    /// α⊙(x_t − x̃_t).
    Difference,
    /// α⊙x_t knowing α⊙x̃_t.
    Conditional,
}

impl CodecMode {
    pub const ALL: [CodecMode; 3] = [CodecMode::Image, CodecMode::Difference, CodecMode::Conditional];

    pub fn code(self) -> u8 {
        match self {
            CodecMode::Image => 0,
            CodecMode::Difference => 1,
            CodecMode::Conditional => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        CodecMode::ALL.get(c as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CodecMode::Image => "image",
            CodecMode::Difference => "difference",
            CodecMode::Conditional => "conditional",
        }
    }
}

impl fmt::Display for CodecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CodecMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "image" | "img" => Ok(CodecMode::Image),
            "difference" | "diff" => Ok(CodecMode::Difference),
            "conditional" | "cond" => Ok(CodecMode::Conditional),
            other => Err(ModelError::Config(format!("unknown codec mode {other:?}"))),
        }
    }
}

/// Widths, kernels and strides of one AE-HP network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockConfig {
    /// Internal feature count of g_a / g_s.
    pub f: usize,
    /// Latent channel count.
    pub n: usize,
    /// Width of h_a / h_s and of the hyper-latent.
    pub hyper: usize,
    pub kernel: usize,
    pub hyper_kernel: usize,
    pub strides: Vec<usize>,
    pub hyper_strides: Vec<usize>,
    pub context: bool,
    pub context_kernel: usize,
}

impl BlockConfig {
    pub fn stride_product(&self) -> usize {
        self.strides.iter().product()
    }

    /// Spatial factor between the input and the hyper-latent.
    pub fn total_stride(&self) -> usize {
        self.stride_product() * self.hyper_strides.iter().product::<usize>()
    }

    pub fn validate(&self, what: &str) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(format!("{what}: {m}")));
        if self.f == 0 || self.n == 0 || self.hyper == 0 {
            return bad("widths must be positive".into());
        }
        if self.strides.is_empty() || self.hyper_strides.is_empty() {
            return bad("stride ladders must be non-empty".into());
        }
        if self.strides.iter().chain(&self.hyper_strides).any(|&s| s == 0) {
            return bad("strides must be at least 1".into());
        }
        for (name, k) in [("kernel", self.kernel), ("hyper_kernel", self.hyper_kernel), ("context_kernel", self.context_kernel)] {
            if k % 2 == 0 {
                return bad(format!("{name} must be odd, got {k}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    /// Without ModeNet α is all ones and CodecNet codes the whole frame.
    pub modenet: bool,
    pub mode: BlockConfig,
    pub codec: BlockConfig,
    pub codec_mode: CodecMode,
    /// Width of the prediction-analysis branch (conditional mode only).
    pub pred_width: usize,
    pub pred_strides: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            modenet: true,
            mode: BlockConfig {
                f: 32,
                n: 48,
                hyper: 32,
                kernel: 3,
                hyper_kernel: 5,
                strides: vec![2, 2, 2, 2],
                hyper_strides: vec![2, 2],
                context: false,
                context_kernel: 5,
            },
            codec: BlockConfig {
                f: 96,
                n: 128,
                hyper: 96,
                kernel: 3,
                hyper_kernel: 5,
                strides: vec![2, 2, 2, 2],
                hyper_strides: vec![2, 2],
                context: true,
                context_kernel: 5,
            },
            codec_mode: CodecMode::Conditional,
            pred_width: 48,
            pred_strides: vec![2, 2, 4],
            leaky_slope: 0.01,
        }
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>, ModelError> {
    v.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| ModelError::Config(format!("{key}: bad integer list {v:?}"))))
        .collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

impl ArchConfig {
    /// Small networks for 64×64 experiments on one CPU core.
    pub fn toy(codec_mode: CodecMode) -> Self {
        let block = |f, n, hyper| BlockConfig {
            f,
            n,
            hyper,
            kernel: 3,
            hyper_kernel: 3,
            strides: vec![2, 2, 2],
            hyper_strides: vec![2, 2],
            context: false,
            context_kernel: 5,
        };
        ArchConfig {
            modenet: true,
            mode: block(12, 8, 8),
            codec: block(24, 24, 12),
            codec_mode,
            pred_width: 12,
            pred_strides: vec![2, 4],
            leaky_slope: 0.01,
        }
    }

    /// Frame sides must be multiples of this.
    pub fn pad_multiple(&self) -> usize {
        self.mode.total_stride().max(self.codec.total_stride())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.mode.validate("mode")?;
        self.codec.validate("codec")?;
        if self.codec_mode == CodecMode::Conditional {
            if self.pred_width == 0 || self.pred_strides.is_empty() || self.pred_strides.contains(&0) {
                return Err(ModelError::Config("prediction branch needs a width and positive strides".into()));
            }
            let p: usize = self.pred_strides.iter().product();
            if p != self.codec.stride_product() {
                return Err(ModelError::Config(format!(
                    "prediction branch stride product {p} differs from codec stride product {}",
                    self.codec.stride_product()
                )));
            }
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(ModelError::Config(format!("leaky_slope {} outside (0, 1)", self.leaky_slope)));
        }
        Ok(())
    }

    /// Every key with its current value, in a stable order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![("mode.enabled".to_string(), self.modenet.to_string())];
        for (prefix, b) in [("mode", &self.mode), ("codec", &self.codec)] {
            out.push((format!("{prefix}.f"), b.f.to_string()));
            out.push((format!("{prefix}.n"), b.n.to_string()));
            out.push((format!("{prefix}.hyper"), b.hyper.to_string()));
            out.push((format!("{prefix}.kernel"), b.kernel.to_string()));
            out.push((format!("{prefix}.hyper_kernel"), b.hyper_kernel.to_string()));
            out.push((format!("{prefix}.strides"), join(&b.strides)));
            out.push((format!("{prefix}.hyper_strides"), join(&b.hyper_strides)));
            out.push((format!("{prefix}.context"), b.context.to_string()));
            out.push((format!("{prefix}.context_kernel"), b.context_kernel.to_string()));
        }
        out.push(("codec.mode".into(), self.codec_mode.to_string()));
        out.push(("codec.pred_width".into(), self.pred_width.to_string()));
        out.push(("codec.pred_strides".into(), join(&self.pred_strides)));
        out.push(("leaky_slope".into(), self.leaky_slope.to_string()));
        out
    }

    pub fn keys() -> Vec<String> {
        ArchConfig::default().to_pairs().into_iter().map(|(k, _)| k).collect()
    }

    /// Apply one `key = value` setting. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        let v = value.trim();
        let int = |v: &str| v.parse::<usize>().map_err(|_| ModelError::Config(format!("{key}: bad integer {v:?}")));
        let boolean = |v: &str| v.parse::<bool>().map_err(|_| ModelError::Config(format!("{key}: bad boolean {v:?}")));
        match key {
            "mode.enabled" => self.modenet = boolean(v)?,
            "codec.mode" => self.codec_mode = v.parse()?,
            "codec.pred_width" => self.pred_width = int(v)?,
            "codec.pred_strides" => self.pred_strides = parse_list(key, v)?,
            "leaky_slope" => {
                self.leaky_slope = v.parse().map_err(|_| ModelError::Config(format!("{key}: bad number {v:?}")))?
            }
            _ => {
                let (prefix, field) = key.split_once('.').ok_or_else(|| ModelError::Config(format!("unknown key {key:?}")))?;
                let b = match prefix {
                    "mode" => &mut self.mode,
                    "codec" => &mut self.codec,
                    _ => return Err(ModelError::Config(format!("unknown key {key:?}"))),
                };
                match field {
                    "f" => b.f = int(v)?,
                    "n" => b.n = int(v)?,
                    "hyper" => b.hyper = int(v)?,
                    "kernel" => b.kernel = int(v)?,
                    "hyper_kernel" => b.hyper_kernel = int(v)?,
                    "strides" => b.strides = parse_list(key, v)?,
                    "hyper_strides" => b.hyper_strides = parse_list(key, v)?,
                    "context" => b.context = boolean(v)?,
                    "context_kernel" => b.context_kernel = int(v)?,
                    _ => return Err(ModelError::Config(format!("unknown key {key:?}"))),
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parse text written by [`ArchConfig::to_text`]; unspecified keys keep defaults.
    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut cfg = ArchConfig::default();
        let mut seen = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Config(format!("line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if seen.insert(k.to_string(), ()).is_some() {
                return Err(ModelError::Config(format!("line {}: duplicate key {k:?}", i + 1)));
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for cfg in [ArchConfig::default(), ArchConfig::toy(CodecMode::Difference)] {
            let back = ArchConfig::from_text(&cfg.to_text()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn rejects_unknown_and_bad_values() {
        assert!(ArchConfig::from_text("mode.width = 3").is_err());
        assert!(ArchConfig::from_text("codec.mode = wavelet").is_err());
        assert!(ArchConfig::from_text("mode.kernel = 4").is_err());
        assert!(ArchConfig::from_text("codec.pred_strides = 2,2").is_err());
        assert!(ArchConfig::from_text("mode.f = 3\nmode.f = 4").is_err());
    }

    #[test]
    fn default_padding() {
        assert_eq!(ArchConfig::default().pad_multiple(), 64);
        assert_eq!(ArchConfig::toy(CodecMode::Image).pad_multiple(), 32);
    }
}
