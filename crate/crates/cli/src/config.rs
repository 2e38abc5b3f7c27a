//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use modenet::model::ArchConfig;
use modenet::pipeline::data::{synth_dataset, CropDataset, PairSource};
use modenet::pipeline::{SynthSpec, TrainSchedule};

use crate::CliError;

/// A run-level key with its default and a one-line description.
pub struct KeyDoc {
    pub key: &'static str,
    pub default: &'static str,
    pub doc: &'static str,
}

pub const RUN_KEYS: &[KeyDoc] = &[
    KeyDoc { key: "arch.preset", default: "full", doc: "network sizes before arch.* overrides: full | toy" },
    KeyDoc { key: "model.seed", default: "0", doc: "weight initialization seed" },
    KeyDoc { key: "train.warmup_epochs", default: "2", doc: "CodecNet-only epochs (at least 1)" },
    KeyDoc { key: "train.alternate_epochs", default: "18", doc: "alternating epochs; 0 trains CodecNet alone" },
    KeyDoc { key: "train.batch_size", default: "8", doc: "pairs per optimizer step" },
    KeyDoc { key: "train.lambda", default: "0.01", doc: "rate weight in D + lambda*R" },
    KeyDoc { key: "train.lr", default: "0.0001", doc: "initial Adam learning rate, /5 at 50% and 75%" },
    KeyDoc { key: "train.seed", default: "0", doc: "shuffling and quantization-noise seed" },
    KeyDoc { key: "data.source", default: "synth", doc: "synth | dir | manifest" },
    KeyDoc { key: "data.dir", default: "", doc: "directory of consecutive PNG frames (data.source = dir)" },
    KeyDoc { key: "data.manifest", default: "", doc: "crop manifest file (data.source = manifest)" },
    KeyDoc { key: "data.crop", default: "256", doc: "crop side for dir / manifest datasets" },
    KeyDoc { key: "data.count", default: "10000", doc: "number of crops drawn from data.dir" },
    KeyDoc { key: "data.seed", default: "0", doc: "crop position seed" },
    KeyDoc { key: "synth.height", default: "64", doc: "synthetic frame height" },
    KeyDoc { key: "synth.width", default: "64", doc: "synthetic frame width" },
    KeyDoc { key: "synth.objects", default: "2", doc: "moving rectangles per frame" },
    KeyDoc { key: "synth.size_min", default: "12", doc: "smallest rectangle side" },
    KeyDoc { key: "synth.size_max", default: "20", doc: "largest rectangle side" },
    KeyDoc { key: "synth.speed_min", default: "3", doc: "smallest per-axis displacement (px)" },
    KeyDoc { key: "synth.speed_max", default: "6", doc: "largest per-axis displacement (px)" },
    KeyDoc { key: "synth.noise", default: "0", doc: "per-frame noise amplitude" },
    KeyDoc { key: "synth.count", default: "256", doc: "synthetic pairs" },
    KeyDoc { key: "synth.seed", default: "0", doc: "synthetic content seed" },
    KeyDoc { key: "out.dir", default: "runs/default", doc: "where outputs are written" },
    KeyDoc { key: "eval.lambdas", default: "0.001,0.003,0.01,0.03", doc: "lambda grid for eval" },
    KeyDoc {
        key: "eval.checkpoint",
        default: "runs/lambda_{lambda}/model.mdnw",
        doc: "checkpoint path per lambda; {lambda} is substituted",
    },
    KeyDoc { key: "eval.workers", default: "1", doc: "threads for evaluation" },
];

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    fn known(key: &str) -> bool {
        if RUN_KEYS.iter().any(|k| k.key == key) {
            return true;
        }
        key.strip_prefix("arch.").is_some_and(|k| ArchConfig::keys().iter().any(|a| a == k))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim();
        if !Self::known(key) {
            return Err(bad(format!("unknown key {key:?} (see `modenet keys`)")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Apply `KEY=VALUE`.
    pub fn set_pair(&mut self, kv: &str) -> Result<(), CliError> {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("expected KEY=VALUE, got {kv:?}")))?;
        self.set(k, v)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("line {}: expected key = value", i + 1)))?;
            if seen.insert(k.trim().to_string(), ()).is_some() {
                return Err(bad(format!("line {}: duplicate key {:?}", i + 1, k.trim())));
            }
            cfg.set(k, v).map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> &str {
        if let Some(v) = self.values.get(key) {
            return v;
        }
        RUN_KEYS.iter().find(|k| k.key == key).map(|k| k.default).unwrap_or_else(|| panic!("no default for {key}"))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.get(key);
        v.parse().map_err(|_| bad(format!("{key}: cannot parse {v:?}")))
    }

    pub fn arch(&self) -> Result<ArchConfig, CliError> {
        let mut arch = match self.get("arch.preset") {
            "full" => ArchConfig::default(),
            "toy" => ArchConfig::toy(ArchConfig::default().codec_mode),
            other => return Err(bad(format!("arch.preset: unknown preset {other:?}"))),
        };
        for (k, v) in &self.values {
            if let Some(ak) = k.strip_prefix("arch.") {
                if ak != "preset" {
                    arch.set(ak, v)?;
                }
            }
        }
        arch.validate()?;
        Ok(arch)
    }

    pub fn schedule(&self) -> Result<TrainSchedule, CliError> {
        let s = TrainSchedule {
            warmup_epochs: self.parsed("train.warmup_epochs")?,
            alternate_epochs: self.parsed("train.alternate_epochs")?,
            batch_size: self.parsed("train.batch_size")?,
            lambda: self.parsed("train.lambda")?,
            lr: self.parsed("train.lr")?,
            seed: self.parsed("train.seed")?,
            ms_ssim: None,
            checkpoint_dir: Some(self.out_dir().join("checkpoints")),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn synth_spec(&self) -> Result<SynthSpec, CliError> {
        let spec = SynthSpec {
            height: self.parsed("synth.height")?,
            width: self.parsed("synth.width")?,
            objects: self.parsed("synth.objects")?,
            size: (self.parsed("synth.size_min")?, self.parsed("synth.size_max")?),
            speed: (self.parsed("synth.speed_min")?, self.parsed("synth.speed_max")?),
            noise: self.parsed("synth.noise")?,
            count: self.parsed("synth.count")?,
            seed: self.parsed("synth.seed")?,
        };
        if spec.size.0 == 0 || spec.size.0 > spec.size.1 || spec.size.1 > spec.height.min(spec.width) {
            return Err(bad("synth sizes must satisfy 1 ≤ size_min ≤ size_max ≤ frame side"));
        }
        if spec.speed.0 < 0 || spec.speed.0 > spec.speed.1 {
            return Err(bad("synth speeds must satisfy 0 ≤ speed_min ≤ speed_max"));
        }
        Ok(spec)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out.dir"))
    }

    pub fn lambdas(&self) -> Result<Vec<f64>, CliError> {
        self.get("eval.lambdas")
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad(format!("eval.lambdas: bad number {s:?}"))))
            .collect()
    }

    pub fn checkpoint_for(&self, lambda: f64) -> PathBuf {
        PathBuf::from(self.get("eval.checkpoint").replace("{lambda}", &lambda.to_string()))
    }

    pub fn workers(&self) -> Result<usize, CliError> {
        let w: usize = self.parsed("eval.workers")?;
        Ok(w.max(1))
    }

    /// The configured dataset, plus a crop manifest when it is file-backed.
    pub fn dataset(&self) -> Result<(Box<dyn PairSource + Sync>, Option<String>), CliError> {
        match self.get("data.source") {
            "synth" => Ok((Box::new(synth_dataset(&self.synth_spec()?)), None)),
            "dir" => {
                let dir = self.get("data.dir");
                if dir.is_empty() {
                    return Err(bad("data.source = dir needs data.dir"));
                }
                let ds = CropDataset::from_dir(dir.as_ref(), self.parsed("data.crop")?, self.parsed("data.count")?, self.parsed("data.seed")?)?;
                let m = ds.manifest();
                Ok((Box::new(ds), Some(m)))
            }
            "manifest" => {
                let path = self.get("data.manifest");
                if path.is_empty() {
                    return Err(bad("data.source = manifest needs data.manifest"));
                }
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.into(), e))?;
                let ds = CropDataset::from_manifest(&text, self.parsed("data.crop")?)?;
                Ok((Box::new(ds), Some(text)))
            }
            other => Err(bad(format!("data.source: unknown source {other:?}"))),
        }
    }

    /// Every key with its effective value; architecture keys come from the
    /// resolved architecture.
    pub fn resolved_text(&self) -> Result<String, CliError> {
        let mut out = format!("# modenet {}\n", env!("CARGO_PKG_VERSION"));
        for k in RUN_KEYS {
            out.push_str(&format!("{} = {}\n", k.key, self.get(k.key)));
        }
        for (k, v) in self.arch()?.to_pairs() {
            out.push_str(&format!("arch.{k} = {v}\n"));
        }
        Ok(out)
    }
}
