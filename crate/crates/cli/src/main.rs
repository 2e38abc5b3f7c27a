//! `modenet`: train, encode, decode, evaluate and inspect the P-frame codec.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use modenet::metrics::{write_rd_csv, RdPoint};
use modenet::model::{ModelError, System};
use modenet::pipeline::data::{load_png, save_gray_png, save_png};
use modenet::pipeline::{decode, diagnose, encode, evaluate_pair, infer, train, ForcedAlpha, FramePair, PipelineError};
use modenet::tensor::{Array, Shape};

use config::{RunConfig, RUN_KEYS};

const EXIT_CODES: &str = "\
Exit codes:
  0   success
  2   bad command line
  3   bad configuration (unknown key, unparsable value, invalid architecture)
  4   file I/O failure
  5   image decode / encode failure
  6   checkpoint or model failure
  7   corrupt or truncated bitstream
  8   bitstream made by a different model
  9   training hit a non-finite loss or gradient
  10  bad input data (sizes, empty dataset)

Errors are printed as one line on stderr: `error[<kind>]: <message>`.";

#[derive(Parser)]
#[command(name = "modenet", version, about = "Learned P-frame codec with a transmitted per-pixel copy/code mode map", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lambda=0.003`
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Force {
    None,
    Zeros,
    Ones,
}

impl From<Force> for ForcedAlpha {
    fn from(f: Force) -> Self {
        match f {
            Force::None => ForcedAlpha::None,
            Force::Zeros => ForcedAlpha::Zeros,
            Force::Ones => ForcedAlpha::Ones,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train ModeNet + CodecNet; writes checkpoints, loss.csv and model.mdnw to out.dir
    Train(ConfigArgs),
    /// RD evaluation over eval.lambdas with real coded bits; writes rd.csv to out.dir
    Eval(ConfigArgs),
    /// Compress CUR given PREV into an .mdn file
    Encode {
        prev: PathBuf,
        cur: PathBuf,
        #[arg(short, long)]
        model: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Override the mode map
        #[arg(long, value_enum, default_value = "none")]
        force_alpha: Force,
        /// Also write the encoder-side reconstruction
        #[arg(long)]
        recon: Option<PathBuf>,
    },
    /// Reconstruct a frame from an .mdn file and the previous frame
    Decode {
        input: PathBuf,
        prev: PathBuf,
        #[arg(short, long)]
        model: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write the mode map, copy / transmit regions and the rate map of one pair
    Visualize {
        prev: PathBuf,
        cur: PathBuf,
        #[arg(short, long)]
        model: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// λ for the partition diagnostic
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
    },
    /// Write synthetic moving-rectangle pairs (synth.* keys) as PNGs
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// List every configuration key with its default
    Keys,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}", path = .0.display(), source = .1)]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Config(m),
            e => CliError::Pipeline(e.into()),
        }
    }
}

impl CliError {
    fn kind(&self) -> (&'static str, u8) {
        match self {
            CliError::Config(_) => ("config", 3),
            CliError::Io(..) => ("io", 4),
            CliError::Pipeline(p) => match p {
                PipelineError::Io(_) => ("io", 4),
                PipelineError::Image(_) => ("image", 5),
                PipelineError::Model(ModelError::Config(_)) => ("config", 3),
                PipelineError::Model(ModelError::Entropy(_)) | PipelineError::Entropy(_) => ("bitstream", 7),
                PipelineError::Model(_) | PipelineError::Tensor(_) => ("model", 6),
                PipelineError::HashMismatch { .. } | PipelineError::ConfigMismatch(_) => ("model-mismatch", 8),
                PipelineError::NonFinite { .. } => ("diverged", 9),
                PipelineError::Data(_) | PipelineError::Metrics(_) => ("data", 10),
            },
        }
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.into(), e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Io(path.into(), e))
}

fn mkdir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.into(), e))
}

fn load_config(a: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::parse(&fs::read_to_string(p).map_err(|e| CliError::Io(p.clone(), e))?)?,
        None => RunConfig::default(),
    };
    for kv in &a.set {
        cfg.set_pair(kv)?;
    }
    Ok(cfg)
}

fn load_model(path: &Path) -> Result<System, CliError> {
    if !path.exists() {
        return Err(CliError::Io(path.into(), std::io::Error::new(std::io::ErrorKind::NotFound, "no such checkpoint")));
    }
    Ok(System::load(path)?)
}

fn load_pair(prev: &Path, cur: &Path) -> Result<FramePair, CliError> {
    Ok(FramePair::new(load_png(prev)?, load_png(cur)?)?)
}

fn cmd_train(a: &ConfigArgs) -> Result<(), CliError> {
    let cfg = load_config(a)?;
    let out = cfg.out_dir();
    mkdir(&out)?;
    let resolved = cfg.resolved_text()?;
    write(&out.join("resolved.cfg"), &resolved)?;
    log::debug!("resolved configuration:\n{resolved}");
    let arch = cfg.arch()?;
    let sched = cfg.schedule()?;
    let (data, manifest) = cfg.dataset()?;
    if let Some(m) = manifest {
        write(&out.join("manifest.txt"), m)?;
    }
    let mut sys = System::new(&arch, cfg.get("model.seed").parse().map_err(|_| CliError::Config("model.seed: bad integer".into()))?)?;
    log::info!("ModeNet {} parameters, CodecNet {}", sys.mode_parameter_count(), sys.codec_parameter_count());
    let report = train(&mut sys, data.as_ref(), &sched)?;
    write(&out.join("loss.csv"), report.csv())?;
    sys.save(&out.join("model.mdnw"))?;
    println!("trained {} steps; model written to {}", report.steps, out.join("model.mdnw").display());
    Ok(())
}

fn cmd_eval(a: &ConfigArgs) -> Result<(), CliError> {
    let cfg = load_config(a)?;
    let out = cfg.out_dir();
    mkdir(&out)?;
    write(&out.join("resolved.cfg"), cfg.resolved_text()?)?;
    let (data, _) = cfg.dataset()?;
    let pairs: Vec<FramePair> = (0..data.len()).map(|i| data.pair(i)).collect::<Result<_, _>>()?;
    if pairs.is_empty() {
        return Err(PipelineError::Data("evaluation set is empty".into()).into());
    }
    let workers = cfg.workers()?;
    let mut points = Vec::new();
    for lambda in cfg.lambdas()? {
        let path = cfg.checkpoint_for(lambda);
        if !path.exists() {
            log::warn!("no checkpoint for lambda {lambda} at {}; skipped", path.display());
            continue;
        }
        let sys = System::load(&path)?;
        let chunk = pairs.len().div_ceil(workers);
        let results: Vec<Result<Vec<_>, PipelineError>> = std::thread::scope(|s| {
            let handles: Vec<_> = pairs
                .chunks(chunk)
                .map(|part| {
                    let sys = &sys;
                    s.spawn(move || part.iter().map(|p| evaluate_pair(sys, p)).collect::<Result<Vec<_>, _>>())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("eval worker panicked")).collect()
        });
        let mut evals = Vec::with_capacity(pairs.len());
        for r in results {
            evals.extend(r?);
        }
        let k = evals.len() as f64;
        let p = RdPoint::new(lambda, evals.iter().map(|e| e.bpp).sum::<f64>() / k, evals.iter().map(|e| e.msssim).sum::<f64>() / k);
        println!("lambda {lambda}: {:.4} bpp, MS-SSIM {:.5} ({:.2} dB)", p.bpp, p.msssim, p.msssim_db);
        points.push(p);
    }
    let mut csv = Vec::new();
    write_rd_csv(&mut csv, &points).map_err(PipelineError::from)?;
    write(&out.join("rd.csv"), csv)?;
    Ok(())
}

fn cmd_encode(prev: &Path, cur: &Path, model: &Path, out: &Path, force: Force, recon: Option<&Path>) -> Result<(), CliError> {
    let sys = load_model(model)?;
    let pair = load_pair(prev, cur)?;
    let rep = encode(&sys, &pair, force.into())?;
    write(out, &rep.bytes)?;
    if let Some(r) = recon {
        save_png(r, &rep.x_hat)?;
    }
    println!(
        "{} bytes, {:.6} bpp (mode {} B, codec {} B), padded to {}x{}",
        rep.bytes.len(),
        rep.bpp,
        rep.mode_bytes,
        rep.codec_bytes,
        rep.padded.0,
        rep.padded.1
    );
    Ok(())
}

fn cmd_decode(input: &Path, prev: &Path, model: &Path, out: &Path) -> Result<(), CliError> {
    let sys = load_model(model)?;
    let bytes = fs::read(input).map_err(|e| CliError::Io(input.into(), e))?;
    let x_prev = load_png(prev)?;
    let x = decode(&sys, &bytes, &x_prev)?;
    save_png(out, &x)?;
    Ok(())
}

/// Black → red → yellow → white.
fn heat(v: f32) -> [u8; 3] {
    let t = v.clamp(0.0, 1.0) * 3.0;
    let c = |x: f32| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [c(t), c(t - 1.0), c(t - 2.0)]
}

fn cmd_visualize(prev: &Path, cur: &Path, model: &Path, out: &Path, lambda: f64) -> Result<(), CliError> {
    let sys = load_model(model)?;
    let pair = load_pair(prev, cur)?;
    let (h, w) = (pair.height(), pair.width());
    let m = sys.arch.pad_multiple();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let xp = pair.x_prev.pad_reflect(ph, pw).map_err(PipelineError::from)?;
    let xt = pair.x_t.pad_reflect(ph, pw).map_err(PipelineError::from)?;
    let o = infer(&sys, &xp, &xt, lambda, ForcedAlpha::None)?;
    let crop = |a: &Array<f32>| a.crop(0, 0, h, w).map_err(PipelineError::from);
    let alpha = crop(&o.alpha)?;
    let rate = crop(&o.rate_map)?;
    mkdir(out)?;
    save_gray_png(&out.join("alpha.png"), &alpha, 1.0)?;
    let s3 = Shape::new(1, 3, h, w);
    let copy = Array::from_fn(s3, |_, c, y, x| (1.0 - alpha.at(0, 0, y, x)) * pair.x_prev.at(0, c, y, x));
    let transmit = Array::from_fn(s3, |_, c, y, x| alpha.at(0, 0, y, x) * pair.x_t.at(0, c, y, x));
    save_png(&out.join("copy.png"), &copy)?;
    save_png(&out.join("transmit.png"), &transmit)?;
    let peak = rate.data().iter().copied().fold(0.0f32, f32::max).max(1e-12);
    let heat_map = Array::from_fn(s3, |_, c, y, x| heat(rate.at(0, 0, y, x) / peak)[c] as f32 / 255.0);
    save_png(&out.join("rate.png"), &heat_map)?;
    let mut csv = String::new();
    for y in 0..h {
        let row: Vec<String> = (0..w).map(|x| format!("{:.6}", rate.at(0, 0, y, x))).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write(&out.join("rate.csv"), csv)?;
    let diag = diagnose(&sys, &xp, &xt, lambda)?;
    let s_mask = Array::from_fn(Shape::new(1, 1, ph, pw), |_, _, y, x| if diag.in_s[y * pw + x] { 1.0 } else { 0.0 });
    save_gray_png(&out.join("diagnostic_copy.png"), &crop(&s_mask)?, 1.0)?;
    let px = (h * w) as f64;
    let alpha_mean = alpha.data().iter().map(|&v| v as f64).sum::<f64>() / px;
    let summary = format!(
        "alpha_mean = {alpha_mean:.6}\nrm_bpp = {:.6}\nrc_bpp = {:.6}\nmsssim = {:.6}\ndiagnostic_lambda = {lambda}\ndiagnostic_copy_fraction = {:.6}\ndiagnostic_zero_rate = {}\ndiagnostic_agreement = {:.6}\n",
        o.rm_bits / (ph * pw) as f64,
        o.rc_bits / (ph * pw) as f64,
        o.msssim,
        diag.copy_count() as f64 / diag.in_s.len() as f64,
        diag.zero_rate,
        diag.agreement.unwrap_or(f64::NAN),
    );
    write(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_synth(a: &ConfigArgs, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(a)?;
    let spec = cfg.synth_spec()?;
    mkdir(out)?;
    write(&out.join("resolved.cfg"), cfg.resolved_text()?)?;
    for (i, p) in modenet::pipeline::data::synth_dataset(&spec).iter().enumerate() {
        save_png(&out.join(format!("pair{i:05}_prev.png")), &p.x_prev)?;
        save_png(&out.join(format!("pair{i:05}_cur.png")), &p.x_t)?;
        if let Some(m) = &p.motion {
            save_gray_png(&out.join(format!("pair{i:05}_motion.png")), m, 1.0)?;
        }
    }
    println!("{} pairs written to {}", spec.count, out.display());
    Ok(())
}

fn cmd_keys() {
    for k in RUN_KEYS {
        println!("{:<24} = {:<32} # {}", k.key, k.default, k.doc);
    }
    for (k, v) in modenet::model::ArchConfig::default().to_pairs() {
        println!("{:<24} = {:<32} # architecture (full preset value shown)", format!("arch.{k}"), v);
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Train(a) => cmd_train(&a),
        Cmd::Eval(a) => cmd_eval(&a),
        Cmd::Encode { prev, cur, model, out, force_alpha, recon } => cmd_encode(&prev, &cur, &model, &out, force_alpha, recon.as_deref()),
        Cmd::Decode { input, prev, model, out } => cmd_decode(&input, &prev, &model, &out),
        Cmd::Visualize { prev, cur, model, out, lambda } => cmd_visualize(&prev, &cur, &model, &out, lambda),
        Cmd::Synth { cfg, out } => cmd_synth(&cfg, &out),
        Cmd::Keys => {
            cmd_keys();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = e.kind();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{kind}]: {msg}");
            ExitCode::from(code)
        }
    }
}
