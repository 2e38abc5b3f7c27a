//! Frame pairs: synthetic moving rectangles, PNG I/O and seeded crop datasets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PipelineError;
use crate::tensor::{Array, Shape};

/// Two consecutive frames, 1×3×H×W in [0, 1], unpadded.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub x_prev: Array<f32>,
    pub x_t: Array<f32>,
    /// Ground-truth motion (1×1×H×W, 1 where a moving object covers the
    /// pixel in either frame), known for synthetic pairs only.
    pub motion: Option<Array<f32>>,
}

impl FramePair {
    pub fn new(x_prev: Array<f32>, x_t: Array<f32>) -> Result<Self, PipelineError> {
        let (a, b) = (x_prev.shape(), x_t.shape());
        if a != b || a.n != 1 || a.c != 3 {
            return Err(PipelineError::Data(format!("frame pair shapes {a} and {b}; need equal 1×3×H×W")));
        }
        Ok(FramePair { x_prev, x_t, motion: None })
    }

    pub fn height(&self) -> usize {
        self.x_t.shape().h
    }

    pub fn width(&self) -> usize {
        self.x_t.shape().w
    }
}

/// Random access to training pairs.
pub trait PairSource {
    fn len(&self) -> usize;
    fn pair(&self, i: usize) -> Result<FramePair, PipelineError>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PairSource for [FramePair] {
    fn len(&self) -> usize {
        <[FramePair]>::len(self)
    }

    fn pair(&self, i: usize) -> Result<FramePair, PipelineError> {
        Ok(self[i].clone())
    }
}

impl PairSource for Vec<FramePair> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn pair(&self, i: usize) -> Result<FramePair, PipelineError> {
        Ok(self[i].clone())
    }
}

/// Parameters of the moving-rectangles generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub objects: usize,
    /// Object side range, inclusive.
    pub size: (usize, usize),
    /// Per-axis displacement magnitude range in pixels, inclusive.
    pub speed: (i32, i32),
    /// Std-dev of independent per-frame Gaussian-ish noise.
    pub noise: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { height: 64, width: 64, objects: 2, size: (12, 20), speed: (3, 6), noise: 0.0, count: 64, seed: 0 }
    }
}

struct Rect {
    y: i32,
    x: i32,
    h: i32,
    w: i32,
    color: [f32; 3],
    stripe: f32,
    period: i32,
    dy: i32,
    dx: i32,
}

impl Rect {
    fn covers(&self, y: i32, x: i32, oy: i32, ox: i32) -> bool {
        y >= self.y + oy && y < self.y + oy + self.h && x >= self.x + ox && x < self.x + ox + self.w
    }

    /// Texture value in object coordinates, so it moves with the object.
    fn texel(&self, c: usize, ly: i32, lx: i32) -> f32 {
        let band = if ((ly + lx).div_euclid(self.period)) % 2 == 0 { self.stripe } else { -self.stripe };
        (self.color[c] + band).clamp(0.0, 1.0)
    }
}

fn background(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array<f32> {
    let waves: Vec<[f64; 4]> = (0..4)
        .map(|_| [rng.gen_range(0.05..0.4), rng.gen_range(0.05..0.4), rng.gen_range(0.0..6.3), rng.gen_range(0.05..0.15)])
        .collect();
    let base: [f64; 3] = [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)];
    let grain: Vec<f32> = (0..h * w).map(|_| rng.gen_range(-0.04..0.04)).collect();
    Array::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        let mut v = base[c];
        for (k, wv) in waves.iter().enumerate() {
            let phase = wv[2] + c as f64 * 0.7 * (k as f64 + 1.0);
            v += wv[3] * (wv[0] * y as f64 + wv[1] * x as f64 + phase).sin();
        }
        (v as f32 + grain[y * w + x]).clamp(0.0, 1.0)
    })
}

fn render(bg: &Array<f32>, rects: &[Rect], moved: bool) -> Array<f32> {
    let s = bg.shape();
    let mut out = bg.clone();
    for r in rects {
        let (oy, ox) = if moved { (r.dy, r.dx) } else { (0, 0) };
        for y in 0..s.h as i32 {
            for x in 0..s.w as i32 {
                if r.covers(y, x, oy, ox) {
                    for c in 0..3 {
                        out.set(0, c, y as usize, x as usize, r.texel(c, y - r.y - oy, x - r.x - ox));
                    }
                }
            }
        }
    }
    out
}

fn add_noise(a: &mut Array<f32>, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma <= 0.0 {
        return;
    }
    for v in a.data_mut() {
        // Sum of three uniforms: cheap, bounded, roughly Gaussian.
        let u: f64 = (0..3).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>();
        *v = (*v as f64 + sigma * u).clamp(0.0, 1.0) as f32;
    }
}

fn signed_speed(rng: &mut ChaCha8Rng, (lo, hi): (i32, i32)) -> i32 {
    let m = rng.gen_range(lo..=hi);
    if rng.gen_bool(0.5) {
        m
    } else {
        -m
    }
}

/// Static textured background with rigidly translating textured rectangles.
pub fn synth_pair(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> FramePair {
    let (h, w) = (spec.height, spec.width);
    let bg = background(rng, h, w);
    let rects: Vec<Rect> = (0..spec.objects)
        .map(|_| {
            let rh = rng.gen_range(spec.size.0..=spec.size.1) as i32;
            let rw = rng.gen_range(spec.size.0..=spec.size.1) as i32;
            Rect {
                y: rng.gen_range(0..=(h as i32 - rh).max(0)),
                x: rng.gen_range(0..=(w as i32 - rw).max(0)),
                h: rh,
                w: rw,
                color: [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
                stripe: rng.gen_range(0.1..0.3),
                period: rng.gen_range(2..5),
                dy: signed_speed(rng, spec.speed),
                dx: signed_speed(rng, spec.speed),
            }
        })
        .collect();
    let mut x_prev = render(&bg, &rects, false);
    let mut x_t = render(&bg, &rects, true);
    let motion = Array::from_fn(Shape::new(1, 1, h, w), |_, _, y, x| {
        let (y, x) = (y as i32, x as i32);
        let hit = rects.iter().filter(|r| r.dy != 0 || r.dx != 0).any(|r| r.covers(y, x, 0, 0) || r.covers(y, x, r.dy, r.dx));
        if hit {
            1.0
        } else {
            0.0
        }
    });
    add_noise(&mut x_prev, spec.noise, rng);
    add_noise(&mut x_t, spec.noise, rng);
    FramePair { x_prev, x_t, motion: Some(motion) }
}

pub fn synth_dataset(spec: &SynthSpec) -> Vec<FramePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.count).map(|_| synth_pair(spec, &mut rng)).collect()
}

pub fn load_png(path: &Path) -> Result<Array<f32>, PipelineError> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Array::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write the first sample of a 3-channel array as 8-bit RGB.
pub fn save_png(path: &Path, a: &Array<f32>) -> Result<(), PipelineError> {
    let s = a.shape();
    if s.c != 3 {
        return Err(PipelineError::Data(format!("RGB output needs 3 channels, got {s}")));
    }
    let img = image::RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        image::Rgb([0, 1, 2].map(|c| to_u8(a.at(0, c, y as usize, x as usize))))
    });
    img.save(path)?;
    Ok(())
}

/// Write channel 0 of the first sample as 8-bit gray, mapping `v·scale`.
pub fn save_gray_png(path: &Path, a: &Array<f32>, scale: f32) -> Result<(), PipelineError> {
    let s = a.shape();
    let img = image::GrayImage::from_fn(s.w as u32, s.h as u32, |x, y| image::Luma([to_u8(a.at(0, 0, y as usize, x as usize) * scale)]));
    img.save(path)?;
    Ok(())
}

/// One manifest line: frames and crop origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CropEntry {
    pub prev: PathBuf,
    pub cur: PathBuf,
    pub y: usize,
    pub x: usize,
}

/// Crops drawn from consecutive PNG frames, with the frames held in memory.
#[derive(Debug, Clone)]
pub struct CropDataset {
    pub entries: Vec<CropEntry>,
    pub crop: usize,
    frames: BTreeMap<PathBuf, Array<f32>>,
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

impl CropDataset {
    /// `count` seeded crops from pairs of consecutive (sorted) PNG files in
    /// `dir`. Pairs smaller than the crop, or with mismatched sizes, are
    /// skipped with a warning.
    pub fn from_dir(dir: &Path, crop: usize, count: usize, seed: u64) -> Result<Self, PipelineError> {
        if crop == 0 {
            return Err(PipelineError::Data("crop size must be positive".into()));
        }
        let files = list_pngs(dir)?;
        let mut frames = BTreeMap::new();
        for f in &files {
            frames.insert(f.clone(), load_png(f)?);
        }
        let mut pairs = Vec::new();
        for w in files.windows(2) {
            let (a, b) = (frames[&w[0]].shape(), frames[&w[1]].shape());
            if a != b {
                log::warn!("skipping {} / {}: sizes differ", w[0].display(), w[1].display());
            } else if a.h < crop || a.w < crop {
                log::warn!("skipping {} / {}: {}×{} is smaller than the {crop} crop", w[0].display(), w[1].display(), a.h, a.w);
            } else {
                pairs.push((w[0].clone(), w[1].clone(), a.h, a.w));
            }
        }
        if pairs.is_empty() {
            return Err(PipelineError::Data(format!("no usable frame pairs in {}", dir.display())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..count)
            .map(|_| {
                let (p, c, h, w) = &pairs[rng.gen_range(0..pairs.len())];
                let (y, x) = crop_origin(&mut rng, *h, *w, crop);
                CropEntry { prev: p.clone(), cur: c.clone(), y, x }
            })
            .collect();
        frames.retain(|k, _| pairs.iter().any(|(p, c, _, _)| p == k || c == k));
        Ok(CropDataset { entries, crop, frames })
    }

    pub fn manifest(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{} {} {} {}", e.prev.display(), e.cur.display(), e.y, e.x);
        }
        s
    }

    /// Rebuild from a manifest written by [`CropDataset::manifest`].
    pub fn from_manifest(text: &str, crop: usize) -> Result<Self, PipelineError> {
        let mut entries = Vec::new();
        let mut frames = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || PipelineError::Data(format!("manifest line {}: expected `prev cur y x`", i + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            let e = CropEntry {
                prev: f[0].into(),
                cur: f[1].into(),
                y: f[2].parse().map_err(|_| bad())?,
                x: f[3].parse().map_err(|_| bad())?,
            };
            for p in [&e.prev, &e.cur] {
                if !frames.contains_key(p) {
                    frames.insert(p.clone(), load_png(p)?);
                }
            }
            entries.push(e);
        }
        Ok(CropDataset { entries, crop, frames })
    }
}

/// Uniform crop origin in `[0, h − crop] × [0, w − crop]`.
pub fn crop_origin(rng: &mut impl Rng, h: usize, w: usize, crop: usize) -> (usize, usize) {
    (rng.gen_range(0..=h - crop), rng.gen_range(0..=w - crop))
}

impl PairSource for CropDataset {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn pair(&self, i: usize) -> Result<FramePair, PipelineError> {
        let e = &self.entries[i];
        let get = |p: &PathBuf| self.frames.get(p).ok_or_else(|| PipelineError::Data(format!("frame {} not loaded", p.display())));
        let a = get(&e.prev)?.crop(e.y, e.x, self.crop, self.crop)?;
        let b = get(&e.cur)?.crop(e.y, e.x, self.crop, self.crop)?;
        FramePair::new(a, b)
    }
}
