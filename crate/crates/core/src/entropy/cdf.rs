//! Integer CDF tables for the range coder.
//!
//! A latent with parameters (μ, b) is coded with the table for its quantized
//! parameters: b falls into one of 64 log-spaced bins over `[B_MIN, B_MAX]`
//! and μ is rounded to a multiple of 1/64. Writing `μ_q = c + f/64` with
//! integer `c` and `f ∈ 0..64`, the table covers offsets `d = s − c` in
//! `[-T, T]` plus one escape symbol. An escaped value follows as a sign bit
//! and the overshoot `|d| − T − 1` in an order-k Exp-Golomb code, with `k`
//! near `log2 b` so the payload tracks the Laplace tail.
//!
//! Table construction uses only IEEE-754 `+ − × ÷`, rounding and comparisons,
//! all exactly specified, so every platform derives the same integers.

use std::sync::OnceLock;

use super::EntropyError;

pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;
pub const B_MIN: f64 = 0.011;
pub const B_MAX: f64 = 16.0;
pub const SCALE_BINS: usize = 64;
pub const MU_STEPS: i64 = 64;
/// Largest magnitude of a quantized latent.
pub const SYMBOL_BOUND: i32 = 255;
/// Longest Exp-Golomb prefix a valid escape can have.
pub const MAX_ESCAPE_PREFIX: u32 = 12;

const LN_B_MIN: f64 = -4.509860006183766;
const LN_BIN_STEP: f64 = 0.11378826138161793;
use std::f64::consts::LN_2;

/// `e^x` from basic arithmetic only: `x = n·ln2 + r`, a Taylor series for
/// `e^r` and an exact power of two.
pub fn det_exp(x: f64) -> f64 {
    if x < -745.0 {
        return 0.0;
    }
    let n = (x / LN_2).round();
    let r = x - n * LN_2;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=22 {
        term = term * r / k as f64;
        sum += term;
    }
    let n = n as i32;
    if n < -1022 {
        // Subnormal territory; two steps keep the intermediate representable.
        sum * f64::from_bits(((1023 - 1000) as u64) << 52) * pow2(n + 1000)
    } else {
        sum * pow2(n)
    }
}

fn pow2(n: i32) -> f64 {
    f64::from_bits(((1023 + n.clamp(-1022, 1023)) as u64) << 52)
}

/// Mass of `[d − ½, d + ½)` under a zero-mean Laplace with scale `b`,
/// evaluated with [`det_exp`].
pub fn det_laplace_mass(d: f64, b: f64) -> f64 {
    let a = d.abs();
    if a >= 0.5 {
        0.5 * det_exp(-(a - 0.5) / b) * (1.0 - det_exp(-1.0 / b))
    } else {
        1.0 - 0.5 * (det_exp(-(0.5 - a) / b) + det_exp(-(0.5 + a) / b))
    }
}

/// A cumulative frequency table at [`PRECISION`] bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    cdf: Vec<u32>,
}

impl CdfTable {
    /// Build from per-symbol frequencies summing to exactly 2^16, each ≥ 1.
    pub fn from_freqs(freqs: &[u32]) -> Result<Self, EntropyError> {
        if freqs.is_empty() {
            return Err(EntropyError::InvalidTable("no symbols".into()));
        }
        if let Some(i) = freqs.iter().position(|&f| f == 0) {
            return Err(EntropyError::InvalidTable(format!("symbol {i} has zero frequency")));
        }
        let mut cdf = Vec::with_capacity(freqs.len() + 1);
        let mut acc: u64 = 0;
        cdf.push(0);
        for &f in freqs {
            acc += f as u64;
            if acc > TOTAL as u64 {
                return Err(EntropyError::InvalidTable("frequencies exceed 2^16".into()));
            }
            cdf.push(acc as u32);
        }
        if acc != TOTAL as u64 {
            return Err(EntropyError::InvalidTable(format!("frequencies sum to {acc}, not 2^16")));
        }
        Ok(CdfTable { cdf })
    }

    pub fn symbols(&self) -> usize {
        self.cdf.len() - 1
    }

    pub fn cdf(&self) -> &[u32] {
        &self.cdf
    }

    #[inline]
    pub fn range_of(&self, sym: usize) -> (u32, u32) {
        (self.cdf[sym], self.cdf[sym + 1] - self.cdf[sym])
    }

    /// Symbol whose interval contains `target` (< 2^16).
    #[inline]
    pub fn lookup(&self, target: u32) -> usize {
        self.cdf.partition_point(|&c| c <= target) - 1
    }

    pub fn prob(&self, sym: usize) -> f64 {
        let (_, f) = self.range_of(sym);
        f as f64 / TOTAL as f64
    }
}

/// Table for one (scale bin, μ fraction) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaplaceTable {
    pub half_width: i32,
    /// Exp-Golomb order of the escape payload.
    pub escape_order: u32,
    /// Symbols `0..=2T` are offsets `−T..=T`; symbol `2T + 1` is the escape.
    pub table: CdfTable,
}

impl LaplaceTable {
    pub fn escape(&self) -> usize {
        2 * self.half_width as usize + 1
    }
}

/// Where a latent's (μ, b) lands in the table bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableIndex {
    pub scale_bin: usize,
    pub center: i32,
    pub frac: usize,
}

impl TableIndex {
    pub fn of(mu: f64, b: f64) -> Self {
        let bound = SYMBOL_BOUND as f64;
        let mu = if mu.is_nan() { 0.0 } else { mu.clamp(-bound, bound) };
        let mq = (mu * MU_STEPS as f64).round() as i64;
        TableIndex {
            scale_bin: scale_bin(b),
            center: mq.div_euclid(MU_STEPS) as i32,
            frac: mq.rem_euclid(MU_STEPS) as usize,
        }
    }

    /// The quantized parameters this index stands for.
    pub fn params(&self) -> (f64, f64) {
        (self.center as f64 + self.frac as f64 / MU_STEPS as f64, bin_scale(self.scale_bin))
    }
}

struct Bank {
    thresholds: Vec<f64>,
    tables: Vec<LaplaceTable>,
}

fn bank() -> &'static Bank {
    static BANK: OnceLock<Bank> = OnceLock::new();
    BANK.get_or_init(|| {
        let thresholds = (1..SCALE_BINS).map(|j| det_exp(LN_B_MIN + j as f64 * LN_BIN_STEP)).collect();
        let mut tables = Vec::with_capacity(SCALE_BINS * MU_STEPS as usize);
        for j in 0..SCALE_BINS {
            for f in 0..MU_STEPS as usize {
                tables.push(build(j, f));
            }
        }
        Bank { thresholds, tables }
    })
}

/// Representative scale of bin `j`: the geometric centre of its range.
pub fn bin_scale(j: usize) -> f64 {
    det_exp(LN_B_MIN + (j as f64 + 0.5) * LN_BIN_STEP)
}

pub fn scale_bin(b: f64) -> usize {
    if b.is_nan() {
        return 0;
    }
    bank().thresholds.partition_point(|&t| t <= b)
}

const LN_TOTAL: f64 = 11.090354888959125;

/// Window half-width of bin `j`: roughly where the per-symbol mass
/// `e^(−d/b) / 2b` drops to one quantum. Further out every symbol would be
/// floored to a whole quantum and the table would overspend on the tails.
pub fn half_width(j: usize) -> i32 {
    let ln_b = LN_B_MIN + (j as f64 + 0.5) * LN_BIN_STEP;
    let ln_2b = (LN_2 + ln_b).max(0.0);
    let t = (bin_scale(j) * (LN_TOTAL - ln_2b)).ceil() as i32 + 1;
    t.clamp(1, SYMBOL_BOUND)
}

fn build(j: usize, f: usize) -> LaplaceTable {
    let b = bin_scale(j);
    let shift = f as f64 / MU_STEPS as f64;
    let t = half_width(j);
    let n = 2 * t as usize + 2;
    let mut probs = Vec::with_capacity(n);
    let mut inside = 0.0;
    for d in -t..=t {
        let p = det_laplace_mass(d as f64 - shift, b);
        inside += p;
        probs.push(p);
    }
    probs.push((1.0 - inside).max(0.0));
    let mut freqs: Vec<u32> = probs.iter().map(|&p| ((p * TOTAL as f64).round() as u32).max(1)).collect();
    let sum: i64 = freqs.iter().map(|&v| v as i64).sum();
    let mut largest = 0;
    for (i, &v) in freqs.iter().enumerate() {
        if v > freqs[largest] {
            largest = i;
        }
    }
    let adjusted = freqs[largest] as i64 + (TOTAL as i64 - sum);
    assert!(adjusted >= 1, "table ({j}, {f}) cannot be normalized");
    freqs[largest] = adjusted as u32;
    let table = CdfTable::from_freqs(&freqs).expect("bank tables are valid by construction");
    let ln_b = LN_B_MIN + (j as f64 + 0.5) * LN_BIN_STEP;
    let escape_order = (ln_b / LN_2).floor().max(0.0) as u32;
    LaplaceTable { half_width: t, escape_order, table }
}

pub fn table(idx: TableIndex) -> &'static LaplaceTable {
    &bank().tables[idx.scale_bin * MU_STEPS as usize + idx.frac]
}

/// Every table of the bank, in (scale bin, fraction) order.
pub fn all_tables() -> &'static [LaplaceTable] {
    &bank().tables
}

/// Length in bits of `x` in an order-`k` Exp-Golomb code.
pub fn exp_golomb_len(x: u32, k: u32) -> u32 {
    let y = x as u64 + (1u64 << k);
    let nbits = 64 - y.leading_zeros();
    2 * nbits - k - 1
}

/// Bits the coder spends on `s` under (μ, b), escape payload included.
pub fn table_bits(s: i32, mu: f64, b: f64) -> f64 {
    let idx = TableIndex::of(mu, b);
    let lt = table(idx);
    let d = s as i64 - idx.center as i64;
    let t = lt.half_width as i64;
    if d.abs() <= t {
        -lt.table.prob((d + t) as usize).log2()
    } else {
        let over = (d.abs() - t - 1) as u32;
        -lt.table.prob(lt.escape()).log2() + 1.0 + exp_golomb_len(over, lt.escape_order) as f64
    }
}
