//! Acceptance criteria 1-8, one PASS/FAIL line each.
//!
//! Run with `cargo test -p modenet-core --test acceptance -- --nocapture`.

use std::time::Instant;

use modenet::entropy::cdf::TOTAL;
use modenet::entropy::{empirical_entropies, rate_bits, CdfTable, RangeDecoder, RangeEncoder};
use modenet::metrics::{ms_ssim, msssim_db, MetricsError, MsSsimConfig};
use modenet::model::{count_parameters, ArchConfig, CodecMode, System};
use modenet::pipeline::data::synth_dataset;
use modenet::pipeline::{decode, encode, evaluate_pair, infer, train, ForcedAlpha, FramePair, SynthSpec, TrainSchedule};
use modenet::tensor::conv::causal_mask;
use modenet::tensor::gradcheck::{check_gradients, GradCheck};
use modenet::tensor::{Array, ConvGeom, Graph, Shape, TensorError, Var};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---- 1: entropy stack

fn random_table(rng: &mut ChaCha8Rng, n: usize) -> CdfTable {
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0f64..1.0).powi(3)).collect();
    let total: f64 = weights.iter().sum();
    let mut freqs: Vec<u32> = weights.iter().map(|w| ((w / total) * (TOTAL - n as u32) as f64) as u32 + 1).collect();
    let s: u32 = freqs.iter().sum();
    freqs[0] += TOTAL - s;
    CdfTable::from_freqs(&freqs).unwrap()
}

fn entropy_stack() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases = 10_000;
    let mut ok = 0;
    for _ in 0..cases {
        let n = rng.gen_range(1..200);
        let t = random_table(&mut rng, n);
        let syms: Vec<usize> = (0..rng.gen_range(0..64)).map(|_| rng.gen_range(0..n)).collect();
        let mut e = RangeEncoder::new();
        for &s in &syms {
            e.encode_symbol(&t, s);
        }
        let bytes = e.finish();
        let mut d = RangeDecoder::new(&bytes);
        let back: Result<Vec<usize>, _> = syms.iter().map(|_| d.decode_symbol(&t)).collect();
        ok += (back.ok().as_ref() == Some(&syms) && d.finish().is_ok()) as usize;
    }

    let t = random_table(&mut rng, 64);
    let freqs: Vec<u32> = (0..64).map(|i| t.range_of(i).1).collect();
    let dist = WeightedIndex::new(&freqs).unwrap();
    let n = 1_000_000;
    let mut e = RangeEncoder::new();
    let mut ideal_bits = 0.0;
    for _ in 0..n {
        let s = dist.sample(&mut rng);
        ideal_bits -= t.prob(s).log2();
        e.encode_symbol(&t, s);
    }
    let coded = e.finish().len() as f64;
    let ideal = ideal_bits / 8.0;

    // rate model on a 128×128 latent tensor vs bytes actually written
    let s = Shape::new(1, 1, 128, 128);
    let mu = Array::from_fn(s, |_, _, _, _| rng.gen_range(-3.0f64..3.0));
    let b = Array::from_fn(s, |_, _, _, _| rng.gen_range(0.1f64.ln()..6f64.ln()).exp());
    let y = Array::from_fn(s, |_, _, yy, xx| {
        let (m, bb) = (mu.at(0, 0, yy, xx), b.at(0, 0, yy, xx));
        let u: f64 = rng.gen_range(-0.5..0.5);
        (m - bb * u.signum() * (1.0 - 2.0 * u.abs()).ln()).round().clamp(-255.0, 255.0)
    });
    let mut g = Graph::<f64>::new();
    let (yv, mv, bv) = (g.constant(y.clone()).unwrap(), g.constant(mu.clone()).unwrap(), g.constant(b.clone()).unwrap());
    let r = rate_bits(&mut g, yv, mv, bv).unwrap();
    let estimate = g.item(r);
    let mut e = RangeEncoder::new();
    for i in 0..y.len() {
        e.encode_laplace(y.data()[i] as i32, mu.data()[i], b.data()[i]).unwrap();
    }
    let actual = e.finish().len() as f64 * 8.0;
    let rate_err = (estimate - actual).abs() / actual;

    check(
        ok == cases && coded <= ideal * 1.005 + 16.0 && rate_err < 0.01,
        format!(
            "roundtrips {ok}/{cases}; 10^6 symbols: {coded} B vs entropy {ideal:.0} B; rate model {estimate:.0} vs coded {actual:.0} bits ({:.3}%)",
            rate_err * 100.0
        ),
    )
}

// ---- 2: numerical core

fn rand_array(rng: &mut ChaCha8Rng, s: Shape, lo: f64, hi: f64) -> Array<f64> {
    Array::from_fn(s, |_, _, _, _| rng.gen_range(lo..hi))
}

fn grad_err<B>(inputs: &[Array<f64>], build: B) -> f64
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    grad_err_eps(inputs, build, GradCheck::default().eps)
}

fn grad_err_eps<B>(inputs: &[Array<f64>], build: B, eps: f64) -> f64
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    check_gradients(inputs, build, GradCheck { eps, samples_per_input: 48, ..GradCheck::default() }).unwrap().max_rel_err
}

fn masked_output(x: &Array<f64>, w: &Array<f64>) -> Array<f64> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), false).unwrap();
    let wv = g.leaf(w.clone(), false).unwrap();
    let y = g.conv2d(xv, wv, None, ConvGeom::new(5, 1, 2)).unwrap();
    g.value(y).clone()
}

fn causality_cases(cases: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = (3, 9, 11);
    let mut passed = 0;
    for _ in 0..cases {
        let x = rand_array(&mut rng, Shape::new(1, c, h, w), -1.0, 1.0);
        let wt = rand_array(&mut rng, Shape::new(4, c, 5, 5), -1.0, 1.0).zip_map(&causal_mask(4, c, 5, false), |a, m| a * m);
        let (py, px) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let mut xp = x.clone();
        for ch in 0..c {
            let v = xp.at(0, ch, py, px);
            xp.set(0, ch, py, px, v + rng.gen_range(0.5..2.0));
        }
        let (a, b) = (masked_output(&x, &wt), masked_output(&xp, &wt));
        let pos = py * w + px;
        let same = (0..4).all(|o| (0..pos).all(|i| a.at(0, o, i / w, i % w).to_bits() == b.at(0, o, i / w, i % w).to_bits()));
        passed += same as usize;
    }
    passed
}

fn numerical_core() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut errs: Vec<(&str, f64)> = Vec::new();

    let x = rand_array(&mut rng, Shape::new(2, 3, 9, 8), -1.0, 1.0);
    let w = rand_array(&mut rng, Shape::new(4, 3, 5, 5), -0.3, 0.3);
    let b = rand_array(&mut rng, Shape::new(4, 1, 1, 1), -0.3, 0.3);
    errs.push(("conv", grad_err(&[x, w, b], |g, v| g.conv2d(v[0], v[1], Some(v[2]), ConvGeom::new(5, 2, 2)))));

    let x = rand_array(&mut rng, Shape::new(2, 3, 5, 4), -1.0, 1.0);
    let w = rand_array(&mut rng, Shape::new(3, 2, 5, 5), -0.3, 0.3);
    let b = rand_array(&mut rng, Shape::new(2, 1, 1, 1), -0.3, 0.3);
    errs.push(("tconv", grad_err(&[x, w, b], |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), ConvGeom::same(5, 2)))));

    let x = rand_array(&mut rng, Shape::new(1, 2, 7, 7), -1.0, 1.0);
    let w = rand_array(&mut rng, Shape::new(3, 2, 5, 5), -0.3, 0.3);
    let mask: Array<f64> = causal_mask(3, 2, 5, false);
    errs.push((
        "masked conv",
        grad_err(&[x, w], move |g, v| {
            let m = g.constant(mask.clone())?;
            let wm = g.mul(v[1], m)?;
            g.conv2d(v[0], wm, None, ConvGeom::new(5, 1, 2))
        }),
    ));

    let x = rand_array(&mut rng, Shape::new(2, 4, 8, 8), -2.0, 2.0);
    let beta = rand_array(&mut rng, Shape::new(4, 1, 1, 1), 0.5, 1.5);
    let gamma = rand_array(&mut rng, Shape::new(4, 4, 1, 1), 0.0, 0.5);
    for (name, inverse) in [("gdn", false), ("igdn", true)] {
        errs.push((name, grad_err(&[x.clone(), beta.clone(), gamma.clone()], |g, v| g.gdn(v[0], v[1], v[2], inverse))));
    }

    let x = Array::from_fn(Shape::new(2, 4, 8, 8), |_, _, _, _| {
        let m = rng.gen_range(1e-4..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    });
    errs.push(("leaky relu", grad_err(&[x], |g, v| g.leaky_relu(v[0], 0.01))));

    let a = Array::from_fn(Shape::new(1, 1, 64, 64), |_, _, y, x| {
        0.5 + 0.3 * ((x as f64 * 0.21).sin() * (y as f64 * 0.17).cos()) + rng.gen_range(-0.1..0.1)
    });
    let t = Array::from_fn(a.shape(), |n, c, y, x| (a.at(n, c, y, x) + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0));
    let cfg = MsSsimConfig::small();
    // deep composition: at eps 1e-6 central differences are roundoff-bound
    // (~5e-5), at 1e-4 they settle near 2e-6
    errs.push((
        "1 - ms-ssim",
        grad_err_eps(&[a], |g, v| {
            let tv = g.constant(t.clone())?;
            let m = ms_ssim(g, v[0], tv, &cfg).map_err(|e| match e {
                MetricsError::Tensor(t) => t,
                other => TensorError::InvalidArgument(other.to_string()),
            })?;
            g.one_minus(m)
        }, 1e-4),
    ));

    let causal = causality_cases(100, 3);
    let worst = errs.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let list: Vec<String> = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    check(
        worst.1 < 1e-5 && causal == 100,
        format!("relative errors: {}; causality {causal}/100", list.join(", ")),
    )
}

// ---- 3: conditional entropy bound

fn brute_conditional(pairs: &[(i32, i32)]) -> f64 {
    let n = pairs.len() as f64;
    let mut total = 0.0;
    for p in 0..64 {
        let mut counts = [0usize; 64];
        let mut m = 0usize;
        for q in pairs.iter().filter(|q| q.1 == p) {
            counts[q.0 as usize] += 1;
            m += 1;
        }
        if m == 0 {
            continue;
        }
        let h: f64 = counts.iter().filter(|&&c| c > 0).map(|&c| c as f64 / m as f64).map(|q| -q * q.log2()).sum();
        total += m as f64 / n * h;
    }
    total
}

fn conditional_entropy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut lines = Vec::new();
    let mut ok = true;
    for (keep, alphabet) in [(0.9, 8), (0.5, 16), (0.2, 32)] {
        let pairs: Vec<(i32, i32)> = (0..200_000)
            .map(|_| {
                let pred = rng.gen_range(0..alphabet);
                let x = if rng.gen_bool(keep) {
                    pred
                } else if rng.gen_bool(0.5) {
                    (pred + 1).min(alphabet - 1)
                } else {
                    rng.gen_range(0..alphabet)
                };
                (x, pred)
            })
            .collect();
        let e = empirical_entropies(&pairs).unwrap();
        let brute = brute_conditional(&pairs);
        ok &= (e.conditional - brute).abs() < 1e-9 && brute <= e.marginal.min(e.difference) + 0.01;
        lines.push(format!("H(x|p) {brute:.3} H(x) {:.3} H(x-p) {:.3}", e.marginal, e.difference));
    }
    check(ok, lines.join("; "))
}

// ---- 4: bit-exact codec

fn random_pair(rng: &mut ChaCha8Rng) -> FramePair {
    let (h, w) = (rng.gen_range(24..96), rng.gen_range(24..96));
    let s = Shape::new(1, 3, h, w);
    let prev = Array::from_fn(s, |_, _, _, _| rng.gen_range(0.0f32..1.0));
    let cur = Array::from_fn(s, |_, c, y, x| (prev.at(0, c, y, x) + rng.gen_range(-0.2f32..0.2)).clamp(0.0, 1.0));
    FramePair::new(prev, cur).unwrap()
}

fn bit_exact_codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut exact, mut invariant, mut stable) = (0, 0, 0);
    let n = 20;
    for i in 0..n {
        let mode = CodecMode::ALL[i % 3];
        let mut arch = if i % 5 == 0 { ArchConfig { codec_mode: mode, ..ArchConfig::default() } } else { ArchConfig::toy(mode) };
        arch.codec.context = i % 2 == 1;
        let sys = System::new(&arch, i as u64).unwrap();
        let mut p = random_pair(&mut rng);
        let forced = [ForcedAlpha::None, ForcedAlpha::None, ForcedAlpha::Ones, ForcedAlpha::Zeros][i % 4];
        let rep = encode(&sys, &p, forced).unwrap();
        let decoded = decode(&sys, &rep.bytes, &p.x_prev).unwrap();
        // inference on the padded frames, cropped back
        let (ph, pw) = rep.padded;
        let (h, w) = (p.height(), p.width());
        let out = infer(&sys, &p.x_prev.pad_reflect(ph, pw).unwrap(), &p.x_t.pad_reflect(ph, pw).unwrap(), 0.01, forced).unwrap();
        exact += (decoded == out.x_hat.crop(0, 0, h, w).unwrap()) as usize;

        let again = System::new(&arch, i as u64).unwrap();
        stable += (encode(&again, &p, forced).unwrap().bytes == rep.bytes) as usize;

        for v in p.x_t.data_mut() {
            *v = 1.0 - *v;
        }
        invariant += (decode(&sys, &rep.bytes, &p.x_prev).unwrap() == decoded) as usize;
    }
    check(
        exact == n && invariant == n && stable == n,
        format!("decode == inference {exact}/{n}; x_t changes ignored {invariant}/{n}; identical bytes {stable}/{n}"),
    )
}

// ---- 5 and 6: trained behavior

const LAMBDA: f64 = 0.01;
const SEEDS: u64 = 5;
const PAIRS: usize = 64;
const WARMUP: usize = 4;
const ALTERNATE: usize = 28;

fn train_toy(mode: CodecMode, modenet: bool, seed: u64) -> System {
    let mut sys = System::new(&ArchConfig::toy(mode), seed).unwrap();
    let data = synth_dataset(&SynthSpec { count: PAIRS, seed, ..SynthSpec::default() });
    let sched = if modenet {
        TrainSchedule { warmup_epochs: WARMUP, alternate_epochs: ALTERNATE, lr: 3e-3, lambda: LAMBDA, seed, ..TrainSchedule::default() }
    } else {
        // same number of optimizer steps, all spent on CodecNet
        TrainSchedule { warmup_epochs: WARMUP + ALTERNATE, alternate_epochs: 0, lr: 3e-3, lambda: LAMBDA, seed, ..TrainSchedule::default() }
    };
    train(&mut sys, &data, &sched).unwrap();
    sys
}

fn held_out(seed: u64) -> Vec<FramePair> {
    synth_dataset(&SynthSpec { count: 16, seed: 10_000 + seed, ..SynthSpec::default() })
}

/// Mean RD loss with real coded bits: (1 − MS-SSIM) + λ·bpp.
fn rd_loss_coded(sys: &System, pairs: &[FramePair]) -> f64 {
    pairs
        .iter()
        .map(|p| {
            let e = evaluate_pair(sys, p).unwrap();
            (1.0 - e.msssim) + LAMBDA * e.bpp
        })
        .sum::<f64>()
        / pairs.len() as f64
}

/// Mean α on static and on moving pixels, and coded α rate.
fn alpha_stats(sys: &System, pairs: &[FramePair]) -> (f64, f64, f64) {
    let (mut st, mut sn, mut mv, mut mn, mut rm) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in pairs {
        let rep = encode(sys, p, ForcedAlpha::None).unwrap();
        let m = p.motion.as_ref().unwrap();
        for (a, mm) in rep.alpha.data().iter().zip(m.data()) {
            if *mm > 0.0 {
                mv += *a as f64;
                mn += 1.0;
            } else {
                st += *a as f64;
                sn += 1.0;
            }
        }
        rm += rep.mode_bytes as f64 * 8.0 / (p.height() * p.width()) as f64;
    }
    (st / sn, mv / mn, rm / pairs.len() as f64)
}

struct Trained {
    mode_cond: Vec<System>,
    mode_image: Vec<System>,
    diff_only: Vec<System>,
    image_only: Vec<System>,
}

fn train_all() -> Trained {
    let seeds = 0..SEEDS;
    Trained {
        mode_cond: seeds.clone().map(|s| train_toy(CodecMode::Conditional, true, s)).collect(),
        mode_image: seeds.clone().map(|s| train_toy(CodecMode::Image, true, s)).collect(),
        diff_only: seeds.clone().map(|s| train_toy(CodecMode::Difference, false, s)).collect(),
        image_only: seeds.map(|s| train_toy(CodecMode::Image, false, s)).collect(),
    }
}

fn modenet_behavior(t: &Trained) -> Outcome {
    let stats: Vec<(f64, f64, f64)> = t.mode_cond.iter().enumerate().map(|(s, sys)| alpha_stats(sys, &held_out(s as u64))).collect();
    let st = median(stats.iter().map(|s| s.0).collect());
    let mv = median(stats.iter().map(|s| s.1).collect());
    let rm = median(stats.iter().map(|s| s.2).collect());
    check(
        st < 0.15 && mv > 0.7 && rm < 0.02,
        format!("median over {SEEDS} seeds: static α {st:.3} (< 0.15), moving α {mv:.3} (> 0.7), R_m {rm:.4} bpp (< 0.02)"),
    )
}

fn rd_improvement(t: &Trained) -> Outcome {
    let wins = |with: &[System], without: &[System]| -> (usize, Vec<String>) {
        let mut w = 0;
        let mut lines = Vec::new();
        for (s, (a, b)) in with.iter().zip(without).enumerate() {
            let data = held_out(s as u64);
            let (la, lb) = (rd_loss_coded(a, &data), rd_loss_coded(b, &data));
            w += (la < lb) as usize;
            lines.push(format!("{la:.4}/{lb:.4}"));
        }
        (w, lines)
    };
    let (wc, lc) = wins(&t.mode_cond, &t.diff_only);
    let (wi, li) = wins(&t.mode_image, &t.image_only);
    check(
        wc >= 4 && wi >= 4,
        format!(
            "Mode+Cond beats Difference in {wc}/{SEEDS} [{}]; Mode+Image beats Image in {wi}/{SEEDS} [{}]",
            lc.join(" "),
            li.join(" ")
        ),
    )
}

// ---- 7: parameter budget

fn architecture_budget() -> Outcome {
    let sys = System::new(&ArchConfig::default(), 0).unwrap();
    let m = count_parameters(&sys.mode_params) as f64;
    let mut ok = (m - 2e5).abs() <= 0.1 * 2e5;
    let mut lines = vec![format!("ModeNet {m}")];
    for mode in CodecMode::ALL {
        let c = System::new(&ArchConfig { codec_mode: mode, ..ArchConfig::default() }, 0).unwrap().codec_parameter_count() as f64;
        ok &= (c - 10.0 * m).abs() <= 0.25 * 10.0 * m;
        lines.push(format!("CodecNet {mode} {c} ({:.2}x)", c / m));
    }
    check(ok, lines.join(", "))
}

// ---- 8: metrics

fn reference_ms_ssim(a: &Array<f64>, b: &Array<f64>, cfg: &MsSsimConfig) -> f64 {
    let s = a.shape();
    let k = cfg.window;
    let c = (k / 2) as f64;
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            win[i * k + j] = (-d2 / (2.0 * cfg.sigma * cfg.sigma)).exp();
        }
    }
    let z: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= z);
    let pool = |x: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..x.len() / 2)
            .map(|r| {
                (0..x[0].len() / 2)
                    .map(|q| 0.25 * (x[2 * r][2 * q] + x[2 * r][2 * q + 1] + x[2 * r + 1][2 * q] + x[2 * r + 1][2 * q + 1]))
                    .collect()
            })
            .collect()
    };

    let mut total = 0.0;
    for n in 0..s.n {
        for ch in 0..s.c {
            let mut x: Vec<Vec<f64>> = (0..s.h).map(|y| (0..s.w).map(|q| a.at(n, ch, y, q)).collect()).collect();
            let mut y: Vec<Vec<f64>> = (0..s.h).map(|r| (0..s.w).map(|q| b.at(n, ch, r, q)).collect()).collect();
            let mut prod = 1.0;
            for (scale, &e) in cfg.exponents.iter().enumerate() {
                if scale > 0 {
                    x = pool(&x);
                    y = pool(&y);
                }
                let (h, w) = (x.len(), x[0].len());
                let (mut cs_sum, mut l_sum, mut count) = (0.0, 0.0, 0.0);
                for oy in 0..=h - k {
                    for ox in 0..=w - k {
                        let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                        for i in 0..k {
                            for j in 0..k {
                                let wt = win[i * k + j];
                                let (p, q) = (x[oy + i][ox + j], y[oy + i][ox + j]);
                                mx += wt * p;
                                my += wt * q;
                                sxx += wt * p * p;
                                syy += wt * q * q;
                                sxy += wt * p * q;
                            }
                        }
                        let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                        let cs = (2.0 * cov + cfg.c2) / (vx + vy + cfg.c2);
                        let l = (2.0 * mx * my + cfg.c1) / (mx * mx + my * my + cfg.c1);
                        cs_sum += cs;
                        l_sum += l * cs;
                        count += 1.0;
                    }
                }
                let term = if scale + 1 == cfg.scales() { l_sum / count } else { cs_sum / count };
                prod *= term.max(1e-6).powf(e);
            }
            total += prod;
        }
    }
    total / (s.n * s.c) as f64
}

fn graph_ms_ssim(a: &Array<f64>, b: &Array<f64>, cfg: &MsSsimConfig) -> f64 {
    let mut g = Graph::<f64>::new();
    let va = g.constant(a.clone()).unwrap();
    let vb = g.constant(b.clone()).unwrap();
    let m = ms_ssim(&mut g, va, vb, cfg).unwrap();
    g.item(m)
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = Shape::new(1, 3, 176, 176);
    let cfg = MsSsimConfig::default();
    let a = rand_array(&mut rng, s, 0.0, 1.0);
    let self_sim = graph_ms_ssim(&a, &a, &cfg);
    let db = msssim_db(0.99);
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        let noise = 0.05 + 0.1 * i as f64;
        let a = rand_array(&mut rng, s, 0.0, 1.0);
        let b = Array::from_fn(s, |n, c, y, x| (a.at(n, c, y, x) + rng.gen_range(-noise..noise)).clamp(0.0, 1.0));
        worst = worst.max((graph_ms_ssim(&a, &b, &cfg) - reference_ms_ssim(&a, &b, &cfg)).abs());
    }
    check(
        (self_sim - 1.0).abs() <= 1e-9 && db == 20.0 && worst < 1e-6,
        format!("self-similarity {self_sim:.12}; msssim_db(0.99) = {db}; max |graph − direct| {worst:.2e} over 4 pairs"),
    )
}

#[test]
fn acceptance() {
    let mut failed = Vec::new();
    let mut report = |n: usize, start: Instant, r: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("criterion {n} PASS ({secs:.0} s): {d}"),
            Err(d) => {
                println!("criterion {n} FAIL ({secs:.0} s): {d}");
                failed.push(n);
            }
        }
    };
    let t = Instant::now();
    report(1, t, entropy_stack());
    let t = Instant::now();
    report(2, t, numerical_core());
    let t = Instant::now();
    report(3, t, conditional_entropy());
    let t = Instant::now();
    report(4, t, bit_exact_codec());
    let t = Instant::now();
    let trained = train_all();
    println!("trained {} toy systems in {:.0} s", 4 * SEEDS, t.elapsed().as_secs_f64());
    let t = Instant::now();
    report(5, t, modenet_behavior(&trained));
    let t = Instant::now();
    report(6, t, rd_improvement(&trained));
    let t = Instant::now();
    report(7, t, architecture_budget());
    let t = Instant::now();
    report(8, t, metrics());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
