use modenet::metrics::{ms_ssim, msssim_db, rd_loss, MetricsError, MsSsimConfig};
use modenet::tensor::gradcheck::{check_gradients, GradCheck};
use modenet::tensor::{Array, Graph, Shape, TensorError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straightforward MS-SSIM: a full 2-D Gaussian window slid over every valid
/// position, one plane at a time, no separable filtering.
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

fn pool(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (h, w) = (x.len() / 2, x[0].len() / 2);
    (0..h)
        .map(|r| {
            (0..w)
                .map(|q| 0.25 * (x[2 * r][2 * q] + x[2 * r][2 * q + 1] + x[2 * r + 1][2 * q] + x[2 * r + 1][2 * q + 1]))
                .collect()
        })
        .collect()
}

fn graph_ms_ssim(a: &Array<f64>, b: &Array<f64>, cfg: &MsSsimConfig) -> Result<f64, MetricsError> {
    let mut g = Graph::<f64>::new();
    let va = g.constant(a.clone())?;
    let vb = g.constant(b.clone())?;
    let m = ms_ssim(&mut g, va, vb, cfg)?;
    Ok(g.item(m))
}

fn noisy_pair(seed: u64, s: Shape, noise: f64) -> (Array<f64>, Array<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Array::from_fn(s, |_, c, y, x| {
        0.5 + 0.3 * ((x as f64 * 0.21 + c as f64).sin() * (y as f64 * 0.17).cos()) + rng.gen_range(-0.1..0.1)
    });
    let b = Array::from_fn(s, |n, c, y, x| (a.at(n, c, y, x) + rng.gen_range(-noise..noise)).clamp(0.0, 1.0));
    (a, b)
}

#[test]
fn matches_direct_window_formula() {
    let cases = [(Shape::new(1, 3, 48, 52), MsSsimConfig::small(), 0.05), (Shape::new(2, 1, 176, 180), MsSsimConfig::default(), 0.2)];
    for (i, (s, cfg, noise)) in cases.into_iter().enumerate() {
        let (a, b) = noisy_pair(i as u64, s, noise);
        let got = graph_ms_ssim(&a, &b, &cfg).unwrap();
        let want = reference_ms_ssim(&a, &b, &cfg);
        assert!((got - want).abs() < 1e-6, "case {i}: {got} vs {want}");
        assert!(got < 1.0 && got > 0.0);
    }
}

#[test]
fn identity_and_symmetry() {
    let (a, b) = noisy_pair(7, Shape::new(1, 3, 64, 64), 0.1);
    let cfg = MsSsimConfig::small();
    assert!((graph_ms_ssim(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-12);
    let ab = graph_ms_ssim(&a, &b, &cfg).unwrap();
    let ba = graph_ms_ssim(&b, &a, &cfg).unwrap();
    assert!((ab - ba).abs() < 1e-12);
}

#[test]
fn more_noise_scores_lower() {
    let cfg = MsSsimConfig::small();
    let mut last = 1.0;
    for noise in [0.01, 0.05, 0.15, 0.4] {
        let (a, b) = noisy_pair(3, Shape::new(1, 1, 64, 64), noise);
        let v = graph_ms_ssim(&a, &b, &cfg).unwrap();
        assert!(v < last, "{noise}: {v} !< {last}");
        last = v;
    }
}

#[test]
fn gradient_of_one_minus_msssim() {
    let (a, b) = noisy_pair(5, Shape::new(1, 1, 64, 64), 0.1);
    let cfg = MsSsimConfig::small();
    let rep = check_gradients(
        &[a],
        |g, v| {
            let t = g.constant(b.clone())?;
            let m = ms_ssim(g, v[0], t, &cfg).map_err(|e| match e {
                MetricsError::Tensor(t) => t,
                other => TensorError::InvalidArgument(other.to_string()),
            })?;
            g.one_minus(m)
        },
        GradCheck { samples_per_input: 48, ..GradCheck::default() },
    )
    .unwrap();
    assert!(rep.max_rel_err < 1e-4, "max relative error {:.3e}", rep.max_rel_err);
}

#[test]
fn size_errors_suggest_fewer_scales() {
    let (a, b) = noisy_pair(1, Shape::new(1, 1, 64, 64), 0.1);
    let err = graph_ms_ssim(&a, &b, &MsSsimConfig::default()).unwrap_err();
    assert!(matches!(err, MetricsError::TooSmall { need: 176, .. }));
    assert!(err.to_string().contains("fewer scales"));
    assert_eq!(MsSsimConfig::for_size(64, 64), MsSsimConfig::small());
    assert_eq!(MsSsimConfig::for_size(256, 200), MsSsimConfig::default());
}

#[test]
fn rd_loss_units() {
    let (a, b) = noisy_pair(2, Shape::new(2, 3, 48, 48), 0.05);
    let cfg = MsSsimConfig::small();
    let mut g = Graph::<f64>::new();
    let va = g.constant(a.clone()).unwrap();
    let vb = g.constant(b.clone()).unwrap();
    let rm = g.constant(Array::scalar(460.8)).unwrap();
    let rc = g.constant(Array::scalar(4147.2)).unwrap();
    let terms = rd_loss(&mut g, vb, va, rm, rc, 0.5, &cfg).unwrap();
    // 2·48·48 = 4608 pixels, so the rates are 0.1 and 0.9 bpp.
    assert!((g.item(terms.rm_bpp) - 0.1).abs() < 1e-12);
    assert!((g.item(terms.rc_bpp) - 0.9).abs() < 1e-12);
    let d = 1.0 - graph_ms_ssim(&b, &a, &cfg).unwrap();
    assert!((g.item(terms.distortion) - d).abs() < 1e-12);
    assert!((g.item(terms.loss) - (d + 0.5)).abs() < 1e-12);
    assert!(matches!(rd_loss(&mut g, vb, va, rm, rc, -0.1, &cfg), Err(MetricsError::NegativeLambda(_))));
}

#[test]
fn decibel_scale() {
    assert_eq!(msssim_db(0.99), 20.0);
    assert_eq!(msssim_db(0.999), 30.0);
    assert_eq!(msssim_db(1.0), 100.0);
    assert!(msssim_db(0.5) > 3.0102 && msssim_db(0.5) < 3.0103);
}

proptest! {
    #[test]
    fn db_is_monotone(a in 0.0f64..0.999_999, b in 0.0f64..0.999_999) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(msssim_db(lo) <= msssim_db(hi));
    }

    #[test]
    fn msssim_bounded(seed in 0u64..1000, noise in 0.0f64..0.5) {
        let (a, b) = noisy_pair(seed, Shape::new(1, 1, 44, 44), noise.max(1e-3));
        let v = graph_ms_ssim(&a, &b, &MsSsimConfig::small()).unwrap();
        prop_assert!(v > 0.0 && v <= 1.0 + 1e-12);
    }
}
