use modenet::entropy::cdf::{all_tables, bin_scale, exp_golomb_len, table, table_bits, TableIndex, TOTAL};
use modenet::entropy::{
    empirical_entropies, quantize_infer, quantize_train, rate_bits, CdfTable, EntropyError, RangeDecoder, RangeEncoder,
    SYMBOL_BOUND,
};
use modenet::tensor::{Array, Graph, Shape};
use proptest::prelude::*;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[test]
fn noise_proxy_is_unbiased_with_identity_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let mut g = Graph::<f64>::new();
    let y = g.leaf(Array::full(Shape::new(1, 1, 1, n), 1.0), true).unwrap();
    let q = quantize_train(&mut g, y, &mut rng).unwrap();
    let vals = g.value(q).data().to_vec();
    assert!(vals.iter().all(|&v| v > 0.5 && v < 1.5));
    let mean = vals.iter().sum::<f64>() / n as f64;
    assert!((mean - 1.0).abs() < 0.005, "mean {mean}");
    let l = g.sum_all(q).unwrap();
    g.backward(l).unwrap();
    assert!(g.grad(y).unwrap().data().iter().all(|&d| d == 1.0));
}

#[test]
fn inference_rounding_rule() {
    let a = Array::from_vec(Shape::new(1, 1, 1, 6), vec![1.4f32, -1.5, 0.5, -0.49, 2.5, 0.0]).unwrap();
    let q = quantize_infer(&a).unwrap();
    assert_eq!(q.values, vec![1, -2, 1, 0, 3, 0]);
    let again = quantize_infer(&q.to_array::<f32>()).unwrap();
    assert_eq!(again, q);
    let big = Array::from_vec(Shape::new(1, 1, 1, 1), vec![255.6f32]).unwrap();
    assert!(matches!(quantize_infer(&big), Err(EntropyError::OutOfRange { .. })));
}

fn single_rate(y: f64, mu: f64, b: f64) -> f64 {
    let mut g = Graph::<f64>::new();
    let s = Shape::new(1, 1, 1, 1);
    let yv = g.leaf(Array::full(s, y), false).unwrap();
    let mv = g.leaf(Array::full(s, mu), false).unwrap();
    let bv = g.leaf(Array::full(s, b), false).unwrap();
    let r = rate_bits(&mut g, yv, mv, bv).unwrap();
    g.item(r)
}

/// Laplace CDF written from its textbook definition.
fn laplace_cdf(x: f64, mu: f64, b: f64) -> f64 {
    if x < mu {
        0.5 * ((x - mu) / b).exp()
    } else {
        1.0 - 0.5 * (-(x - mu) / b).exp()
    }
}

#[test]
fn rate_matches_closed_form() {
    let expect = -(laplace_cdf(0.5, 0.0, 1.0) - laplace_cdf(-0.5, 0.0, 1.0)).log2();
    assert!((expect - 1.3459).abs() < 5e-4);
    assert!((single_rate(0.0, 0.0, 1.0) - expect).abs() < 1e-12);
    for &(y, mu, b) in &[(2.0, 0.3, 0.7), (-3.0, 1.0, 2.5), (0.0, 0.4, 0.2)] {
        let e = -(laplace_cdf(y + 0.5, mu, b) - laplace_cdf(y - 0.5, mu, b)).log2();
        assert!((single_rate(y, mu, b) - e).abs() < 1e-9 * e.max(1.0));
    }
}

#[test]
fn rate_grows_with_scale_at_the_mode() {
    let mut prev = single_rate(0.0, 0.0, 0.011);
    assert!((0.0..1e-6).contains(&prev));
    let mut b = 0.02;
    while b < 64.0 {
        let r = single_rate(0.0, 0.0, b);
        assert!(r > prev, "b={b}");
        prev = r;
        b *= 2.0;
    }
}

#[test]
fn far_tail_is_floored_and_counted() {
    let mut g = Graph::<f64>::new();
    let s = Shape::new(1, 1, 1, 2);
    let y = g.leaf(Array::from_vec(s, vec![200.0, 0.0]).unwrap(), false).unwrap();
    let mu = g.leaf(Array::zeros(s), false).unwrap();
    let b = g.leaf(Array::full(s, 0.011), false).unwrap();
    let bits = g.laplace_bits(y, mu, b).unwrap();
    assert_eq!(g.value(bits).data()[0], 16.0);
    assert_eq!(g.floored_masses(), 1);
}

/// KL(exact ‖ coded) in bits/symbol at the table's own quantized parameters,
/// over the full alphabet.
fn table_kl(idx: TableIndex) -> f64 {
    let (mu, b) = idx.params();
    (-SYMBOL_BOUND..=SYMBOL_BOUND)
        .map(|s| {
            let p = laplace_cdf(s as f64 + 0.5, mu, b) - laplace_cdf(s as f64 - 0.5, mu, b);
            let q = 2f64.powf(-table_bits(s, mu, b));
            if p > 0.0 {
                p * (p / q).log2()
            } else {
                0.0
            }
        })
        .sum()
}

#[test]
fn tables_stay_close_to_the_laplace() {
    let mut worst: f64 = 0.0;
    for j in 0..64 {
        if bin_scale(j) < 0.05 {
            continue;
        }
        for f in (0..64).step_by(7) {
            let idx = TableIndex { scale_bin: j, center: 3, frac: f };
            worst = worst.max(table_kl(idx));
        }
    }
    assert!(worst < 1e-3, "worst KL {worst}");
}

#[test]
fn table_bank_is_pinned() {
    let mut h = Sha256::new();
    for lt in all_tables() {
        h.update(lt.half_width.to_be_bytes());
        h.update(lt.escape_order.to_be_bytes());
        for &c in lt.table.cdf() {
            h.update(c.to_be_bytes());
        }
    }
    let digest: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(digest, include_str!("data/cdf_bank.sha256").trim());
}

fn random_table(rng: &mut ChaCha8Rng, n: usize) -> CdfTable {
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0f64..1.0).powi(3)).collect();
    let total: f64 = weights.iter().sum();
    let mut freqs: Vec<u32> = weights.iter().map(|w| ((w / total) * (TOTAL - n as u32) as f64) as u32 + 1).collect();
    let s: u32 = freqs.iter().sum();
    freqs[0] += TOTAL - s;
    CdfTable::from_freqs(&freqs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn random_tables_round_trip(seed in any::<u64>(), n in 1usize..300, len in 0usize..400) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables: Vec<CdfTable> = (0..3).map(|_| random_table(&mut rng, n)).collect();
        let syms: Vec<(usize, usize)> = (0..len).map(|_| (rng.gen_range(0..3), rng.gen_range(0..n))).collect();
        let mut e = RangeEncoder::new();
        for &(t, s) in &syms {
            e.encode_symbol(&tables[t], s);
        }
        let bytes = e.finish();
        let mut d = RangeDecoder::new(&bytes);
        for &(t, s) in &syms {
            prop_assert_eq!(d.decode_symbol(&tables[t]).unwrap(), s);
        }
        prop_assert!(d.finish().is_ok());
    }

    #[test]
    fn laplace_symbols_round_trip(seed in any::<u64>(), len in 1usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: Vec<(i32, f64, f64)> = (0..len)
            .map(|_| {
                let b = (rng.gen_range(-6.0f64..3.5)).exp();
                let mu = rng.gen_range(-20.0..20.0);
                let s = if rng.gen_bool(0.05) {
                    rng.gen_range(-SYMBOL_BOUND..=SYMBOL_BOUND)
                } else {
                    (mu + rng.gen_range(-3.0..3.0) * b).round().clamp(-255.0, 255.0) as i32
                };
                (s, mu, b)
            })
            .collect();
        let mut e = RangeEncoder::new();
        for &(s, mu, b) in &items {
            e.encode_laplace(s, mu, b).unwrap();
        }
        let bytes = e.finish();
        let mut d = RangeDecoder::new(&bytes);
        for &(s, mu, b) in &items {
            prop_assert_eq!(d.decode_laplace(mu, b).unwrap(), s);
        }
        prop_assert!(d.finish().is_ok());
    }
}

#[test]
fn truncation_and_padding_are_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = random_table(&mut rng, 40);
    let syms: Vec<usize> = (0..2000).map(|_| rng.gen_range(0..40)).collect();
    let mut e = RangeEncoder::new();
    for &s in &syms {
        e.encode_symbol(&t, s);
    }
    let bytes = e.finish();
    let decode = |b: &[u8]| -> Result<Vec<usize>, EntropyError> {
        let mut d = RangeDecoder::new(b);
        let out = syms.iter().map(|_| d.decode_symbol(&t)).collect::<Result<Vec<_>, _>>()?;
        d.finish()?;
        Ok(out)
    };
    assert_eq!(decode(&bytes).unwrap(), syms);
    for cut in 1..=bytes.len() {
        assert!(decode(&bytes[..bytes.len() - cut]).is_err(), "cut {cut}");
    }
    let mut padded = bytes.clone();
    padded.push(0);
    assert!(decode(&padded).is_err());
}

#[test]
fn long_streams_approach_table_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t = random_table(&mut rng, 64);
    let freqs: Vec<u32> = (0..64).map(|i| t.range_of(i).1).collect();
    let dist = WeightedIndex::new(&freqs).unwrap();
    let n = 1_000_000;
    let mut e = RangeEncoder::new();
    let mut ideal = 0.0;
    for _ in 0..n {
        let s = dist.sample(&mut rng);
        ideal -= t.prob(s).log2();
        e.encode_symbol(&t, s);
    }
    let bytes = e.finish();
    let ideal_bytes = ideal / 8.0;
    assert!((bytes.len() as f64) <= ideal_bytes * 1.005 + 16.0, "{} vs {ideal_bytes}", bytes.len());
}

#[test]
fn near_certain_symbol_costs_almost_nothing() {
    let n = 64;
    let mut freqs = vec![1u32; n];
    freqs[0] = TOTAL - (n as u32 - 1);
    let t = CdfTable::from_freqs(&freqs).unwrap();
    let count = 100_000;
    let mut e = RangeEncoder::new();
    for _ in 0..count {
        e.encode_symbol(&t, 0);
    }
    let ideal_bits = -(t.prob(0).log2()) * count as f64;
    let bytes = e.finish();
    assert!(bytes.len() as f64 * 8.0 <= ideal_bits + 16.0 * 8.0, "{} bytes", bytes.len());
    assert!(bytes.len() < 200);
}

#[test]
fn coded_bits_match_the_rate_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 20_000;
    let items: Vec<(i32, f64, f64)> = (0..n)
        .map(|_| {
            let b = rng.gen_range(0.1f64.ln()..8f64.ln()).exp();
            let mu = rng.gen_range(-4.0..4.0);
            let u: f64 = rng.gen_range(-0.5..0.5);
            let lap = mu - b * u.signum() * (1.0 - 2.0 * u.abs()).ln();
            (lap.round().clamp(-255.0, 255.0) as i32, mu, b)
        })
        .collect();
    let mut e = RangeEncoder::new();
    let mut model = 0.0;
    for &(s, mu, b) in &items {
        e.encode_laplace(s, mu, b).unwrap();
        model += table_bits(s, mu, b);
    }
    let coded = e.finish().len() as f64 * 8.0;
    assert!((coded - model).abs() <= 0.01 * model, "coded {coded} vs model {model}");
}

#[test]
fn escape_cost_includes_payload() {
    let idx = TableIndex::of(0.0, 0.05);
    let lt = table(idx);
    let over = (100 - lt.half_width - 1) as u32;
    let esc = -lt.table.prob(lt.escape()).log2() + 1.0 + exp_golomb_len(over, lt.escape_order) as f64;
    assert_eq!(table_bits(100, 0.0, 0.05), esc);
}

fn markov_pairs(rng: &mut ChaCha8Rng, n: usize, keep: f64, alphabet: i32) -> Vec<(i32, i32)> {
    (0..n)
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
        .collect()
}

/// Brute-force conditional entropy from per-prediction sub-histograms.
fn brute_conditional(pairs: &[(i32, i32)]) -> f64 {
    let n = pairs.len() as f64;
    let mut total = 0.0;
    for p in 0..64 {
        let sub: Vec<i32> = pairs.iter().filter(|q| q.1 == p).map(|q| q.0).collect();
        if sub.is_empty() {
            continue;
        }
        let mut counts = [0usize; 64];
        for &x in &sub {
            counts[x as usize] += 1;
        }
        let m = sub.len() as f64;
        let h: f64 = counts.iter().filter(|&&c| c > 0).map(|&c| c as f64 / m).map(|q| -q * q.log2()).sum();
        total += m / n * h;
    }
    total
}

#[test]
fn conditional_entropy_is_bounded_by_marginal_and_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (keep, alphabet) in [(0.9, 8), (0.5, 16), (0.2, 32)] {
        let pairs = markov_pairs(&mut rng, 200_000, keep, alphabet);
        let e = empirical_entropies(&pairs).unwrap();
        assert!((e.conditional - brute_conditional(&pairs)).abs() < 1e-9);
        assert!(e.conditional <= e.marginal.min(e.difference) + 0.01, "{e:?}");
    }
    let indep: Vec<(i32, i32)> = (0..200_000).map(|_| (rng.gen_range(0..8), rng.gen_range(0..8))).collect();
    let e = empirical_entropies(&indep).unwrap();
    assert!((e.conditional - e.marginal).abs() < 0.01, "{e:?}");
}
