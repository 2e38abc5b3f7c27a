use modenet::tensor::conv::causal_mask;
use modenet::tensor::{Array, Conv2d, ConvGeom, ConvTranspose2d, Gdn, Graph, MaskKind, ParamStore, Shape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn masked_output(x: &Array<f64>, w: &Array<f64>) -> Array<f64> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), false).unwrap();
    let wv = g.leaf(w.clone(), false).unwrap();
    let y = g.conv2d(xv, wv, None, ConvGeom::new(5, 1, 2)).unwrap();
    g.value(y).clone()
}

/// Runs the 100-case perturbation suite and returns how many cases kept every
/// strictly earlier output bitwise unchanged.
pub fn causality_suite(cases: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, h, w) = (3, 9, 11);
    let mut passed = 0;
    for _ in 0..cases {
        let x = Array::from_fn(Shape::new(1, c, h, w), |_, _, _, _| rng.gen_range(-1.0..1.0));
        let wt = Array::from_fn(Shape::new(4, c, 5, 5), |_, _, _, _| rng.gen_range(-1.0..1.0));
        let wt = wt.zip_map(&causal_mask(4, c, 5, false), |a, m| a * m);
        let (py, px) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let mut xp = x.clone();
        for ch in 0..c {
            let v = xp.at(0, ch, py, px);
            xp.set(0, ch, py, px, v + rng.gen_range(0.5..2.0));
        }
        let (a, b) = (masked_output(&x, &wt), masked_output(&xp, &wt));
        let pos = py * w + px;
        let ok = (0..4).all(|o| (0..pos).all(|i| a.at(0, o, i / w, i % w).to_bits() == b.at(0, o, i / w, i % w).to_bits()));
        passed += ok as usize;
    }
    passed
}

#[test]
fn masked_conv_is_causal() {
    assert_eq!(causality_suite(100, 3), 100);
}

#[test]
fn exclusive_mask_delta_response() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    let conv = Conv2d::masked(&mut store, "ctx", 1, 2, 5, MaskKind::Exclusive, &mut rng).unwrap();
    let (y0, x0) = (3, 4);
    let mut g = Graph::new();
    let p = store.bind(&mut g, false).unwrap();
    let mut delta = Array::zeros(Shape::new(1, 1, 8, 8));
    delta.set(0, 0, y0, x0, 1.0);
    let d = g.leaf(delta, false).unwrap();
    let y = conv.forward(&mut g, &p, d).unwrap();
    for o in 0..2 {
        for i in 0..=(y0 * 8 + x0) {
            assert_eq!(g.value(y).at(0, o, i / 8, i % 8), 0.0);
        }
    }
    let z = g.leaf(Array::zeros(Shape::new(1, 1, 8, 8)), false).unwrap();
    let yz = conv.forward(&mut g, &p, z).unwrap();
    assert!(g.value(yz).data().iter().all(|&v| v == 0.0));
}

#[test]
fn gdn_closed_forms() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Array::from_vec(Shape::new(1, 2, 1, 2), vec![0.3, -1.2, 2.0, 0.7]).unwrap(), false).unwrap();
    let beta = g.leaf(Array::full(Shape::new(2, 1, 1, 1), 1.0), false).unwrap();
    let gamma = g.leaf(Array::zeros(Shape::new(2, 2, 1, 1)), false).unwrap();
    let y = g.gdn(x, beta, gamma, false).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());

    let x = g.leaf(Array::full(Shape::new(1, 1, 1, 1), 2.0), false).unwrap();
    let beta = g.leaf(Array::full(Shape::new(1, 1, 1, 1), 1e-12), false).unwrap();
    let gamma = g.leaf(Array::full(Shape::new(1, 1, 1, 1), 1.0), false).unwrap();
    let y = g.gdn(x, beta, gamma, false).unwrap();
    let expect = 2.0 / (1e-12f64 + 4.0).sqrt();
    assert!((g.item(y) - expect).abs() < 1e-12);
    assert!((g.item(y) - 1.0).abs() < 1e-9);
}

#[test]
fn identity_conv_and_shape_arithmetic() {
    let mut g = Graph::<f64>::new();
    let xa = Array::from_fn(Shape::new(1, 1, 5, 6), |_, _, y, x| (y * 6 + x) as f64 * 0.1);
    let x = g.leaf(xa.clone(), false).unwrap();
    let w = g.leaf(Array::full(Shape::new(1, 1, 1, 1), 1.0), false).unwrap();
    let y = g.conv2d(x, w, None, ConvGeom::new(1, 1, 0)).unwrap();
    assert_eq!(g.value(y).data(), xa.data());

    let x = g.leaf(Array::zeros(Shape::new(1, 3, 64, 64)), false).unwrap();
    let w = g.leaf(Array::zeros(Shape::new(8, 3, 5, 5)), false).unwrap();
    let y = g.conv2d(x, w, None, ConvGeom::new(5, 2, 2)).unwrap();
    assert_eq!(g.shape(y), Shape::new(1, 8, 32, 32));
    let wt = g.leaf(Array::zeros(Shape::new(8, 6, 5, 5)), false).unwrap();
    let z = g.conv_transpose2d(y, wt, None, ConvGeom::same(5, 2)).unwrap();
    assert_eq!(g.shape(z), Shape::new(1, 6, 64, 64));

    let a = g.leaf(Array::zeros(Shape::new(1, 3, 8, 8)), false).unwrap();
    let b = g.leaf(Array::zeros(Shape::new(1, 5, 8, 8)), false).unwrap();
    let c = g.concat(&[a, b]).unwrap();
    assert_eq!(g.shape(c), Shape::new(1, 8, 8, 8));
    let clipped = g.leaf(Array::full(Shape::new(1, 1, 1, 1), 1.7), false).unwrap();
    let clipped = g.clip(clipped, 0.0, 1.0, false).unwrap();
    assert_eq!(g.item(clipped), 1.0);
    let neg = g.leaf(Array::full(Shape::new(1, 1, 1, 1), -1.0), false).unwrap();
    let lr = g.leaky_relu(neg, 0.01).unwrap();
    assert_eq!(g.item(lr), -0.01);
}

fn encoder_decoder_pass(seed: u64) -> (Vec<f32>, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f32>::new();
    let enc = Conv2d::new(&mut store, "enc", 3, 6, ConvGeom::new(5, 2, 2), &mut rng);
    let gdn = Gdn::new(&mut store, "gdn", 6, false);
    let dec = ConvTranspose2d::new(&mut store, "dec", 6, 3, ConvGeom::same(5, 2), &mut rng);
    let xa = Array::from_fn(Shape::new(2, 3, 16, 16), |_, _, _, _| rng.gen_range(0.0..1.0));
    let mut g = Graph::new();
    let p = store.bind(&mut g, true).unwrap();
    let x = g.leaf(xa, false).unwrap();
    let h = enc.forward(&mut g, &p, x).unwrap();
    let h = gdn.forward(&mut g, &p, h).unwrap();
    let y = dec.forward(&mut g, &p, h).unwrap();
    let l = g.mean_all(y).unwrap();
    g.backward(l).unwrap();
    let grads = store.take_grads(&mut g, &p);
    let flat: Vec<f32> = grads.iter().flat_map(|a| a.as_ref().unwrap().data().to_vec()).collect();
    (g.value(y).data().to_vec(), flat)
}

#[test]
fn forward_backward_is_bitwise_deterministic() {
    let (y1, g1) = encoder_decoder_pass(9);
    let (y2, g2) = encoder_decoder_pass(9);
    assert!(y1.iter().zip(&y2).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn strided_stack_closes_shape(levels in 1usize..4, hm in 1usize..4, wm in 1usize..4) {
        let stride = 1usize << levels;
        let (h, w) = (hm * stride, wm * stride);
        let mut g = Graph::<f32>::new();
        let mut v = g.leaf(Array::zeros(Shape::new(1, 2, h, w)), false).unwrap();
        for _ in 0..levels {
            let k = g.leaf(Array::zeros(Shape::new(2, 2, 5, 5)), false).unwrap();
            v = g.conv2d(v, k, None, ConvGeom::new(5, 2, 2)).unwrap();
        }
        prop_assert_eq!(g.shape(v), Shape::new(1, 2, hm, wm));
        for _ in 0..levels {
            let k = g.leaf(Array::zeros(Shape::new(2, 2, 5, 5)), false).unwrap();
            v = g.conv_transpose2d(v, k, None, ConvGeom::same(5, 2)).unwrap();
        }
        prop_assert_eq!(g.shape(v), Shape::new(1, 2, h, w));
    }

    #[test]
    fn clip_output_is_within_bounds(vals in proptest::collection::vec(-1e6f64..1e6, 1..64), lo in -2.0f64..0.5, span in 0.0f64..3.0) {
        let n = vals.len();
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Array::from_vec(Shape::new(1, 1, 1, n), vals).unwrap(), false).unwrap();
        let y = g.clip(x, lo, lo + span, false).unwrap();
        prop_assert!(g.value(y).data().iter().all(|&v| v >= lo && v <= lo + span));
    }

    #[test]
    fn gdn_with_unit_beta_zero_gamma_is_identity(vals in proptest::collection::vec(-10f64..10.0, 6)) {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Array::from_vec(Shape::new(1, 3, 1, 2), vals.clone()).unwrap(), false).unwrap();
        let b = g.leaf(Array::full(Shape::new(3, 1, 1, 1), 1.0), false).unwrap();
        let gm = g.leaf(Array::zeros(Shape::new(3, 3, 1, 1)), false).unwrap();
        let y = g.gdn(x, b, gm, false).unwrap();
        prop_assert_eq!(g.value(y).data(), &vals[..]);
    }
}
