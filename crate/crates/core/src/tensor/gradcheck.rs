//! Central-difference gradient checking in double precision.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::array::{Array, Shape};
use super::graph::{Graph, Var};
use super::TensorError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Settings for [`check_gradients`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub eps: f64,
    /// Coordinates probed per input; `usize::MAX` probes all of them.
    pub samples_per_input: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { eps: 1e-6, samples_per_input: 64, seed: 0 }
    }
}

fn projected<B>(build: &B, inputs: &[Array<f64>], proj: &Option<Array<f64>>) -> Result<(f64, Shape), TensorError>
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::new();
    let vars = inputs.iter().map(|a| g.leaf(a.clone(), false)).collect::<Result<Vec<_>, _>>()?;
    let y = build(&mut g, &vars)?;
    let yv = g.value(y);
    let s = match proj {
        Some(p) => yv.data().iter().zip(p.data()).map(|(a, b)| a * b).sum(),
        None => 0.0,
    };
    Ok((s, yv.shape()))
}

/// Compare analytic gradients of `⟨r, build(inputs)⟩` (with `r` a fixed random
/// projection) against central differences. The relative error of one
/// coordinate is `|ga − gn| / max(|ga|, |gn|, 1e-3·max|gn|)`; the floor stops
/// coordinates whose true gradient is ~0 from dominating.
pub fn check_gradients<B>(inputs: &[Array<f64>], build: B, cfg: GradCheck) -> Result<GradCheckReport, TensorError>
where
    B: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (_, out_shape) = projected(&build, inputs, &None)?;
    let proj = Some(Array::from_fn(out_shape, |_, _, _, _| rng.gen_range(-1.0..1.0)));

    let mut g = Graph::new();
    let vars = inputs.iter().map(|a| g.leaf(a.clone(), true)).collect::<Result<Vec<_>, _>>()?;
    let y = build(&mut g, &vars)?;
    let r = g.constant(proj.clone().unwrap())?;
    let yr = g.mul(y, r)?;
    let loss = g.sum_all(yr)?;
    g.backward(loss)?;

    let mut pairs = Vec::new();
    for (k, (input, &v)) in inputs.iter().zip(&vars).enumerate() {
        let analytic = g.grad(v).cloned().unwrap_or_else(|| Array::zeros(input.shape()));
        let n = input.len();
        let picks: Vec<usize> = if cfg.samples_per_input >= n {
            (0..n).collect()
        } else {
            sample(&mut rng, n, cfg.samples_per_input).into_vec()
        };
        for i in picks {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += cfg.eps;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= cfg.eps;
            let (fp, _) = projected(&build, &plus, &proj)?;
            let (fm, _) = projected(&build, &minus, &proj)?;
            pairs.push((analytic.data()[i], (fp - fm) / (2.0 * cfg.eps)));
        }
    }
    let scale = pairs.iter().fold(0.0f64, |m, &(_, gn)| m.max(gn.abs()));
    let max_rel_err = pairs
        .iter()
        .map(|&(ga, gn)| (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-3 * scale).max(1e-300))
        .fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_err, checked: pairs.len() })
}
