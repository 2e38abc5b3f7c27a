use rand::Rng;

use super::cdf::{B_MIN, SYMBOL_BOUND};
use super::EntropyError;
use crate::tensor::{Array, Graph, Real, Shape, TensorError, Var};

/// Additive uniform noise in (−½, ½): the differentiable training proxy for
/// rounding. The gradient w.r.t. `y` is the identity.
pub fn quantize_train<F: Real>(g: &mut Graph<F>, y: Var, rng: &mut impl Rng) -> Result<Var, TensorError> {
    let noise = Array::from_fn(g.shape(y), |_, _, _, _| F::of(rng.gen_range(-0.5..0.5)));
    let u = g.constant(noise)?;
    g.add(y, u)
}

/// Integer latents in `[-SYMBOL_BOUND, SYMBOL_BOUND]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedLatents {
    pub shape: Shape,
    pub values: Vec<i32>,
}

impl QuantizedLatents {
    pub fn to_array<F: Real>(&self) -> Array<F> {
        let data = self.values.iter().map(|&v| F::of(v as f64)).collect();
        Array::from_vec(self.shape, data).expect("latent shape")
    }
}

/// Round half away from zero, rejecting anything beyond the symbol bound.
pub fn quantize_infer<F: Real>(y: &Array<F>) -> Result<QuantizedLatents, EntropyError> {
    let values = y
        .data()
        .iter()
        .map(|&v| {
            let r = v.as_f64().round();
            if r.abs() > SYMBOL_BOUND as f64 || r.is_nan() {
                Err(EntropyError::OutOfRange { value: r as i64, bound: SYMBOL_BOUND })
            } else {
                Ok(r as i32)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(QuantizedLatents { shape: y.shape(), values })
}

/// `b = B_MIN + softplus(raw)`.
pub fn scale_from_raw<F: Real>(g: &mut Graph<F>, raw: Var) -> Result<Var, TensorError> {
    let s = g.softplus(raw)?;
    g.add_scalar(s, F::of(B_MIN))
}

/// Total information content in bits of `y` under per-element Laplace(μ, b).
pub fn rate_bits<F: Real>(g: &mut Graph<F>, y: Var, mu: Var, b: Var) -> Result<Var, TensorError> {
    let bits = g.laplace_bits(y, mu, b)?;
    g.sum_all(bits)
}
