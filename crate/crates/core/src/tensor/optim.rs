//! Adam and the step-decay learning-rate schedule.

use super::array::{Array, Real};
use super::layers::ParamStore;
use super::TensorError;

/// Learning rate divided by `factor` once half, and again once three
/// quarters, of `total_steps` have passed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub total_steps: usize,
    pub factor: f64,
}

impl LrSchedule {
    pub fn new(base: f64, total_steps: usize) -> Self {
        LrSchedule { base, total_steps, factor: 5.0 }
    }

    pub fn at(&self, step: usize) -> f64 {
        let t = self.total_steps;
        let mut lr = self.base;
        if t > 0 && step * 2 >= t {
            lr /= self.factor;
        }
        if t > 0 && step * 4 >= t * 3 {
            lr /= self.factor;
        }
        lr
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: Vec<u64>,
}

impl Adam {
    pub fn new<F: Real>(store: &ParamStore<F>) -> Self {
        let sizes: Vec<usize> = store.iter().map(|p| p.value.len()).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: vec![0; sizes.len()],
        }
    }

    /// One update. Parameters whose gradient is `None` are left untouched,
    /// moments included. Every gradient is checked before anything moves.
    pub fn step<F: Real>(
        &mut self,
        store: &mut ParamStore<F>,
        grads: &[Option<Array<F>>],
        lr: f64,
    ) -> Result<(), TensorError> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(TensorError::InvalidArgument(format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (p, g) in store.iter().zip(grads) {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(TensorError::NonFiniteGradient { param: p.name.clone() });
                }
            }
        }
        for (i, (p, g)) in store.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            self.t[i] += 1;
            let t = self.t[i] as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, (w, &gk)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gk = gk.as_f64();
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let upd = lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                *w = F::of(w.as_f64() - upd);
            }
        }
        Ok(())
    }
}
