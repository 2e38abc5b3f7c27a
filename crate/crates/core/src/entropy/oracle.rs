//! Plug-in Shannon entropies of paired discrete samples from exact histograms.

use std::collections::HashMap;
use std::hash::Hash;

use super::EntropyError;

/// Largest alphabet either marginal may have.
pub const MAX_ALPHABET: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entropies {
    /// H(x)
    pub marginal: f64,
    /// H(x − x̃)
    pub difference: f64,
    /// H(x | x̃) = H(x, x̃) − H(x̃)
    pub conditional: f64,
}

fn entropy<K: Hash + Eq>(items: impl Iterator<Item = K>) -> f64 {
    let mut counts: HashMap<K, u64> = HashMap::new();
    let mut n = 0u64;
    for k in items {
        *counts.entry(k).or_default() += 1;
        n += 1;
    }
    let n = n as f64;
    // Summed in a fixed order so results do not depend on hash iteration.
    let mut c: Vec<u64> = counts.into_values().collect();
    c.sort_unstable();
    -c.iter().map(|&k| k as f64 / n).map(|p| p * p.log2()).sum::<f64>()
}

/// Entropies of `x` given samples `(x, x̃)`.
pub fn empirical_entropies(pairs: &[(i32, i32)]) -> Result<Entropies, EntropyError> {
    if pairs.is_empty() {
        return Err(EntropyError::Oracle("empty sample set".into()));
    }
    for (name, vals) in [("x", pairs.iter().map(|p| p.0).collect::<Vec<_>>()), ("prediction", pairs.iter().map(|p| p.1).collect())] {
        let mut v = vals;
        v.sort_unstable();
        v.dedup();
        if v.len() > MAX_ALPHABET {
            return Err(EntropyError::Oracle(format!("{name} alphabet has {} values, limit {MAX_ALPHABET}", v.len())));
        }
    }
    let h_x = entropy(pairs.iter().map(|p| p.0));
    let h_diff = entropy(pairs.iter().map(|p| p.0 - p.1));
    let h_joint = entropy(pairs.iter().copied());
    let h_pred = entropy(pairs.iter().map(|p| p.1));
    Ok(Entropies { marginal: h_x, difference: h_diff, conditional: (h_joint - h_pred).max(0.0) })
}
