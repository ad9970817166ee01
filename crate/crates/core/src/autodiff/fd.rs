//! Central finite differences, the testing oracle for every gradient.

use std::collections::BTreeMap;

use super::store::ParamStore;
use crate::{Error, Result};

/// Central-difference gradient of `f` with respect to every trainable
/// parameter in `store`. Kept independent of the tape on purpose: this is
/// the oracle the tape is checked against.
pub fn finite_diff_grad<F>(
    mut f: F,
    store: &ParamStore,
    eps: f64,
) -> Result<BTreeMap<String, Vec<f64>>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::Parameter("finite-difference eps must be > 0".into()));
    }
    let mut work = store.clone();
    let names: Vec<String> = store
        .iter()
        .filter(|(_, b)| b.trainable())
        .map(|(n, _)| n.to_string())
        .collect();
    let mut out = BTreeMap::new();
    for name in names {
        let len = store.values(&name)?.len();
        let mut grad = vec![0.0; len];
        for i in 0..len {
            let orig = store.values(&name)?[i];
            work.values_mut(&name)?[i] = orig + eps;
            let hi = f(&work)?;
            work.values_mut(&name)?[i] = orig - eps;
            let lo = f(&work)?;
            work.values_mut(&name)?[i] = orig;
            grad[i] = (hi - lo) / (2.0 * eps);
        }
        out.insert(name, grad);
    }
    Ok(out)
}

/// Finite differences over a flat slice; test helper for non-store inputs.
pub fn finite_diff_vec(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut work = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let hi = f(&work);
        work[i] = orig - eps;
        let lo = f(&work);
        work[i] = orig;
        grad[i] = (hi - lo) / (2.0 * eps);
    }
    grad
}
