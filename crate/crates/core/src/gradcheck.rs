//! Central finite-difference gradient checking.
//!
//! Analytic backward passes are compared against `(f(x + h) - f(x - h)) / 2h`
//! coordinate by coordinate, reporting the relative error
//! `|a - n| / max(1, |a|, |n|)`. Multi-output ops are reduced to a scalar by
//! a fixed random projection of the outputs, whose analytic gradient is the
//! backward pass evaluated at that projection.

use crate::util::rel_err;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Maximum relative error between `analytic` and the central-difference
/// gradient of `f` at `x`. `f` must be deterministic.
pub fn grad_check_scalar<F>(mut f: F, x: &[f64], analytic: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let original = probe[i];
        probe[i] = original + step;
        let plus = f(&probe);
        probe[i] = original - step;
        let minus = f(&probe);
        probe[i] = original;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

/// Deterministic unit-norm projection vector used to scalarize multi-output
/// ops before checking.
pub fn projection(len: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
    for a in &mut v {
        *a /= norm;
    }
    v
}

/// Inner product used as the scalar objective.
pub fn project(values: &[f64], proj: &[f64]) -> f64 {
    values.iter().zip(proj).map(|(a, b)| a * b).sum()
}
