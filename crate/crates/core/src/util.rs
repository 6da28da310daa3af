//! Small numeric helpers shared across modules and tests.

/// Relative error with a unit floor in the denominator:
/// `|a - b| / max(1, |a|, |b|)`. Behaves like absolute error for small
/// magnitudes and like relative error for large ones.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0f64.max(a.abs()).max(b.abs())
}

/// Largest [`rel_err`] over two equal-length slices.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}
