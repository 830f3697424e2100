//! Deterministic reductions.
//!
//! Quadrature results must be bit-identical regardless of worker count, so
//! parallel code evaluates into an indexed buffer and reduces with a fixed
//! pairwise tree here.

/// Pairwise (cascade) summation with a fixed reduction tree.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise sum of an exact-size iterator (materializes once).
pub fn pairwise_sum_iter(iter: impl Iterator<Item = f64>) -> f64 {
    let buf: Vec<f64> = iter.collect();
    pairwise_sum(&buf)
}
