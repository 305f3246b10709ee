// SPDX-License-Identifier: MIT OR Apache-2.0

//! Numeric kernels shared by the decoder and the analyses: stable softmax,
//! Shannon entropy, cosine similarity and dense matrix-vector products.
//!
//! Entropies are in nats. Instrumentation-grade kernels work in `f64`;
//! the matrix kernels used by the decoder work in `f32`.

use crate::error::{Error, Result};

/// Default epsilon inside `log(p + eps)`.
pub const DEFAULT_ENTROPY_EPS: f64 = 1e-10;

/// Tolerance on `Σ p = 1` accepted by [`validate_prob_row`].
pub const PROB_SUM_TOL: f64 = 1e-6;

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_finite(scores)?;
    let mut out = scores.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Unchecked in-place softmax for hot loops. Callers guarantee a non-empty,
/// finite slice.
pub fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in values.iter_mut() {
        *v *= inv;
    }
}

/// Checks that `p` is a probability row: non-empty, entries in `[0, 1]`,
/// summing to one within [`PROB_SUM_TOL`].
pub fn validate_prob_row(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_finite(p)?;
    if let Some(i) = p.iter().position(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidProbRow(format!(
            "entry {i} = {} outside [0, 1]",
            p[i]
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InvalidProbRow(format!("sums to {sum}")));
    }
    Ok(())
}

/// Shannon entropy `-Σ p_j ln(p_j + eps)` in nats.
///
/// With `eps > 0` the result can dip below zero by at most `ln(1 + eps)`
/// (a one-hot row gives exactly `-ln(1 + eps)`), and the upper bound
/// `ln L` is only loosened downwards, never exceeded.
pub fn entropy(p: &[f64], eps: f64) -> Result<f64> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::InvalidProbRow(format!("eps must be >= 0, got {eps}")));
    }
    validate_prob_row(p)?;
    Ok(entropy_unchecked(p, eps))
}

/// [`entropy`] without validation; used on rows produced by
/// [`softmax_in_place`].
pub fn entropy_unchecked(p: &[f64], eps: f64) -> f64 {
    let mut h = 0.0;
    for &v in p {
        if v > 0.0 {
            h -= v * (v + eps).ln();
        }
    }
    h
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity in `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_finite(a)?;
    check_finite(b)?;
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `out = W x` for a row-major `rows x cols` matrix.
#[inline]
pub fn matvec(w: &[f32], rows: usize, cols: usize, x: &[f32], out: &mut [f32]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = dot_f32(row, x);
    }
}

#[inline]
pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    // Eight independent lanes let the compiler vectorise without fast-math.
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut sum = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        sum += x * y;
    }
    sum
}

/// Euclidean norm of `a - b`.
pub fn l2_distance_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}
