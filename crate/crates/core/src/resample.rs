//! Resampling primitives.
//!
//! All label outputs are 0-based indices into the weight vector.

use rand::Rng;
use rand_distr::Exp1;
use thiserror::Error;

use crate::seed::stream_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResampleError {
    #[error("uniforms are not sorted at position {0}")]
    Unsorted(usize),
    #[error("uniform {0} at position {1} is outside [0, 1]")]
    UniformOutOfRange(f64, usize),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("all weights are zero")]
    AllZero,
}

/// Tolerance on `|sum(W) - 1|` accepted by the checked entry points.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Normalized nonnegative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Validates already-normalized weights.
    pub fn new(w: Vec<f64>) -> Result<Self, ResampleError> {
        check_weights(&w)?;
        Ok(WeightVector(w))
    }

    /// Normalizes log-weights. Returns the weights and
    /// `log(mean(exp(log_w)))`, the per-step evidence increment.
    pub fn from_log_weights(log_w: &[f64]) -> Result<(Self, f64), ResampleError> {
        let (w, log_mean) = normalize_log_weights(log_w).ok_or(ResampleError::AllZero)?;
        Ok((WeightVector(w), log_mean))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// `exp(log_w - max)` normalized, plus the log mean weight. `None` when
/// every weight is zero (or NaN).
pub(crate) fn normalize_log_weights(log_w: &[f64]) -> Option<(Vec<f64>, f64)> {
    let max = log_w
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return None;
    }
    if max == f64::INFINITY {
        // Degenerate: mass on the infinite entries.
        let mut w: Vec<f64> = log_w
            .iter()
            .map(|&v| if v == f64::INFINITY { 1.0 } else { 0.0 })
            .collect();
        let k = w.iter().sum::<f64>();
        w.iter_mut().for_each(|v| *v /= k);
        return Some((w, f64::INFINITY));
    }
    let mut w: Vec<f64> = log_w
        .iter()
        .map(|&v| if v.is_nan() { 0.0 } else { (v - max).exp() })
        .collect();
    let sum: f64 = w.iter().sum();
    let inv = 1.0 / sum;
    w.iter_mut().for_each(|v| *v *= inv);
    let log_mean = max + sum.ln() - (log_w.len() as f64).ln();
    Some((w, log_mean))
}

fn check_weights(w: &[f64]) -> Result<(), ResampleError> {
    if w.is_empty() {
        return Err(ResampleError::InvalidWeights("empty weight vector".into()));
    }
    if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(ResampleError::InvalidWeights(format!(
            "weight {} at position {i} is negative or not finite",
            w[i]
        )));
    }
    let sum: f64 = w.iter().sum();
    if sum == 0.0 {
        return Err(ResampleError::AllZero);
    }
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(ResampleError::InvalidWeights(format!(
            "weights sum to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Inverse-transform labels: `a_n` is the smallest `m` with
/// `W_0 + ... + W_m >= u_n`, found by one joint scan of the sorted
/// uniforms and the cumulative weights.
pub fn inverse_transform_labels(sorted_u: &[f64], w: &[f64]) -> Result<Vec<usize>, ResampleError> {
    check_weights(w)?;
    for (i, &u) in sorted_u.iter().enumerate() {
        if !(0.0..=1.0).contains(&u) {
            return Err(ResampleError::UniformOutOfRange(u, i));
        }
        if i > 0 && sorted_u[i - 1] > u {
            return Err(ResampleError::Unsorted(i));
        }
    }
    let mut out = Vec::with_capacity(sorted_u.len());
    labels_into(sorted_u.iter().copied(), w, &mut out);
    Ok(out)
}

/// Unchecked scan. Rounding can leave the final cumulative sum a hair
/// below a uniform close to 1; the scan then stops at the last index.
pub(crate) fn labels_into<I: IntoIterator<Item = f64>>(sorted_u: I, w: &[f64], out: &mut Vec<usize>) {
    let last = w.len() - 1;
    let mut m = 0;
    let mut s = w[0];
    for u in sorted_u {
        while s < u && m < last {
            m += 1;
            s += w[m];
        }
        out.push(m);
    }
}

/// Systematic resampling: `n` labels by inverse transform on the grid
/// `(i + u0) / n`.
pub fn systematic_labels(w: &[f64], n: usize, u0: f64) -> Result<Vec<usize>, ResampleError> {
    check_weights(w)?;
    if !(0.0..1.0).contains(&u0) {
        return Err(ResampleError::UniformOutOfRange(u0, 0));
    }
    let mut out = Vec::with_capacity(n);
    systematic_into(w, n, u0, &mut out);
    Ok(out)
}

pub(crate) fn systematic_into(w: &[f64], n: usize, u0: f64, out: &mut Vec<usize>) {
    let inv = 1.0 / n as f64;
    labels_into((0..n).map(|i| (i as f64 + u0) * inv), w, out);
}

/// `n` sorted i.i.d. uniforms in O(n) by normalized exponential spacings.
pub fn sorted_uniforms_with<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut acc = 0.0;
    for _ in 0..n {
        let e: f64 = rng.sample(Exp1);
        acc += e;
        out.push(acc);
    }
    let e: f64 = rng.sample(Exp1);
    let total = acc + e;
    let below_one = 1.0 - f64::EPSILON / 2.0;
    for v in out.iter_mut() {
        *v = (*v / total).min(below_one);
    }
    out
}

/// [`sorted_uniforms_with`] on a fresh stream keyed by `seed`.
pub fn sorted_uniforms(n: usize, seed: u64) -> Vec<f64> {
    sorted_uniforms_with(n, &mut stream_rng(seed, 0))
}

/// Multinomial resampling: sorted uniforms through the inverse transform.
pub fn multinomial_labels<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> Result<Vec<usize>, ResampleError> {
    check_weights(w)?;
    let u = sorted_uniforms_with(w.len(), rng);
    let mut out = Vec::with_capacity(w.len());
    labels_into(u, w, &mut out);
    Ok(out)
}
