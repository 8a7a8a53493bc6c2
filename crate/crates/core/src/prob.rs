//! Histogram (pmf) arithmetic over finite alphabets.
//!
//! All routines work on plain `f64` slices so that rows borrowed out of the
//! model tensors can be used without copying. [`Histogram`] is the owned,
//! validated form.

use std::ops::Deref;

use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance on `Σ p = 1` for a vector to count as a pmf.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// A normalized histogram: non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram(Vec<f64>);

impl Histogram {
    /// Wraps an already normalized vector, checking the pmf invariants.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        check_pmf(&weights)?;
        Ok(Self(weights))
    }

    /// Normalizes non-negative weights with a positive total.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::NotNormalized("empty weight vector".into()));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(**w >= 0.0) || !w.is_finite())
        {
            return Err(Error::NotNormalized(format!("weight {i} is {w}")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::NotNormalized("weights sum to zero".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self(weights))
    }

    pub fn uniform(len: usize) -> Self {
        assert!(len > 0, "uniform histogram over an empty alphabet");
        Self(vec![1.0 / len as f64; len])
    }

    pub fn point_mass(len: usize, index: usize) -> Self {
        assert!(index < len);
        let mut w = vec![0.0; len];
        w[index] = 1.0;
        Self(w)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Histogram {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Histogram {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Checks non-negativity and unit mass within [`NORMALIZATION_TOLERANCE`].
pub fn check_pmf(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::NotNormalized("empty vector".into()));
    }
    if let Some((i, v)) = p.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::NotNormalized(format!("entry {i} is {v}")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::NotNormalized(format!("entries sum to {total}")));
    }
    Ok(())
}

/// `Σ p ln(p/q)` in nats, with `0 · ln(0/q) = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            expected: p.len(),
            actual: q.len(),
        });
    }
    let mut acc = 0.0;
    for (index, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::KlUndefined { index, p: pi });
            }
            acc += pi * (pi / qi).ln();
        }
    }
    Ok(acc)
}

pub fn expectation(p: &[f64], values: &[f64]) -> Result<f64> {
    if p.len() != values.len() {
        return Err(Error::Dimension {
            expected: p.len(),
            actual: values.len(),
        });
    }
    Ok(p.iter().zip(values).map(|(a, b)| a * b).sum())
}

/// Draws an index with probability `p[h]`. Zero-mass entries are never returned.
pub fn sample<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> Result<usize> {
    check_pmf(p)?;
    let draw: f64 = rng.random::<f64>() * p.iter().sum::<f64>();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (h, &ph) in p.iter().enumerate() {
        if ph > 0.0 {
            cumulative += ph;
            last_positive = h;
            if draw < cumulative {
                return Ok(h);
            }
        }
    }
    Ok(last_positive)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (h, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = h;
        }
    }
    best
}

/// Total-variation distance `½ Σ |p − q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            expected: p.len(),
            actual: q.len(),
        });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `ln Σ exp(x)` with max-subtraction.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
