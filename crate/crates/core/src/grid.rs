//! Uniform quantization of a box into an ordered alphabet of cell centers.

use crate::error::{Error, Result};

/// Uniform grid over a box, one axis per dimension.
///
/// Cell centers along axis `d` are `lower[d] + j * step[d]` for
/// `j = 0..counts[d]`, so the first center is `lower[d]` and the last is
/// `upper[d]`. Cells are flattened row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    step: Vec<f64>,
}

impl UniformGrid {
    /// Builds a grid from bounds and a nominal step.
    ///
    /// The count per axis is `round((upper - lower) / step) + 1`; the step
    /// actually used is then `(upper - lower) / (count - 1)` so that both
    /// bounds are cell centers.
    pub fn new(lower: &[f64], upper: &[f64], step: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != step.len() {
            return Err(Error::Config(format!(
                "grid bounds/steps have mismatched dimensions ({}, {}, {})",
                lower.len(),
                upper.len(),
                step.len()
            )));
        }
        let mut counts = Vec::with_capacity(lower.len());
        for d in 0..lower.len() {
            if !(step[d] > 0.0) || !step[d].is_finite() {
                return Err(Error::Config(format!("grid step {d} must be positive")));
            }
            let span = upper[d] - lower[d];
            counts.push(((span / step[d]).round() + 1.0).max(0.0) as usize);
        }
        Self::from_counts(lower, upper, &counts)
    }

    pub fn from_counts(lower: &[f64], upper: &[f64], counts: &[usize]) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() || lower.len() != counts.len() {
            return Err(Error::Config("grid needs matching, non-empty bounds and counts".into()));
        }
        let mut step = Vec::with_capacity(lower.len());
        for d in 0..lower.len() {
            if !lower[d].is_finite() || !upper[d].is_finite() || upper[d] <= lower[d] {
                return Err(Error::Config(format!(
                    "grid axis {d}: need finite lower < upper, got [{}, {}]",
                    lower[d], upper[d]
                )));
            }
            if counts[d] < 2 {
                return Err(Error::Config(format!("grid axis {d} needs at least 2 cells")));
            }
            step.push((upper[d] - lower[d]) / (counts[d] - 1) as f64);
        }
        Ok(Self {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            counts: counts.to_vec(),
            step,
        })
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    /// Number of cells (the alphabet size).
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn step(&self) -> &[f64] {
        &self.step
    }

    /// Cell index of `point` with half-open cells `[c - Δ/2, c + Δ/2)` and
    /// clamping to the first/last cell outside the box.
    pub fn quantize(&self, point: &[f64]) -> Result<usize> {
        if point.len() != self.dims() {
            return Err(Error::Dimension {
                expected: self.dims(),
                actual: point.len(),
            });
        }
        let mut flat = 0;
        for d in 0..self.dims() {
            let x = point[d];
            if x.is_nan() {
                return Err(Error::Domain(format!("NaN coordinate on axis {d}")));
            }
            let pos = ((x - self.lower[d]) / self.step[d] + 0.5).floor();
            let last = (self.counts[d] - 1) as f64;
            let j = pos.clamp(0.0, last) as usize;
            flat = flat * self.counts[d] + j;
        }
        Ok(flat)
    }

    /// Per-axis cell coordinates of a flat index.
    pub fn coords(&self, index: usize) -> Result<Vec<usize>> {
        let len = self.len();
        if index >= len {
            return Err(Error::OutOfRange { index, len });
        }
        let mut coords = vec![0; self.dims()];
        let mut rest = index;
        for d in (0..self.dims()).rev() {
            coords[d] = rest % self.counts[d];
            rest /= self.counts[d];
        }
        Ok(coords)
    }

    pub fn flatten(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.dims() {
            return Err(Error::Dimension {
                expected: self.dims(),
                actual: coords.len(),
            });
        }
        let mut flat = 0;
        for (d, &c) in coords.iter().enumerate() {
            if c >= self.counts[d] {
                return Err(Error::OutOfRange {
                    index: c,
                    len: self.counts[d],
                });
            }
            flat = flat * self.counts[d] + c;
        }
        Ok(flat)
    }

    pub fn center(&self, index: usize) -> Result<Vec<f64>> {
        let coords = self.coords(index)?;
        Ok(coords
            .iter()
            .enumerate()
            .map(|(d, &j)| self.axis_center(d, j))
            .collect())
    }

    fn axis_center(&self, d: usize, j: usize) -> f64 {
        if j + 1 == self.counts[d] {
            self.upper[d]
        } else {
            self.lower[d] + j as f64 * self.step[d]
        }
    }

    /// All cell centers of a one-dimensional grid.
    pub fn centers_1d(&self) -> Vec<f64> {
        assert_eq!(self.dims(), 1, "centers_1d on a multi-dimensional grid");
        (0..self.counts[0]).map(|j| self.axis_center(0, j)).collect()
    }
}

/// Maps a raw actuator command to `[-1, 1]` by the actuator capacity.
pub fn normalize_input(raw: f64, max_torque: f64) -> Result<f64> {
    if !(max_torque > 0.0) {
        return Err(Error::Config(format!("max torque must be positive, got {max_torque}")));
    }
    Ok((raw / max_torque).clamp(-1.0, 1.0))
}

pub fn denormalize_input(u: f64, max_torque: f64) -> f64 {
    u * max_torque
}
