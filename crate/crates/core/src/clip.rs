//! Per-tuple gradient clipping.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::sampler::MiniBatch;

/// Flattened gradient over all model parameters.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GradVec(pub Vec<f64>);

impl GradVec {
    pub fn zeros(len: usize) -> Self {
        GradVec(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn add_scaled(&mut self, other: &GradVec, s: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += s * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.0 {
            *a *= s;
        }
    }

    pub fn sub(&self, other: &GradVec) -> GradVec {
        GradVec(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }
}

impl Index<usize> for GradVec {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for GradVec {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Euclidean norm with scaling to avoid overflow on large entries.
pub fn l2_norm(x: &[f64]) -> f64 {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let ss: f64 = x.iter().map(|v| (v / scale) * (v / scale)).sum();
    scale * ss.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipMode {
    /// Threshold `C / (2 * max_freq)` per tuple; batch sensitivity `C`.
    Adaptive,
    /// Threshold `C` per tuple.
    Standard,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipConfig {
    /// Clipping bound. `f64::INFINITY` disables clipping.
    pub c: f64,
    pub mode: ClipMode,
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::arg(format!("clip bound must be positive, got {}", self.c)));
        }
        Ok(())
    }

    pub fn apply(&self, batch: &MiniBatch, grads: &[GradVec]) -> Result<GradVec> {
        self.validate()?;
        match self.mode {
            ClipMode::Adaptive => freq_clip(batch, grads, self.c),
            ClipMode::Standard => standard_clip(grads, self.c),
        }
    }
}

/// Per-tuple adaptive thresholds `c / (2 * max_freq(T_i))`.
pub fn adaptive_thresholds(batch: &MiniBatch, c: f64) -> Vec<f64> {
    (0..batch.len()).map(|i| c / (2.0 * batch.max_freq(i) as f64)).collect()
}

fn check_inputs(grads: &[GradVec]) -> Result<usize> {
    let len = grads.first().map_or(0, GradVec::len);
    for (i, g) in grads.iter().enumerate() {
        if g.len() != len {
            return Err(Error::arg(format!(
                "gradient {i} has length {}, expected {len}",
                g.len()
            )));
        }
        if !g.is_finite() {
            return Err(Error::numeric(format!("non-finite entry in gradient {i}")));
        }
    }
    Ok(len)
}

/// `g / max(1, ||g|| / threshold)`, unchanged when `threshold` is infinite.
pub fn clip_to(g: &GradVec, threshold: f64) -> GradVec {
    let norm = g.norm();
    let factor = (norm / threshold).max(1.0);
    if factor == 1.0 {
        g.clone()
    } else {
        GradVec(g.0.iter().map(|x| x / factor).collect())
    }
}

fn clipped_sum(grads: &[GradVec], thresholds: impl Iterator<Item = f64>, len: usize) -> GradVec {
    let mut sum = GradVec::zeros(len);
    for (g, thr) in grads.iter().zip(thresholds) {
        sum.add_scaled(&clip_to(g, thr), 1.0);
    }
    sum
}

/// Frequency-based adaptive clipping, summed in tuple order.
pub fn freq_clip(batch: &MiniBatch, grads: &[GradVec], c: f64) -> Result<GradVec> {
    if grads.len() != batch.len() {
        return Err(Error::arg(format!(
            "{} gradients for {} tuples",
            grads.len(),
            batch.len()
        )));
    }
    let len = check_inputs(grads)?;
    Ok(clipped_sum(grads, adaptive_thresholds(batch, c).into_iter(), len))
}

/// Constant per-tuple clipping at `c`, summed in tuple order.
pub fn standard_clip(grads: &[GradVec], c: f64) -> Result<GradVec> {
    let len = check_inputs(grads)?;
    Ok(clipped_sum(grads, std::iter::repeat(c), len))
}
