//! Node-attribute encoders over dense features.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::clip::GradVec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    /// `h = W x`.
    Linear,
    /// `h = W₂ tanh(W₁ x + b₁)`.
    TwoLayer { hidden: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub kind: EncoderKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Activations {
    input: Vec<f64>,
    hidden: Vec<f64>,
}

pub fn param_count(kind: EncoderKind, in_dim: usize, out_dim: usize) -> usize {
    match kind {
        EncoderKind::Linear => out_dim * in_dim,
        EncoderKind::TwoLayer { hidden } => hidden * in_dim + hidden + out_dim * hidden,
    }
}

fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

impl EncoderModel {
    pub fn new(kind: EncoderKind, in_dim: usize, out_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if out_dim == 0 {
            return Err(Error::arg("embedding dimension must be positive"));
        }
        if let EncoderKind::TwoLayer { hidden: 0 } = kind {
            return Err(Error::arg("hidden width must be positive"));
        }
        let want = param_count(kind, in_dim, out_dim);
        if weights.len() != want {
            return Err(Error::arg(format!(
                "encoder expects {want} parameters, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::numeric("encoder weights must be finite"));
        }
        Ok(EncoderModel {
            kind,
            in_dim,
            out_dim,
            weights,
        })
    }

    /// Gaussian initialisation with variance `1 / fan_in`; hidden biases start at zero.
    pub fn init(kind: EncoderKind, in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut draw = |fan_in: usize, count: usize, out: &mut Vec<f64>| {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            out.extend((0..count).map(|_| normal.sample(&mut rng)));
        };
        let mut w = Vec::with_capacity(param_count(kind, in_dim, out_dim));
        match kind {
            EncoderKind::Linear => draw(in_dim.max(1), out_dim * in_dim, &mut w),
            EncoderKind::TwoLayer { hidden } => {
                draw(in_dim.max(1), hidden * in_dim, &mut w);
                w.extend(std::iter::repeat_n(0.0, hidden));
                draw(hidden.max(1), out_dim * hidden, &mut w);
            }
        }
        Self::new(kind, in_dim, out_dim, w)
    }

    pub fn num_params(&self) -> usize {
        self.weights.len()
    }

    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Activations)> {
        if x.len() != self.in_dim {
            return Err(Error::arg(format!(
                "feature row has {} entries, encoder expects {}",
                x.len(),
                self.in_dim
            )));
        }
        let mut h = vec![0.0; self.out_dim];
        let hidden = match self.kind {
            EncoderKind::Linear => {
                matvec(&self.weights, self.out_dim, self.in_dim, x, &mut h);
                Vec::new()
            }
            EncoderKind::TwoLayer { hidden } => {
                let (w1, rest) = self.weights.split_at(hidden * self.in_dim);
                let (b1, w2) = rest.split_at(hidden);
                let mut a = vec![0.0; hidden];
                matvec(w1, hidden, self.in_dim, x, &mut a);
                for (ai, bi) in a.iter_mut().zip(b1) {
                    *ai = (*ai + bi).tanh();
                }
                matvec(w2, self.out_dim, hidden, &a, &mut h);
                a
            }
        };
        Ok((
            h,
            Activations {
                input: x.to_vec(),
                hidden,
            },
        ))
    }

    /// Adds `∂(dh · h)/∂θ` to `grad`.
    pub fn backward(&self, act: &Activations, dh: &[f64], grad: &mut GradVec) {
        let x = &act.input;
        match self.kind {
            EncoderKind::Linear => {
                for (r, &d) in dh.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut grad.0[r * self.in_dim..(r + 1) * self.in_dim];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            EncoderKind::TwoLayer { hidden } => {
                let n1 = hidden * self.in_dim;
                let w2 = &self.weights[n1 + hidden..];
                let a = &act.hidden;
                let mut da = vec![0.0; hidden];
                for (r, &d) in dh.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let off = n1 + hidden + r * hidden;
                    for j in 0..hidden {
                        grad.0[off + j] += d * a[j];
                        da[j] += d * w2[r * hidden + j];
                    }
                }
                for j in 0..hidden {
                    let dz = da[j] * (1.0 - a[j] * a[j]);
                    if dz == 0.0 {
                        continue;
                    }
                    grad.0[n1 + j] += dz;
                    let row = &mut grad.0[j * self.in_dim..(j + 1) * self.in_dim];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += dz * xi;
                    }
                }
            }
        }
    }
}
