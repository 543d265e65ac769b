//! Edge scores and per-tuple contrastive losses with analytic gradients.

use std::collections::BTreeMap;

use super::model::{Activations, EncoderModel};
use crate::clip::GradVec;
use crate::error::{Error, Result};
use crate::graph::{Features, NodeId};
use crate::sampler::EdgeTuple;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScoreKind {
    #[default]
    Dot,
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    InfoNce,
    /// `Σ_j max(0, margin − s⁺ + s⁻_j)`.
    Hinge {
        margin: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub score: ScoreKind,
}

impl LossSpec {
    pub fn info_nce() -> Self {
        LossSpec {
            kind: LossKind::InfoNce,
            score: ScoreKind::Dot,
        }
    }

    pub fn hinge(margin: f64) -> Self {
        LossSpec {
            kind: LossKind::Hinge { margin },
            score: ScoreKind::Dot,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let LossKind::Hinge { margin } = self.kind {
            if !(margin > 0.0 && margin.is_finite()) {
                return Err(Error::arg(format!("hinge margin must be positive, got {margin}")));
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn score(kind: ScoreKind, hu: &[f64], hv: &[f64]) -> Result<f64> {
    score_grad(kind, hu, hv).map(|(s, _, _)| s)
}

/// Score and its gradients with respect to both embeddings.
/// Cosine against a zero vector scores 0 with zero gradient.
pub fn score_grad(kind: ScoreKind, hu: &[f64], hv: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if hu.len() != hv.len() {
        return Err(Error::arg(format!(
            "embedding dimensions differ: {} vs {}",
            hu.len(),
            hv.len()
        )));
    }
    match kind {
        ScoreKind::Dot => Ok((dot(hu, hv), hv.to_vec(), hu.to_vec())),
        ScoreKind::Cosine => {
            let (nu, nv) = (norm(hu), norm(hv));
            if nu == 0.0 || nv == 0.0 {
                return Ok((0.0, vec![0.0; hu.len()], vec![0.0; hv.len()]));
            }
            let s = dot(hu, hv) / (nu * nv);
            let gu = hu
                .iter()
                .zip(hv)
                .map(|(a, b)| b / (nu * nv) - s * a / (nu * nu))
                .collect();
            let gv = hu
                .iter()
                .zip(hv)
                .map(|(a, b)| a / (nu * nv) - s * b / (nv * nv))
                .collect();
            Ok((s, gu, gv))
        }
    }
}

/// `(L, ∂L/∂s)` for scores `[s⁺, s⁻_1, ..., s⁻_k]`.
pub fn loss_from_scores(kind: LossKind, scores: &[f64]) -> (f64, Vec<f64>) {
    let mut d = vec![0.0; scores.len()];
    match kind {
        LossKind::InfoNce => {
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            let lse = m + z.ln();
            for (di, s) in d.iter_mut().zip(scores) {
                *di = (s - lse).exp();
            }
            d[0] -= 1.0;
            (lse - scores[0], d)
        }
        LossKind::Hinge { margin } => {
            let mut loss = 0.0;
            for j in 1..scores.len() {
                let v = margin - scores[0] + scores[j];
                if v > 0.0 {
                    loss += v;
                    d[j] += 1.0;
                    d[0] -= 1.0;
                }
            }
            (loss, d)
        }
    }
}

fn row(features: &Features, v: NodeId) -> Result<&[f64]> {
    features
        .row(v)
        .ok_or_else(|| Error::arg(format!("node {v} has no feature row")))
}

/// Loss of one tuple and its gradient with respect to every model parameter.
pub fn tuple_loss_grad(
    model: &EncoderModel,
    features: &Features,
    tuple: &EdgeTuple,
    loss: &LossSpec,
) -> Result<(f64, GradVec)> {
    let mut cache: BTreeMap<NodeId, (Vec<f64>, Activations)> = BTreeMap::new();
    for v in tuple.nodes() {
        cache.insert(v, model.encode(row(features, v)?)?);
    }
    let pairs: Vec<(NodeId, NodeId)> = std::iter::once((tuple.positive.u(), tuple.positive.v()))
        .chain(tuple.negatives.iter().map(|n| (n.w, n.x)))
        .collect();
    let mut scores = Vec::with_capacity(pairs.len());
    let mut partials = Vec::with_capacity(pairs.len());
    for &(a, b) in &pairs {
        let (s, ga, gb) = score_grad(loss.score, &cache[&a].0, &cache[&b].0)?;
        scores.push(s);
        partials.push((ga, gb));
    }
    let (value, ds) = loss_from_scores(loss.kind, &scores);

    let mut dh: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
    for ((&(a, b), (ga, gb)), &d) in pairs.iter().zip(&partials).zip(&ds) {
        if d == 0.0 {
            continue;
        }
        for (node, g) in [(a, ga), (b, gb)] {
            let acc = dh.entry(node).or_insert_with(|| vec![0.0; model.out_dim]);
            for (x, y) in acc.iter_mut().zip(g) {
                *x += d * y;
            }
        }
    }
    let mut grad = GradVec::zeros(model.num_params());
    for (node, d) in &dh {
        model.backward(&cache[node].1, d, &mut grad);
    }
    Ok((value, grad))
}

/// Loss of one tuple without gradients.
pub fn tuple_loss(model: &EncoderModel, features: &Features, tuple: &EdgeTuple, loss: &LossSpec) -> Result<f64> {
    let emb = |v: NodeId| -> Result<Vec<f64>> { Ok(model.encode(row(features, v)?)?.0) };
    let mut scores = vec![score(loss.score, &emb(tuple.positive.u())?, &emb(tuple.positive.v())?)?];
    for n in &tuple.negatives {
        scores.push(score(loss.score, &emb(n.w)?, &emb(n.x)?)?);
    }
    Ok(loss_from_scores(loss.kind, &scores).0)
}
