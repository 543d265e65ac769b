//! Link-prediction ranking metrics.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::loss::{score, ScoreKind};
use super::model::EncoderModel;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::sampler::partial_fisher_yates;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankingMetrics {
    pub prec_at_1: f64,
    pub mrr: f64,
    pub edges: usize,
}

/// Ranks each test edge's endpoint `v` among `n_candidates − 1` sampled non-neighbours of `u`.
///
/// Candidates are distinct, drawn uniformly from nodes that are neither `u`
/// nor adjacent to `u` in `test_graph`. A candidate tied with `v` ranks ahead
/// of it when its id is smaller.
pub fn evaluate_ranking(
    model: &EncoderModel,
    test_graph: &Graph,
    n_candidates: usize,
    seed: u64,
    kind: ScoreKind,
) -> Result<RankingMetrics> {
    evaluate_with(test_graph, n_candidates, seed, |a, b| {
        let f = test_graph
            .features()
            .ok_or_else(|| Error::arg("test graph has no features"))?;
        let row = |v: NodeId| {
            f.row(v)
                .ok_or_else(|| Error::arg(format!("node {v} has no feature row")))
        };
        let ha = model.encode(row(a)?)?.0;
        let hb = model.encode(row(b)?)?.0;
        score(kind, &ha, &hb)
    })
}

/// Ranking metrics for an arbitrary scoring function.
pub fn evaluate_with<F>(test_graph: &Graph, n_candidates: usize, seed: u64, mut score_fn: F) -> Result<RankingMetrics>
where
    F: FnMut(NodeId, NodeId) -> Result<f64>,
{
    if n_candidates < 2 {
        return Err(Error::arg(format!(
            "n_candidates must be at least 2, got {n_candidates}"
        )));
    }
    if test_graph.m() == 0 {
        return Err(Error::arg("test graph has no edges"));
    }
    let adj: Vec<HashSet<NodeId>> = test_graph
        .adjacency()
        .into_iter()
        .map(|a| a.into_iter().collect())
        .collect();
    let active = test_graph.active_nodes();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut hits, mut rr) = (0usize, 0.0);
    for e in test_graph.edges() {
        let (u, v) = (e.u(), e.v());
        let pool: Vec<NodeId> = active
            .iter()
            .copied()
            .filter(|&x| x != u && !adj[u].contains(&x))
            .collect();
        if pool.len() < n_candidates - 1 {
            return Err(Error::arg(format!(
                "node {u} has only {} non-neighbours, {} candidates requested",
                pool.len(),
                n_candidates - 1
            )));
        }
        let candidates = partial_fisher_yates(&pool, n_candidates - 1, &mut rng);
        let s_true = score_fn(u, v)?;
        let mut rank = 1usize;
        for c in candidates {
            let s = score_fn(u, c)?;
            if s > s_true || (s == s_true && c < v) {
                rank += 1;
            }
        }
        if rank == 1 {
            hits += 1;
        }
        rr += 1.0 / rank as f64;
    }
    let m = test_graph.m();
    Ok(RankingMetrics {
        prec_at_1: hits as f64 / m as f64,
        mrr: rr / m as f64,
        edges: m,
    })
}
