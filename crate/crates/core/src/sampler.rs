//! Coupled mini-batch sampling: Poisson positives, then negatives drawn without replacement.
//!
//! RNG contract for one batch drawn from a single stream:
//! 1. one `f64` per edge in stored edge order (`x < gamma` keeps the edge);
//! 2. `b * k_neg` partial Fisher–Yates draws over the ascending list of active nodes;
//! 3. one `bool` per negative slot in tuple-major order choosing the anchor endpoint
//!    (`false` picks the smaller endpoint).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Edge, NodeId};

/// Maximum number of neighbouring batches enumerated by default.
pub const DEFAULT_NEIGHBOR_CAP: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub gamma: f64,
    pub k_neg: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::arg(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.k_neg == 0 {
            return Err(Error::arg("k_neg must be at least 1"));
        }
        Ok(())
    }
}

/// Negative edge `(w, x)`: `w` is an endpoint of the tuple's positive edge, `x` a sampled node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NegEdge {
    pub w: NodeId,
    pub x: NodeId,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EdgeTuple {
    pub positive: Edge,
    pub negatives: Vec<NegEdge>,
}

impl EdgeTuple {
    pub fn in_positive(&self, v: NodeId) -> bool {
        self.positive.contains(v)
    }

    pub fn in_negatives(&self, v: NodeId) -> bool {
        self.negatives.iter().any(|n| n.w == v || n.x == v)
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.in_positive(v) || self.in_negatives(v)
    }

    /// Distinct nodes touched by the tuple, ascending.
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self.positive.endpoints().to_vec();
        for n in &self.negatives {
            out.push(n.w);
            out.push(n.x);
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MiniBatch {
    pub tuples: Vec<EdgeTuple>,
    /// Number of tuples each node appears in, counting a tuple once.
    pub occurrence: BTreeMap<NodeId, usize>,
    pub sampled_negative_nodes: Vec<NodeId>,
}

impl MiniBatch {
    pub fn new(tuples: Vec<EdgeTuple>, sampled_negative_nodes: Vec<NodeId>) -> Self {
        let mut occurrence = BTreeMap::new();
        for t in &tuples {
            for v in t.nodes() {
                *occurrence.entry(v).or_insert(0) += 1;
            }
        }
        MiniBatch {
            tuples,
            occurrence,
            sampled_negative_nodes,
        }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new())
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn occurrence(&self, v: NodeId) -> usize {
        self.occurrence.get(&v).copied().unwrap_or(0)
    }

    /// Largest occurrence count over the nodes of tuple `i`.
    pub fn max_freq(&self, i: usize) -> usize {
        self.tuples[i]
            .nodes()
            .into_iter()
            .map(|v| self.occurrence(v))
            .max()
            .unwrap_or(0)
    }

    /// Text dump, one tuple per line: `+u,v | -w,x -w,x`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for t in &self.tuples {
            let _ = write!(out, "+{} |", t.positive);
            for n in &t.negatives {
                let _ = write!(out, " -{},{}", n.w, n.x);
            }
            out.push('\n');
        }
        out
    }
}

/// Keeps each edge independently with probability `gamma`, one uniform draw per edge.
pub fn poisson_positive<R: Rng + ?Sized>(edges: &[Edge], gamma: f64, rng: &mut R) -> Vec<Edge> {
    edges.iter().filter(|_| rng.random::<f64>() < gamma).copied().collect()
}

/// First `count` entries of a uniform random permutation of `pool`.
///
/// Sparse partial Fisher–Yates: draw `i` picks uniformly from positions `i..len`.
/// Equivalent to shuffling a copy of `pool` in place without the O(len) copy.
pub fn partial_fisher_yates<R: Rng + ?Sized>(pool: &[NodeId], count: usize, rng: &mut R) -> Vec<NodeId> {
    debug_assert!(count <= pool.len());
    let mut moved: HashMap<usize, usize> = HashMap::with_capacity(2 * count);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let j = rng.random_range(i..pool.len());
        let at_j = moved.get(&j).copied().unwrap_or(j);
        let at_i = moved.get(&i).copied().unwrap_or(i);
        moved.insert(j, at_i);
        out.push(pool[at_j]);
    }
    out
}

/// Builds a mini-batch around `positives` with `k_neg` negatives each.
///
/// All `b * k_neg` negative nodes are distinct, so every node is in the
/// negatives of at most one tuple.
pub fn neg_sample_wor<R: Rng + ?Sized>(
    positives: &[Edge],
    k_neg: usize,
    active_nodes: &[NodeId],
    rng: &mut R,
) -> Result<MiniBatch> {
    if k_neg == 0 {
        return Err(Error::arg("k_neg must be at least 1"));
    }
    let needed = positives.len().saturating_mul(k_neg);
    if needed > active_nodes.len() {
        return Err(Error::Capacity {
            needed,
            available: active_nodes.len(),
        });
    }
    let sampled = partial_fisher_yates(active_nodes, needed, rng);
    let mut tuples = Vec::with_capacity(positives.len());
    for (i, &pos) in positives.iter().enumerate() {
        let negatives = sampled[i * k_neg..(i + 1) * k_neg]
            .iter()
            .map(|&x| {
                let w = if rng.random::<bool>() { pos.v() } else { pos.u() };
                NegEdge { w, x }
            })
            .collect();
        tuples.push(EdgeTuple {
            positive: pos,
            negatives,
        });
    }
    Ok(MiniBatch::new(tuples, sampled))
}

/// One full draw: Poisson positives followed by negative sampling, on one stream.
pub fn sample_batch<R: Rng + ?Sized>(
    edges: &[Edge],
    active_nodes: &[NodeId],
    gamma: f64,
    k_neg: usize,
    rng: &mut R,
) -> Result<MiniBatch> {
    let positives = poisson_positive(edges, gamma, rng);
    neg_sample_wor(&positives, k_neg, active_nodes, rng)
}

/// Tuple indices split by how they involve a node.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Partition {
    /// Node is an endpoint of the positive edge.
    pub plus: Vec<usize>,
    /// Node is absent from the positive edge but appears in a negative.
    pub minus: Vec<usize>,
    pub zero: Vec<usize>,
}

pub fn partition_by_node(batch: &MiniBatch, u: NodeId) -> Partition {
    let mut p = Partition::default();
    for (i, t) in batch.tuples.iter().enumerate() {
        if t.in_positive(u) {
            p.plus.push(i);
        } else if t.in_negatives(u) {
            p.minus.push(i);
        } else {
            p.zero.push(i);
        }
    }
    p
}

/// All batches neighbouring `batch` under removal of `u_star`.
///
/// Tuples with `u_star` in the positive edge are dropped. Every occurrence of
/// `u_star` in a remaining tuple's negatives is replaced by each candidate
/// node: active, not `u_star`, and not a negative node of any remaining tuple.
/// Replacements at different sites are distinct, keeping the result a valid
/// without-replacement draw.
pub fn neighboring_batches(
    batch: &MiniBatch,
    u_star: NodeId,
    active_nodes: &[NodeId],
    cap: usize,
) -> Result<Vec<MiniBatch>> {
    let part = partition_by_node(batch, u_star);
    if part.plus.is_empty() && part.minus.is_empty() {
        return Ok(vec![batch.clone()]);
    }
    let kept: Vec<EdgeTuple> = batch
        .tuples
        .iter()
        .filter(|t| !t.in_positive(u_star))
        .cloned()
        .collect();

    let mut sites = Vec::new();
    let mut taken = HashSet::new();
    for (ti, t) in kept.iter().enumerate() {
        for (si, n) in t.negatives.iter().enumerate() {
            if n.x == u_star {
                sites.push((ti, si));
            } else {
                taken.insert(n.x);
            }
        }
    }
    let candidates: Vec<NodeId> = active_nodes
        .iter()
        .copied()
        .filter(|&v| v != u_star && !taken.contains(&v))
        .collect();

    if candidates.len() < sites.len() {
        // no without-replacement refill exists
        return Ok(Vec::new());
    }
    let mut total: u128 = 1;
    for _ in &sites {
        total = total.saturating_mul(candidates.len() as u128);
    }
    if total > cap as u128 {
        return Err(Error::Budget {
            required: total,
            limit: cap as u128,
        });
    }

    let mut out = Vec::new();
    let mut choice = vec![0usize; sites.len()];
    loop {
        let distinct = {
            let mut seen = HashSet::new();
            choice.iter().all(|&c| seen.insert(c))
        };
        if distinct {
            let mut tuples = kept.clone();
            for (&(ti, si), &c) in sites.iter().zip(&choice) {
                tuples[ti].negatives[si].x = candidates[c];
            }
            let sampled = tuples.iter().flat_map(|t| t.negatives.iter().map(|n| n.x)).collect();
            out.push(MiniBatch::new(tuples, sampled));
        }
        // odometer increment over the Cartesian product
        let mut pos = 0;
        loop {
            if pos == choice.len() {
                return Ok(out);
            }
            choice[pos] += 1;
            if choice[pos] < candidates.len() {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}
