//! Brute-force verifiers: batch sensitivity under clipping, Monte Carlo and
//! trapezoid estimates of Ψ, and finite-difference gradients.
//!
//! The sensitivity checker rebuilds batches, occurrence counts, thresholds,
//! clipping and norms on its own; it only borrows the sampler to draw batches.
//! The library's clipping and neighbour construction run alongside and any
//! disagreement with the rebuilt values is reported as a mismatch.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::clip::{ClipConfig, ClipMode, GradVec};
use crate::error::{Error, Result};
use crate::graph::{Edge, Features, Graph, NodeId};
use crate::kv::KvDoc;
use crate::sampler::{neighboring_batches, sample_batch, EdgeTuple, MiniBatch, NegEdge};
use crate::trainer::{tuple_loss, tuple_loss_grad, EncoderModel, LossSpec};

/// Default cap on neighbouring batches examined in one run.
pub const DEFAULT_CASE_BUDGET: u64 = 1_000_000;

/// Graphs up to this many nodes get exhaustive batch enumeration.
pub const EXHAUSTIVE_MAX_NODES: usize = 6;

/// Seeded batch draws used when enumeration is not exhaustive.
const SEEDED_DRAWS: usize = 1000;

const REL_TOL: f64 = 1e-12;

/// Clipped batch sum under test: `(batch, grads, mode, c)`.
pub type ClipImpl<'a> = &'a dyn Fn(&MiniBatch, &[GradVec], ClipMode, f64) -> Result<GradVec>;

fn library_clip(batch: &MiniBatch, grads: &[GradVec], mode: ClipMode, c: f64) -> Result<GradVec> {
    ClipConfig { c, mode }.apply(batch, grads)
}

/// Where per-tuple gradients come from.
#[derive(Clone, Copy, Debug)]
pub enum GradSource<'a> {
    /// Backpropagation through a real encoder and loss.
    Model {
        model: &'a EncoderModel,
        features: &'a Features,
        loss: LossSpec,
    },
    /// Collinear gradients of norm `4c`: `+e` for tuples touching the removed
    /// node and `−e` otherwise. Saturates every threshold.
    Adversarial,
    /// `trials` seeded draws of (batch, gradient table); Gaussian directions
    /// with log-uniform norms in `[c/10, 10c]`.
    Random { trials: usize },
}

impl GradSource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            GradSource::Model { .. } => "model",
            GradSource::Adversarial => "adversarial",
            GradSource::Random { .. } => "random",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensitivityOptions {
    pub k_neg: usize,
    /// Maximum number of (batch, removal, neighbour) cases.
    pub budget: u64,
    /// Gradient dimension for the synthetic sources.
    pub dim: usize,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        SensitivityOptions {
            k_neg: 1,
            budget: DEFAULT_CASE_BUDGET,
            dim: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityReport {
    pub mode: ClipMode,
    pub source: String,
    /// Worst `‖ḡ(B) − ḡ(B′)‖ / bound`; the bound is `c` (adaptive) or
    /// `(|B₊| + 2|B₋|)·c` (standard).
    pub max_ratio: f64,
    pub violations: u64,
    /// Adaptive only: worst ratio against `(1 + |B₋|)·c/2`.
    pub max_local_ratio: f64,
    pub local_violations: u64,
    pub cases_checked: u64,
    pub batches_checked: u64,
    /// Seeded draws skipped because the sampler ran out of negative nodes.
    pub skipped_draws: u64,
    pub worst_case: Option<String>,
    /// Cases where the library's clipped sums or neighbour sets differ from the rebuilt ones.
    pub mismatches: u64,
    /// Worst ratio seen through the library's clipping route.
    pub max_library_ratio: f64,
    /// Mismatch with the largest library ratio (first one if none carries a ratio).
    pub mismatch_witness: Option<String>,
    mismatch_rank: f64,
}

impl SensitivityReport {
    fn new(mode: ClipMode, source: &str) -> Self {
        SensitivityReport {
            mode,
            source: source.to_string(),
            max_ratio: 0.0,
            violations: 0,
            max_local_ratio: 0.0,
            local_violations: 0,
            cases_checked: 0,
            batches_checked: 0,
            skipped_draws: 0,
            worst_case: None,
            mismatches: 0,
            max_library_ratio: 0.0,
            mismatch_witness: None,
            mismatch_rank: f64::NEG_INFINITY,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.mismatches == 0
    }

    /// Folds `other` into `self`, keeping the worst witness.
    pub fn merge(&mut self, other: SensitivityReport) {
        if other.max_ratio > self.max_ratio {
            self.max_ratio = other.max_ratio;
            self.worst_case = other.worst_case;
        }
        self.max_local_ratio = self.max_local_ratio.max(other.max_local_ratio);
        self.violations += other.violations;
        self.local_violations += other.local_violations;
        self.cases_checked += other.cases_checked;
        self.batches_checked += other.batches_checked;
        self.skipped_draws += other.skipped_draws;
        if other.mismatch_witness.is_some()
            && (self.mismatch_witness.is_none() || other.mismatch_rank > self.mismatch_rank)
        {
            self.mismatch_witness = other.mismatch_witness;
            self.mismatch_rank = other.mismatch_rank;
        }
        self.mismatches += other.mismatches;
        self.max_library_ratio = self.max_library_ratio.max(other.max_library_ratio);
    }

    /// `key = value` summary; the witness goes to [`SensitivityReport::witness`].
    pub fn to_kv(&self) -> KvDoc {
        let mut kv = KvDoc::new();
        kv.push(
            "mode",
            match self.mode {
                ClipMode::Adaptive => "adaptive",
                ClipMode::Standard => "standard",
            },
        )
        .push("source", &self.source)
        .push("max_ratio", format!("{:?}", self.max_ratio))
        .push("violations", self.violations);
        if self.mode == ClipMode::Adaptive {
            kv.push("max_local_ratio", format!("{:?}", self.max_local_ratio))
                .push("local_violations", self.local_violations);
        }
        kv.push("cases_checked", self.cases_checked)
            .push("batches_checked", self.batches_checked)
            .push("skipped_draws", self.skipped_draws)
            .push("mismatches", self.mismatches)
            .push("max_library_ratio", format!("{:?}", self.max_library_ratio));
        kv
    }

    /// Worst case found, preceded by the worst mismatch if there was one.
    pub fn witness(&self) -> String {
        let mut out = String::new();
        if let Some(m) = &self.mismatch_witness {
            out.push_str("# library mismatch\n");
            out.push_str(m);
        }
        if let Some(w) = &self.worst_case {
            out.push_str("# worst case\n");
            out.push_str(w);
        }
        out
    }
}

fn tuple_nodes(t: &EdgeTuple) -> BTreeSet<NodeId> {
    let mut s = BTreeSet::new();
    s.insert(t.positive.u());
    s.insert(t.positive.v());
    for n in &t.negatives {
        s.insert(n.w);
        s.insert(n.x);
    }
    s
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Clipped sum of a batch, recomputed from scratch.
fn clipped_batch_sum(tuples: &[EdgeTuple], grads: &[Vec<f64>], mode: ClipMode, c: f64, dim: usize) -> Vec<f64> {
    let sets: Vec<BTreeSet<NodeId>> = tuples.iter().map(tuple_nodes).collect();
    let mut count = std::collections::HashMap::new();
    for s in &sets {
        for &v in s {
            *count.entry(v).or_insert(0usize) += 1;
        }
    }
    let mut sum = vec![0.0; dim];
    for (s, g) in sets.iter().zip(grads) {
        let thr = match mode {
            ClipMode::Standard => c,
            ClipMode::Adaptive => {
                let f = s.iter().map(|v| count[v]).max().unwrap_or(1);
                c / (2 * f) as f64
            }
        };
        let n = norm(g);
        let scale = if n > thr { thr / n } else { 1.0 };
        for (a, b) in sum.iter_mut().zip(g) {
            *a += b * scale;
        }
    }
    sum
}

fn dump(tuples: &[EdgeTuple]) -> String {
    let mut out = String::new();
    for t in tuples {
        let _ = write!(out, "  +{},{} |", t.positive.u(), t.positive.v());
        for n in &t.negatives {
            let _ = write!(out, " -{},{}", n.w, n.x);
        }
        out.push('\n');
    }
    out
}

/// Neighbouring batches for removal of `u_star`, rebuilt independently.
fn neighbours(tuples: &[EdgeTuple], u_star: NodeId, active: &[NodeId]) -> Vec<Vec<EdgeTuple>> {
    let kept: Vec<EdgeTuple> = tuples
        .iter()
        .filter(|t| t.positive.u() != u_star && t.positive.v() != u_star)
        .cloned()
        .collect();
    let mut sites = Vec::new();
    let mut taken = BTreeSet::new();
    for (ti, t) in kept.iter().enumerate() {
        for (si, n) in t.negatives.iter().enumerate() {
            if n.x == u_star {
                sites.push((ti, si));
            } else {
                taken.insert(n.x);
            }
        }
    }
    let pool: Vec<NodeId> = active
        .iter()
        .copied()
        .filter(|&v| v != u_star && !taken.contains(&v))
        .collect();
    let mut out = Vec::new();
    let mut chosen = Vec::with_capacity(sites.len());
    fill_sites(&kept, &sites, &pool, &mut chosen, &mut out);
    out
}

fn fill_sites(
    kept: &[EdgeTuple],
    sites: &[(usize, usize)],
    pool: &[NodeId],
    chosen: &mut Vec<NodeId>,
    out: &mut Vec<Vec<EdgeTuple>>,
) {
    if chosen.len() == sites.len() {
        let mut b = kept.to_vec();
        for (&(ti, si), &x) in sites.iter().zip(chosen.iter()) {
            b[ti].negatives[si].x = x;
        }
        out.push(b);
        return;
    }
    for &x in pool {
        if !chosen.contains(&x) {
            chosen.push(x);
            fill_sites(kept, sites, pool, chosen, out);
            chosen.pop();
        }
    }
}

/// Stable 64-bit mix of a tuple and a seed.
fn tuple_key(seed: u64, t: &EdgeTuple) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    let mut eat = |x: u64| {
        h ^= x;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
        h ^= h >> 29;
    };
    eat(t.positive.u() as u64);
    eat(t.positive.v() as u64);
    for n in &t.negatives {
        eat(n.w as u64 + 1);
        eat(n.x as u64 + 1);
    }
    h
}

struct Checker<'a> {
    mode: ClipMode,
    c: f64,
    source: GradSource<'a>,
    dim: usize,
    budget: u64,
    clip_impl: ClipImpl<'a>,
    report: SensitivityReport,
}

fn to_minibatch(tuples: &[EdgeTuple]) -> MiniBatch {
    let xs = tuples.iter().flat_map(|t| t.negatives.iter().map(|n| n.x)).collect();
    MiniBatch::new(tuples.to_vec(), xs)
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs())))
}

impl Checker<'_> {
    fn grad(&self, t: &EdgeTuple, u_star: NodeId, table_seed: u64) -> Result<Vec<f64>> {
        match self.source {
            GradSource::Model { model, features, loss } => Ok(tuple_loss_grad(model, features, t, &loss)?.1 .0),
            GradSource::Adversarial => {
                let s = if tuple_nodes(t).contains(&u_star) { 4.0 } else { -4.0 };
                let mut g = vec![0.0; self.dim];
                g[0] = s * self.c;
                Ok(g)
            }
            GradSource::Random { .. } => {
                let mut rng = ChaCha20Rng::seed_from_u64(tuple_key(table_seed, t));
                let mut g: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = norm(&g).max(1e-300);
                let target = self.c * 10f64.powf(rng.random_range(-1.0..1.0));
                for x in &mut g {
                    *x *= target / n;
                }
                Ok(g)
            }
        }
    }

    fn grads(&self, tuples: &[EdgeTuple], u_star: NodeId, table_seed: u64) -> Result<Vec<Vec<f64>>> {
        tuples.iter().map(|t| self.grad(t, u_star, table_seed)).collect()
    }

    fn library_sum(&self, tuples: &[EdgeTuple], grads: &[Vec<f64>]) -> Result<Vec<f64>> {
        if tuples.is_empty() {
            return Ok(vec![0.0; self.dim]);
        }
        let g: Vec<GradVec> = grads.iter().map(|x| GradVec(x.clone())).collect();
        Ok((self.clip_impl)(&to_minibatch(tuples), &g, self.mode, self.c)?.0)
    }

    fn mismatch(&mut self, witness: String, rank: f64) {
        let r = &mut self.report;
        r.mismatches += 1;
        if r.mismatch_witness.is_none() || rank > r.mismatch_rank {
            r.mismatch_witness = Some(witness);
            r.mismatch_rank = rank;
        }
    }

    fn compare_neighbours(
        &mut self,
        tuples: &[EdgeTuple],
        u_star: NodeId,
        active: &[NodeId],
        rebuilt: &[Vec<EdgeTuple>],
    ) -> Result<()> {
        let lib = neighboring_batches(&to_minibatch(tuples), u_star, active, self.budget as usize)?;
        let a: std::collections::HashSet<&Vec<EdgeTuple>> = rebuilt.iter().collect();
        let b: std::collections::HashSet<&Vec<EdgeTuple>> = lib.iter().map(|m| &m.tuples).collect();
        if a != b || lib.len() != rebuilt.len() {
            self.mismatch(
                format!(
                    "u_star = {u_star}\nlibrary_neighbours = {}\nrebuilt_neighbours = {}\nbatch:\n{}",
                    lib.len(),
                    rebuilt.len(),
                    dump(tuples)
                ),
                f64::NEG_INFINITY,
            );
        }
        Ok(())
    }

    fn check_batch(&mut self, tuples: &[EdgeTuple], active: &[NodeId], table_seed: u64) -> Result<()> {
        self.report.batches_checked += 1;
        let present: BTreeSet<NodeId> = tuples.iter().flat_map(tuple_nodes).collect();
        for &u_star in active {
            let plus = tuples
                .iter()
                .filter(|t| t.positive.u() == u_star || t.positive.v() == u_star)
                .count();
            let minus = tuples
                .iter()
                .filter(|t| {
                    t.positive.u() != u_star
                        && t.positive.v() != u_star
                        && t.negatives.iter().any(|n| n.x == u_star || n.w == u_star)
                })
                .count();
            let g_b = self.grads(tuples, u_star, table_seed)?;
            let sum_b = clipped_batch_sum(tuples, &g_b, self.mode, self.c, self.dim);
            let lib_b = self.library_sum(tuples, &g_b)?;
            let rebuilt = neighbours(tuples, u_star, active);
            self.compare_neighbours(tuples, u_star, active, &rebuilt)?;
            for nb in rebuilt {
                self.report.cases_checked += 1;
                if self.report.cases_checked > self.budget {
                    return Err(Error::Budget {
                        required: self.report.cases_checked as u128,
                        limit: self.budget as u128,
                    });
                }
                let g_nb = self.grads(&nb, u_star, table_seed)?;
                let sum_nb = clipped_batch_sum(&nb, &g_nb, self.mode, self.c, self.dim);
                let diff: Vec<f64> = sum_b.iter().zip(&sum_nb).map(|(a, b)| a - b).collect();
                let d = norm(&diff);
                let lib_nb = self.library_sum(&nb, &g_nb)?;
                let lib_d = norm(&lib_b.iter().zip(&lib_nb).map(|(a, b)| a - b).collect::<Vec<_>>());
                let (bound, local) = match self.mode {
                    ClipMode::Standard => {
                        let b = (plus + 2 * minus) as f64 * self.c;
                        (b, b)
                    }
                    ClipMode::Adaptive => {
                        let local = if present.contains(&u_star) {
                            (1 + minus) as f64 * self.c / 2.0
                        } else {
                            0.0
                        };
                        (self.c, local)
                    }
                };
                let ratio = ratio_of(d, bound);
                let local_ratio = ratio_of(d, local);
                let lib_ratio = ratio_of(lib_d, bound);
                self.report.max_library_ratio = self.report.max_library_ratio.max(lib_ratio);
                if !close(&lib_b, &sum_b) || !close(&lib_nb, &sum_nb) {
                    self.mismatch(
                        format!(
                            "u_star = {u_star}\nlibrary_diff_norm = {lib_d:?}\nrebuilt_diff_norm = {d:?}\nbound = {bound:?}\nbatch:\n{}neighbour:\n{}",
                            dump(tuples),
                            dump(&nb)
                        ),
                        lib_ratio,
                    );
                }
                if ratio > 1.0 + REL_TOL {
                    self.report.violations += 1;
                }
                if local_ratio > 1.0 + REL_TOL {
                    self.report.local_violations += 1;
                }
                self.report.max_local_ratio = self.report.max_local_ratio.max(local_ratio);
                if ratio > self.report.max_ratio || self.report.worst_case.is_none() {
                    self.report.max_ratio = self.report.max_ratio.max(ratio);
                    self.report.worst_case = Some(format!(
                        "u_star = {u_star}\nplus = {plus}\nminus = {minus}\ndiff_norm = {d:?}\nbound = {bound:?}\nbatch:\n{}neighbour:\n{}",
                        dump(tuples),
                        dump(&nb)
                    ));
                }
            }
        }
        Ok(())
    }
}

fn ratio_of(d: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        d / bound
    } else if d <= 1e-15 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Calls `f` on every batch the sampler can produce on `edges` with `k_neg`
/// negatives per tuple. With `with_bits` false the anchor endpoint is fixed to
/// the smaller endpoint; node sets and thus thresholds do not depend on it.
pub fn for_each_batch<F>(edges: &[Edge], active: &[NodeId], k_neg: usize, with_bits: bool, mut f: F) -> Result<()>
where
    F: FnMut(&[EdgeTuple]) -> Result<()>,
{
    let m = edges.len();
    if m > 20 {
        return Err(Error::Budget {
            required: 1u128 << m,
            limit: 1 << 20,
        });
    }
    for mask in 0u32..(1u32 << m) {
        let pos: Vec<Edge> = (0..m).filter(|i| mask >> i & 1 == 1).map(|i| edges[i]).collect();
        let slots = pos.len() * k_neg;
        if slots > active.len() {
            continue;
        }
        let mut seq = Vec::with_capacity(slots);
        let mut err = None;
        injective(active, slots, &mut seq, &mut |xs: &[NodeId]| {
            if err.is_some() {
                return;
            }
            let bit_patterns: u64 = if with_bits { 1u64 << slots } else { 1 };
            for bits in 0..bit_patterns {
                let tuples: Vec<EdgeTuple> = pos
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| EdgeTuple {
                        positive: e,
                        negatives: (0..k_neg)
                            .map(|j| {
                                let s = i * k_neg + j;
                                let w = if bits >> s & 1 == 1 { e.v() } else { e.u() };
                                NegEdge { w, x: xs[s] }
                            })
                            .collect(),
                    })
                    .collect();
                if let Err(e) = f(&tuples) {
                    err = Some(e);
                    return;
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(())
}

fn injective(pool: &[NodeId], len: usize, seq: &mut Vec<NodeId>, f: &mut dyn FnMut(&[NodeId])) {
    if seq.len() == len {
        f(seq);
        return;
    }
    for &x in pool {
        if !seq.contains(&x) {
            seq.push(x);
            injective(pool, len, seq, f);
            seq.pop();
        }
    }
}

/// Checks `‖ḡ(B) − ḡ(B′)‖` against the clipping mode's bound over batches,
/// removal nodes and every neighbouring batch.
///
/// Model and adversarial sources enumerate all batches when the graph has at
/// most [`EXHAUSTIVE_MAX_NODES`] active nodes, and draw seeded batches
/// otherwise. The random source draws `trials` seeded batches.
pub fn check_sensitivity(
    graph: &Graph,
    mode: ClipMode,
    c: f64,
    source: GradSource,
    seed: u64,
    opts: &SensitivityOptions,
) -> Result<SensitivityReport> {
    check_sensitivity_with(graph, mode, c, source, seed, opts, &library_clip)
}

/// [`check_sensitivity`] against a caller-supplied clipping routine.
pub fn check_sensitivity_with(
    graph: &Graph,
    mode: ClipMode,
    c: f64,
    source: GradSource,
    seed: u64,
    opts: &SensitivityOptions,
    clip_impl: ClipImpl,
) -> Result<SensitivityReport> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::arg(format!(
            "clipping bound must be positive and finite, got {c}"
        )));
    }
    if opts.k_neg == 0 || opts.dim == 0 {
        return Err(Error::arg("k_neg and dim must be positive"));
    }
    let dim = match source {
        GradSource::Model { model, .. } => model.num_params(),
        _ => opts.dim,
    };
    let mut checker = Checker {
        mode,
        c,
        source,
        dim,
        budget: opts.budget,
        clip_impl,
        report: SensitivityReport::new(mode, source.name()),
    };
    let active = graph.active_nodes();
    let draws = match source {
        GradSource::Random { trials } => Some(trials),
        _ if active.len() > EXHAUSTIVE_MAX_NODES => Some(SEEDED_DRAWS),
        _ => None,
    };
    match draws {
        None => {
            let with_bits = matches!(source, GradSource::Model { .. });
            for_each_batch(graph.edges(), &active, opts.k_neg, with_bits, |b| {
                checker.check_batch(b, &active, seed)
            })?;
        }
        Some(draws) => {
            let m = graph.m().max(1) as f64;
            let gamma_max = (active.len() as f64 / (opts.k_neg as f64 * m)).min(1.0);
            for t in 0..draws {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                rng.set_stream(t as u64 + 1);
                let gamma = gamma_max * rng.random_range(0.05..=1.0);
                match sample_batch(graph.edges(), &active, gamma, opts.k_neg, &mut rng) {
                    Ok(batch) => {
                        let table_seed = seed ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
                        checker.check_batch(&batch.tuples, &active, table_seed)?;
                    }
                    Err(Error::Capacity { .. }) => checker.report.skipped_draws += 1,
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(checker.report)
}

/// Non-isomorphic graphs with at least one edge on exactly `n` nodes.
pub fn small_graphs(n: usize) -> Result<Vec<Graph>> {
    if n > 6 {
        return Err(Error::arg(format!("small_graphs supports n <= 6, got {n}")));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let index = |a: usize, b: usize| {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        pairs.iter().position(|&p| p == (a, b)).expect("pair")
    };
    let mut perms = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    permutations(&mut p, 0, &mut perms);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for mask in 1u32..(1u32 << pairs.len()) {
        let canon = perms
            .iter()
            .map(|pi| {
                pairs.iter().enumerate().fold(0u32, |acc, (i, &(a, b))| {
                    if mask >> i & 1 == 1 {
                        acc | 1 << index(pi[a], pi[b])
                    } else {
                        acc
                    }
                })
            })
            .min()
            .expect("at least one permutation");
        if seen.insert(canon) {
            let chosen: Vec<(usize, usize)> = pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| canon >> i & 1 == 1)
                .map(|(_, &p)| p)
                .collect();
            out.push(Graph::from_pairs(n, &chosen)?);
        }
    }
    Ok(out)
}

fn permutations(p: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == p.len() {
        out.push(p.clone());
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permutations(p, k + 1, out);
        p.swap(k, i);
    }
}

/// Runs [`check_sensitivity`] over every non-isomorphic graph on `2..=max_nodes`
/// nodes and each `k_neg` in `k_negs`, merging the reports.
pub fn check_small_graphs(
    max_nodes: usize,
    k_negs: &[usize],
    mode: ClipMode,
    c: f64,
    source: GradSource,
    seed: u64,
    budget: u64,
) -> Result<SensitivityReport> {
    let mut total = SensitivityReport::new(mode, source.name());
    for n in 2..=max_nodes {
        for g in small_graphs(n)? {
            for &k in k_negs {
                let opts = SensitivityOptions {
                    k_neg: k,
                    budget: budget.saturating_sub(total.cases_checked),
                    ..SensitivityOptions::default()
                };
                total.merge(check_sensitivity(&g, mode, c, source, seed, &opts)?);
            }
        }
    }
    Ok(total)
}

/// Monte Carlo estimate of `E_{x∼N(0,σ²)}[((1−q) + q·e^{(2x−1)/(2σ²)})^α]`
/// with its standard error.
pub fn mc_psi(q: f64, sigma: f64, alpha: f64, samples: usize, seed: u64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::arg(format!("q must lie in [0, 1], got {q}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) || !alpha.is_finite() {
        return Err(Error::arg("sigma must be positive and alpha finite"));
    }
    if samples < 10_000 {
        return Err(Error::arg(format!("mc_psi needs at least 10^4 samples, got {samples}")));
    }
    if q == 0.0 {
        return Ok((1.0, 0.0));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::arg(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let s2 = 2.0 * sigma * sigma;
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 0..samples {
        let x = normal.sample(&mut rng);
        let y = ((1.0 - q) + q * ((2.0 * x - 1.0) / s2).exp()).powf(alpha);
        if !y.is_finite() {
            return Err(Error::numeric(format!(
                "Monte Carlo term overflowed at alpha={alpha}, sigma={sigma}; use the closed form"
            )));
        }
        let delta = y - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (y - mean);
    }
    let var = m2 / (samples - 1) as f64;
    Ok((mean, (var / samples as f64).sqrt()))
}

/// `ln Ψ` for the two-point mixture by a plain trapezoid rule in log space on a
/// fixed grid wide enough to contain the integrand's mass.
pub fn trapezoid_ln_psi(q: f64, sigma: f64, alpha: f64, points: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) || !(sigma > 0.0) || points < 16 {
        return Err(Error::arg("trapezoid_ln_psi needs q in [0,1], sigma > 0, points >= 16"));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    let s2 = sigma * sigma;
    let lo = -40.0 * sigma - alpha.abs() - 1.0;
    let hi = 40.0 * sigma + alpha.abs() + 1.0;
    let h = (hi - lo) / (points - 1) as f64;
    let ln_norm = -0.5 * (2.0 * std::f64::consts::PI * s2).ln();
    let terms: Vec<f64> = (0..points)
        .map(|i| {
            let x = lo + h * i as f64;
            let t = (2.0 * x - 1.0) / (2.0 * s2);
            // ln((1−q) + q·e^t) without overflow
            let ln_ratio = if q == 1.0 {
                t
            } else {
                let a = (1.0 - q).ln();
                let b = q.ln() + t;
                let m = a.max(b);
                m + ((a - m).exp() + (b - m).exp()).ln()
            };
            let w = if i == 0 || i == points - 1 { 0.5f64.ln() } else { 0.0 };
            ln_norm - x * x / (2.0 * s2) + alpha * ln_ratio + w
        })
        .collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terms.iter().map(|t| (t - m).exp()).sum();
    Ok(m + s.ln() + h.ln())
}

/// Central finite differences of [`tuple_loss`] in every parameter.
pub fn fd_gradient(
    model: &EncoderModel,
    features: &Features,
    tuple: &EdgeTuple,
    loss: &LossSpec,
    step: f64,
) -> Result<GradVec> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::arg(format!(
            "finite-difference step must lie in [1e-7, 1e-3], got {step}"
        )));
    }
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(model.weights.len());
    for i in 0..model.weights.len() {
        let w = model.weights[i];
        probe.weights[i] = w + step;
        let up = tuple_loss(&probe, features, tuple, loss)?;
        probe.weights[i] = w - step;
        let down = tuple_loss(&probe, features, tuple, loss)?;
        probe.weights[i] = w;
        out.push((up - down) / (2.0 * step));
    }
    Ok(GradVec(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::EncoderKind;

    fn one_edge() -> Graph {
        Graph::from_pairs(3, &[(0, 1)]).unwrap()
    }

    #[test]
    fn absent_node_gives_identical_neighbour() {
        let t = EdgeTuple {
            positive: Edge::new(0, 1).unwrap(),
            negatives: vec![NegEdge { w: 0, x: 1 }],
        };
        let nb = neighbours(std::slice::from_ref(&t), 2, &[0, 1, 2]);
        assert_eq!(nb, vec![vec![t]]);
    }

    #[test]
    fn replacement_excludes_taken_nodes() {
        let t1 = EdgeTuple {
            positive: Edge::new(0, 1).unwrap(),
            negatives: vec![NegEdge { w: 0, x: 3 }],
        };
        let t2 = EdgeTuple {
            positive: Edge::new(1, 2).unwrap(),
            negatives: vec![NegEdge { w: 1, x: 0 }],
        };
        let nb = neighbours(&[t1, t2], 3, &[0, 1, 2, 3, 4]);
        let xs: Vec<NodeId> = nb.iter().map(|b| b[0].negatives[0].x).collect();
        assert_eq!(xs, vec![1, 2, 4]);
    }

    #[test]
    fn counts_graphs() {
        let counts: Vec<usize> = (2..=5).map(|n| small_graphs(n).unwrap().len()).collect();
        // non-isomorphic graphs minus the empty one
        assert_eq!(counts, vec![1, 3, 10, 33]);
    }

    #[test]
    fn one_edge_graph_passes() {
        for mode in [ClipMode::Adaptive, ClipMode::Standard] {
            let r = check_sensitivity(
                &one_edge(),
                mode,
                1.0,
                GradSource::Adversarial,
                0,
                &SensitivityOptions::default(),
            )
            .unwrap();
            assert_eq!(r.violations, 0);
            assert!(r.cases_checked > 0);
        }
    }

    #[test]
    fn adversarial_standard_is_tight() {
        let r = check_sensitivity(
            &one_edge(),
            ClipMode::Standard,
            1.0,
            GradSource::Adversarial,
            0,
            &SensitivityOptions::default(),
        )
        .unwrap();
        assert!((r.max_ratio - 1.0).abs() < 1e-12, "{}", r.max_ratio);
    }

    #[test]
    fn budget_is_enforced() {
        let g = Graph::from_pairs(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let opts = SensitivityOptions {
            budget: 5,
            ..SensitivityOptions::default()
        };
        let err = check_sensitivity(&g, ClipMode::Standard, 1.0, GradSource::Adversarial, 0, &opts).unwrap_err();
        assert!(matches!(err, Error::Budget { .. }));
    }

    #[test]
    fn mc_psi_edges() {
        assert_eq!(mc_psi(0.0, 1.0, 2.0, 10_000, 1).unwrap(), (1.0, 0.0));
        assert!(mc_psi(0.5, 1.0, 2.0, 10, 1).is_err());
        let (est, se) = mc_psi(1.0, 1.0, 2.0, 200_000, 3).unwrap();
        assert!((est - 1f64.exp()).abs() < 4.0 * se, "{est} {se}");
    }

    #[test]
    fn trapezoid_matches_shift() {
        for (s, a) in [(0.5, 2.0), (1.0, 4.0), (2.0, 16.0)] {
            let v = trapezoid_ln_psi(1.0, s, a, 4001).unwrap();
            let exact = a * (a - 1.0) / (2.0 * s * s);
            assert!((v - exact).abs() < 1e-10 * exact.max(1.0), "{v} {exact}");
        }
    }

    #[test]
    fn fd_on_empty_model() {
        let m = EncoderModel::new(EncoderKind::Linear, 0, 2, Vec::new()).unwrap();
        let f = Features::zeros(3, 0);
        let t = EdgeTuple {
            positive: Edge::new(0, 1).unwrap(),
            negatives: vec![NegEdge { w: 0, x: 2 }],
        };
        let g = fd_gradient(&m, &f, &t, &LossSpec::info_nce(), 1e-5).unwrap();
        assert!(g.is_empty());
        assert!(fd_gradient(&m, &f, &t, &LossSpec::info_nce(), 1e-2).is_err());
    }

    #[test]
    fn dropped_factor_two_is_caught() {
        let buggy = |b: &MiniBatch, g: &[GradVec], _: ClipMode, c: f64| -> Result<GradVec> {
            let mut sum = GradVec::zeros(g[0].len());
            for (i, gi) in g.iter().enumerate() {
                sum.add_scaled(&crate::clip::clip_to(gi, c / b.max_freq(i) as f64), 1.0);
            }
            Ok(sum)
        };
        let g = Graph::from_pairs(3, &[(0, 1)]).unwrap();
        let r = check_sensitivity_with(
            &g,
            ClipMode::Adaptive,
            1.0,
            GradSource::Adversarial,
            0,
            &SensitivityOptions::default(),
            &buggy,
        )
        .unwrap();
        assert!(r.mismatches > 0);
        assert!(!r.passed());
        assert!(r.witness().contains("library_diff_norm"));
        let clean = check_sensitivity(
            &g,
            ClipMode::Adaptive,
            1.0,
            GradSource::Adversarial,
            0,
            &SensitivityOptions::default(),
        )
        .unwrap();
        assert_eq!(clean.mismatches, 0);
    }
}
