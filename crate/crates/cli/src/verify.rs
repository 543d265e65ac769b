//! Oracle suites at fixed seeds.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use reldp::accountant::{ln_psi_two_point_closed, ln_psi_two_point_quad, psi_two_point, quad::QuadOptions};
use reldp::clip::ClipMode;
use reldp::graph::{Edge, Features, Graph, NodeId};
use reldp::oracle::{check_small_graphs, fd_gradient, mc_psi, GradSource};
use reldp::sampler::{partition_by_node, sample_batch, EdgeTuple, NegEdge};
use reldp::trainer::{tuple_loss_grad, EncoderKind, EncoderModel, LossSpec};
use reldp::Result;

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Sensitivity,
    Psi,
    Grad,
    Sampling,
    All,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub suite: Suite,
    /// Directory for witness files of failing checks.
    #[arg(long, default_value = "verify-witnesses")]
    pub out: PathBuf,
}

struct SuiteResult {
    name: &'static str,
    failures: u64,
    lines: Vec<String>,
    witnesses: Vec<(String, String)>,
}

impl SuiteResult {
    fn new(name: &'static str) -> Self {
        SuiteResult {
            name,
            failures: 0,
            lines: Vec::new(),
            witnesses: Vec::new(),
        }
    }
}

const SEED: u64 = 42;

fn sensitivity() -> Result<SuiteResult> {
    let mut s = SuiteResult::new("sensitivity");
    for mode in [ClipMode::Adaptive, ClipMode::Standard] {
        for src in [GradSource::Random { trials: 1000 }, GradSource::Adversarial] {
            let r = check_small_graphs(5, &[1, 2], mode, 1.0, src, SEED, 200_000_000)?;
            let label = format!("{mode:?}_{}", src.name()).to_lowercase();
            s.lines.push(format!(
                "{label}: cases {} violations {} max_ratio {} mismatches {}",
                r.cases_checked, r.violations, r.max_ratio, r.mismatches
            ));
            if !r.passed() {
                s.failures += r.violations + r.mismatches;
                s.witnesses.push((
                    format!("sensitivity_{label}.txt"),
                    format!("{}{}", r.to_kv().render(), r.witness()),
                ));
            }
        }
    }
    Ok(s)
}

fn psi() -> Result<SuiteResult> {
    let mut s = SuiteResult::new("psi");
    let opts = QuadOptions::default();
    let mut worst: f64 = 0.0;
    let mut report = String::new();
    for alpha in 2u64..=32 {
        for q in [1e-4, 1e-2, 0.5] {
            for sigma in [0.5, 1.0, 2.0] {
                let c = ln_psi_two_point_closed(q, sigma, alpha)?;
                let n = ln_psi_two_point_quad(q, sigma, alpha as f64, &opts)?;
                let d = (c - n).abs() / c.abs().max(1.0);
                worst = worst.max(d);
                if d > 1e-9 {
                    s.failures += 1;
                    report.push_str(&format!(
                        "alpha={alpha} q={q} sigma={sigma}: closed {c} quadrature {n}\n"
                    ));
                }
            }
        }
    }
    s.lines
        .push(format!("closed form vs quadrature: max relative gap {worst:.2e}"));
    for (q, sigma, alpha) in [(0.01, 1.0, 2.0), (0.2, 2.0, 3.0), (1.0, 1.0, 2.0)] {
        let (est, se) = mc_psi(q, sigma, alpha, 10_000_000, SEED)?;
        let exact = psi_two_point(q, sigma, alpha)?;
        let z = (est - exact) / se;
        s.lines.push(format!(
            "monte carlo q={q} sigma={sigma} alpha={alpha}: {est} vs {exact} (z = {z:.2})"
        ));
        if z.abs() >= 3.0 {
            s.failures += 1;
            report.push_str(&format!(
                "monte carlo q={q} sigma={sigma} alpha={alpha}: {est} +- {se} vs {exact}\n"
            ));
        }
    }
    if s.failures > 0 {
        s.witnesses.push(("psi.txt".into(), report));
    }
    Ok(s)
}

fn grad() -> Result<SuiteResult> {
    let mut s = SuiteResult::new("grad");
    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    let mut report = String::new();
    for kind in [EncoderKind::Linear, EncoderKind::TwoLayer { hidden: 6 }] {
        for loss in [LossSpec::info_nce(), LossSpec::hinge(1.0)] {
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let (nodes, dim) = (7, 5);
                let data = (0..nodes * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let f = Features::new(nodes, dim, data)?;
                let model = EncoderModel::init(kind, dim, 3, rng.random())?;
                let tuple = EdgeTuple {
                    positive: Edge::new(0, 1).expect("distinct endpoints"),
                    negatives: (2..6)
                        .map(|x| NegEdge {
                            w: rng.random_range(0..2),
                            x,
                        })
                        .collect(),
                };
                let (_, g) = tuple_loss_grad(&model, &f, &tuple, &loss)?;
                let fd = fd_gradient(&model, &f, &tuple, &loss, 1e-5)?;
                let scale = g.norm().max(fd.norm());
                let rel = if scale == 0.0 { 0.0 } else { g.sub(&fd).norm() / scale };
                worst = worst.max(rel);
                if rel >= 1e-5 {
                    s.failures += 1;
                    report.push_str(&format!("{kind:?} {:?}: relative error {rel:e}\n", loss.kind));
                }
            }
            s.lines
                .push(format!("{kind:?} {:?}: max relative error {worst:.1e}", loss.kind));
        }
    }
    if s.failures > 0 {
        s.witnesses.push(("grad.txt".into(), report));
    }
    Ok(s)
}

fn sampling() -> Result<SuiteResult> {
    let mut s = SuiteResult::new("sampling");
    let n = 40;
    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    let mut pairs = Vec::new();
    while pairs.len() < 12 {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b && !pairs.iter().any(|&(x, y)| Edge::new(x, y) == Edge::new(a, b)) {
            pairs.push((a, b));
        }
    }
    let g = Graph::from_pairs(n, &pairs)?;
    let active: Vec<NodeId> = (0..n).collect();
    let (gamma, k_neg, batches) = (0.15, 3, 20_000u64);
    let mut edge_hits = vec![0u64; g.m()];
    let mut node_hits = vec![0u64; n];
    let (mut mean, mut var) = (0.0, 0.0);
    let mut report = String::new();
    for _ in 0..batches {
        let b = sample_batch(g.edges(), &active, gamma, k_neg, &mut rng)?;
        for u in 0..n {
            if partition_by_node(&b, u).minus.len() > 1 {
                s.failures += 1;
                report.push_str(&format!("node {u} in several negative-only tuples:\n{}", b.dump()));
            }
        }
        for t in &b.tuples {
            if let Some(i) = g.edges().iter().position(|e| *e == t.positive) {
                edge_hits[i] += 1;
            }
        }
        let p = (b.len() * k_neg) as f64 / n as f64;
        mean += p;
        var += p * (1.0 - p);
        for &v in &b.sampled_negative_nodes {
            node_hits[v] += 1;
        }
    }
    let bf = batches as f64;
    let sd = (bf * gamma * (1.0 - gamma)).sqrt();
    let edge_z = edge_hits
        .iter()
        .map(|&c| ((c as f64 - bf * gamma) / sd).abs())
        .fold(0.0, f64::max);
    let node_z = node_hits
        .iter()
        .map(|&c| ((c as f64 - mean) / var.sqrt()).abs())
        .fold(0.0, f64::max);
    for (what, z) in [("edge", edge_z), ("node", node_z)] {
        if z >= 4.0 {
            s.failures += 1;
            report.push_str(&format!("{what} inclusion off by {z:.2} standard deviations\n"));
        }
    }
    s.lines.push(format!(
        "{batches} batches: max |z| edges {edge_z:.2}, nodes {node_z:.2}"
    ));
    if s.failures > 0 {
        s.witnesses.push(("sampling.txt".into(), report));
    }
    Ok(s)
}

pub fn run(a: &VerifyArgs) -> Result<u8> {
    let suites: Vec<fn() -> Result<SuiteResult>> = match a.suite {
        Suite::Sensitivity => vec![sensitivity],
        Suite::Psi => vec![psi],
        Suite::Grad => vec![grad],
        Suite::Sampling => vec![sampling],
        Suite::All => vec![psi, grad, sampling, sensitivity],
    };
    let mut failed = false;
    for suite in suites {
        let r = suite()?;
        let status = if r.failures == 0 { "ok" } else { "FAILED" };
        println!("[{}] {status}", r.name);
        for l in &r.lines {
            println!("  {l}");
        }
        if !r.witnesses.is_empty() {
            std::fs::create_dir_all(&a.out)?;
            for (name, text) in &r.witnesses {
                let path = a.out.join(name);
                std::fs::write(&path, text)?;
                println!("  witness: {}", path.display());
            }
        }
        failed |= r.failures > 0;
    }
    Ok(u8::from(failed))
}
