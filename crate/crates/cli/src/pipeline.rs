use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use reldp::accountant::{calibrate_sigma, fmt_num, parse_alpha_grid};
use reldp::graph::{cap_degrees, load_edge_list, load_edge_list_remapped, Features, Graph};
use reldp::kv::KvDoc;
use reldp::sampler::sample_batch;
use reldp::synth::{generate, SbmConfig};
use reldp::trainer::{
    accountant_params_for, checkpoint, dp_train, evaluate_ranking, metrics_csv, EncoderKind, LossSpec, LrSchedule,
    ScoreKind, TrainConfig, TrainOutcome,
};
use reldp::{Error, Result};

use crate::ClipArg;

#[derive(Args, Debug)]
pub struct CapArgs {
    /// Whitespace or comma separated edge list.
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long = "K")]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Node labels are arbitrary strings; writes `id_map.txt` alongside.
    #[arg(long)]
    pub remap: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_cap(a: &CapArgs) -> Result<u8> {
    let (graph, map) = if a.remap {
        let (g, m) = load_edge_list_remapped(&a.edges)?;
        (g, Some(m))
    } else {
        (load_edge_list(&a.edges, None)?, None)
    };
    let (capped, report) = cap_degrees(&graph, a.k, a.seed)?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("capped_edges.txt"), capped.to_edge_list())?;
    report.to_kv().write(&a.out.join("cap_report.txt"))?;
    if let Some(m) = map {
        m.write(&a.out.join("id_map.txt"))?;
    }
    println!(
        "kept {} of {} edges, max degree {} -> {}",
        capped.m(),
        graph.m(),
        report.max_degree_before,
        report.max_degree_after
    );
    Ok(0)
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long)]
    pub gamma: f64,
    #[arg(long, default_value_t = 4)]
    pub kneg: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub batches: usize,
    /// Write here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_sample(a: &SampleArgs) -> Result<u8> {
    if !(a.gamma > 0.0 && a.gamma <= 1.0) {
        return Err(Error::Argument(format!("gamma must lie in (0, 1], got {}", a.gamma)));
    }
    let g = load_edge_list(&a.edges, None)?;
    let active = g.active_nodes();
    let mut rng = ChaCha20Rng::seed_from_u64(a.seed);
    let mut text = String::new();
    for i in 0..a.batches {
        let b = sample_batch(g.edges(), &active, a.gamma, a.kneg, &mut rng)?;
        let _ = writeln!(text, "# batch {i}: {} tuples", b.len());
        text.push_str(&b.dump());
        let nodes: Vec<String> = b.sampled_negative_nodes.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(text, "# negatives: {}", nodes.join(" "));
    }
    match &a.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(0)
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossArg {
    Infonce,
    Hinge,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreArg {
    Dot,
    Cosine,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderArg {
    Linear,
    TwoLayer,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("input").required(true).args(["edges", "sbm"])))]
#[command(group(ArgGroup::new("privacy").required(true).args(["sigma", "target_eps"])))]
pub struct TrainArgs {
    /// Training edge list with integer node ids.
    #[arg(long, requires = "features")]
    pub edges: Option<PathBuf>,
    /// Node features as CSV, one row per node id.
    #[arg(long, requires = "edges")]
    pub features: Option<PathBuf>,
    /// Held-out edges for ranking metrics (with `--edges`).
    #[arg(long, requires = "edges")]
    pub test_edges: Option<PathBuf>,

    /// Use the bundled synthetic SBM instead of files.
    #[arg(long, conflicts_with = "edges")]
    pub sbm: bool,
    #[arg(long, requires = "sbm")]
    pub nodes: Option<usize>,
    #[arg(long, requires = "sbm")]
    pub communities: Option<usize>,
    #[arg(long, requires = "sbm")]
    pub p_in: Option<f64>,
    #[arg(long, requires = "sbm")]
    pub p_out: Option<f64>,
    #[arg(long, requires = "sbm")]
    pub feature_noise: Option<f64>,
    #[arg(long, requires = "sbm")]
    pub nuisance_dims: Option<usize>,
    #[arg(long, requires = "sbm")]
    pub tau: Option<f64>,
    #[arg(long, requires = "sbm")]
    pub sbm_seed: Option<u64>,

    #[arg(long = "K", default_value_t = 5)]
    pub k: usize,
    /// Expected batch size.
    #[arg(long, default_value_t = 16)]
    pub b: usize,
    #[arg(long, default_value_t = 4)]
    pub kneg: usize,
    /// Clipping bound; `inf` disables clipping when `--sigma 0`.
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, value_enum, default_value = "adaptive")]
    pub clip: ClipArg,
    #[arg(long, value_enum, default_value = "infonce")]
    pub loss: LossArg,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, value_enum, default_value = "dot")]
    pub score: ScoreArg,
    /// Noise multiplier; 0 trains without privacy.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Calibrate σ to this ε instead of passing `--sigma`.
    #[arg(long)]
    pub target_eps: Option<f64>,
    /// Defaults to 1/|E| after capping.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value = "100", value_parser = crate::parse_count)]
    pub iters: u64,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Multiply the learning rate by this factor every `--lr-every` steps.
    #[arg(long, requires = "lr_every")]
    pub lr_decay: Option<f64>,
    #[arg(long, requires = "lr_decay")]
    pub lr_every: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "linear")]
    pub encoder: EncoderArg,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 8)]
    pub out_dim: usize,
    #[arg(long, default_value = "default")]
    pub alphas: String,
    /// Evaluate the fixed monitoring loss every this many steps; 0 disables it.
    #[arg(long, default_value_t = 10)]
    pub monitor_every: usize,
    #[arg(long, default_value_t = 100)]
    pub eval_candidates: usize,
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    fn sbm_config(&self) -> SbmConfig {
        let d = SbmConfig::default();
        SbmConfig {
            nodes: self.nodes.unwrap_or(d.nodes),
            communities: self.communities.unwrap_or(d.communities),
            p_in: self.p_in.unwrap_or(d.p_in),
            p_out: self.p_out.unwrap_or(d.p_out),
            feature_noise: self.feature_noise.unwrap_or(d.feature_noise),
            nuisance_dims: self.nuisance_dims.unwrap_or(d.nuisance_dims),
            tau: self.tau.unwrap_or(d.tau),
            seed: self.sbm_seed.unwrap_or(d.seed),
        }
    }

    fn train_config(&self) -> Result<TrainConfig> {
        let lr = match (self.lr_decay, self.lr_every) {
            (Some(factor), Some(every)) => LrSchedule::StepDecay {
                initial: self.lr,
                factor,
                every,
            },
            _ => LrSchedule::Constant(self.lr),
        };
        Ok(TrainConfig {
            batch_size: self.b,
            k_neg: self.kneg,
            cap_k: self.k,
            clip_c: self.c,
            clip_mode: self.clip.mode(),
            sigma: self.sigma.unwrap_or(0.0),
            iterations: usize::try_from(self.iters).map_err(|_| Error::Argument("too many iterations".into()))?,
            lr,
            momentum: self.momentum,
            seed: self.seed,
            delta: self.delta,
            alphas: parse_alpha_grid(&self.alphas)?,
            encoder: match self.encoder {
                EncoderArg::Linear => EncoderKind::Linear,
                EncoderArg::TwoLayer => EncoderKind::TwoLayer { hidden: self.hidden },
            },
            out_dim: self.out_dim,
            monitor_every: self.monitor_every,
        })
    }

    fn loss(&self) -> LossSpec {
        let mut spec = match self.loss {
            LossArg::Infonce => LossSpec::info_nce(),
            LossArg::Hinge => LossSpec::hinge(self.margin),
        };
        spec.score = match self.score {
            ScoreArg::Dot => ScoreKind::Dot,
            ScoreArg::Cosine => ScoreKind::Cosine,
        };
        spec
    }

    /// Training graph and optional test graph, both carrying features.
    fn data(&self) -> Result<(Graph, Option<Graph>)> {
        if self.sbm {
            let d = generate(&self.sbm_config())?;
            return Ok((d.train, Some(d.test)));
        }
        let (Some(edges), Some(features)) = (&self.edges, &self.features) else {
            return Err(Error::Argument(
                "--edges and --features are required without --sbm".into(),
            ));
        };
        let f = Features::load_csv(features)?;
        let train = load_edge_list(edges, Some(f.rows()))?.with_features(f.clone())?;
        let test = match &self.test_edges {
            Some(p) => Some(load_edge_list(p, Some(f.rows()))?.with_features(f)?),
            None => None,
        };
        Ok((train, test))
    }
}

/// Per-run outputs: ledger text and curves, checkpoint, metrics, history and loss files.
fn write_outputs(out: &Path, run: &TrainOutcome, metrics: &[(&str, f64)], extra: &KvDoc) -> Result<()> {
    std::fs::create_dir_all(out)?;
    checkpoint::save(&run.model, &out.join("model.rdpm"))?;
    let mut ledger = match &run.ledger {
        Some(l) => {
            std::fs::write(out.join("rdp_per_iteration.csv"), l.per_iteration.to_csv())?;
            std::fs::write(out.join("rdp_composed.csv"), l.composed.to_csv())?;
            let mut kv = KvDoc::new();
            kv.push("private", true);
            for (k, v) in l.to_kv().entries() {
                kv.push(k, v);
            }
            kv
        }
        None => {
            let mut kv = KvDoc::new();
            kv.push("private", false).push("eps", fmt_num(f64::INFINITY));
            kv
        }
    };
    for (k, v) in extra.entries() {
        ledger.push(k, v);
    }
    ledger.write(&out.join("ledger.txt"))?;
    run.cap_report.to_kv().write(&out.join("cap_report.txt"))?;
    std::fs::write(out.join("metrics.csv"), metrics_csv(metrics))?;
    std::fs::write(out.join("history.csv"), run.history_csv())?;

    let mut loss = String::from("iteration,loss\n");
    let monitored = run.history.iter().any(|r| r.monitor_loss.is_some());
    for r in &run.history {
        let v = if monitored { r.monitor_loss } else { Some(r.batch_loss) };
        if let Some(v) = v {
            let _ = writeln!(loss, "{},{}", r.iteration, fmt_num(v));
        }
    }
    std::fs::write(out.join("loss.csv"), loss)?;
    Ok(())
}

pub fn run_train(a: &TrainArgs) -> Result<u8> {
    let (train, test) = a.data()?;
    let mut cfg = a.train_config()?;
    let loss = a.loss();
    let mut extra = KvDoc::new();
    extra
        .push("clip_c", fmt_num(cfg.clip_c))
        .push("clip_mode", format!("{:?}", cfg.clip_mode).to_lowercase());
    if let Some(target) = a.target_eps {
        let (capped, _) = cap_degrees(&train, cfg.cap_k, cfg.seed)?;
        let params = accountant_params_for(&capped, &cfg)?;
        let delta = cfg.delta.unwrap_or(1.0 / capped.m() as f64);
        info!("calibrating sigma for eps = {target}, delta = {delta}");
        cfg.sigma = calibrate_sigma(
            target,
            delta,
            cfg.iterations as u64,
            &params,
            cfg.bound_kind(),
            &cfg.alphas,
        )?;
        cfg.delta = Some(delta);
        extra.push("target_eps", fmt_num(target));
    }
    info!("training for {} iterations at sigma = {}", cfg.iterations, cfg.sigma);
    let run = dp_train(&train, &cfg, &loss)?;

    let mut metrics: Vec<(&str, f64)> = vec![("iterations", cfg.iterations as f64), ("sigma", cfg.sigma)];
    if let Some(l) = &run.ledger {
        metrics.push(("eps", l.dp.eps));
        metrics.push(("delta", l.dp.delta));
    }
    let tail = &run.history[run.history.len().saturating_sub(10)..];
    let finite: Vec<f64> = tail.iter().map(|r| r.batch_loss).filter(|x| x.is_finite()).collect();
    if !finite.is_empty() {
        metrics.push(("batch_loss_last10", finite.iter().sum::<f64>() / finite.len() as f64));
    }
    if let Some(m) = run.history.iter().rev().find_map(|r| r.monitor_loss) {
        metrics.push(("monitor_loss", m));
    }
    if let Some(test) = test.as_ref().filter(|t| t.m() > 0) {
        let r = evaluate_ranking(&run.model, test, a.eval_candidates, 0, loss.score)?;
        metrics.push(("prec_at_1", r.prec_at_1));
        metrics.push(("mrr", r.mrr));
        metrics.push(("eval_edges", r.edges as f64));
    }
    write_outputs(&a.out, &run, &metrics, &extra)?;

    match &run.ledger {
        Some(l) => println!(
            "eps = {}, delta = {}, best alpha = {}, sigma = {}",
            fmt_num(l.dp.eps),
            fmt_num(l.dp.delta),
            l.dp.best_alpha.map_or("none".into(), fmt_num),
            fmt_num(cfg.sigma)
        ),
        None => println!("non-private run: eps = inf"),
    }
    for (k, v) in metrics.iter().filter(|m| matches!(m.0, "prec_at_1" | "mrr")) {
        println!("{k} = {}", fmt_num(*v));
    }
    Ok(0)
}
