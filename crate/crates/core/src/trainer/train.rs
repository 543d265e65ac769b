//! DP-SGD over coupled mini-batches with a running privacy ledger.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use super::loss::{tuple_loss, tuple_loss_grad, LossSpec};
use super::model::{EncoderKind, EncoderModel};
use crate::accountant::{
    compose, composite_dp, default_alphas, fmt_num, rdp_curve, AccountantParams, BoundKind, DpResult, RdpCurve,
};
use crate::clip::{ClipConfig, ClipMode, GradVec};
use crate::error::{Error, Result};
use crate::graph::{cap_degrees, DegreeCapReport, Graph};
use crate::kv::KvDoc;
use crate::sampler::{neg_sample_wor, sample_batch, MiniBatch};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// `initial · factor^⌊t / every⌋`.
    StepDecay {
        initial: f64,
        factor: f64,
        every: usize,
    },
}

impl LrSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::StepDecay { initial, factor, every } => initial * factor.powi((t / every.max(1)) as i32),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant(lr) => lr > 0.0 && lr.is_finite(),
            LrSchedule::StepDecay { initial, factor, every } => {
                initial > 0.0 && initial.is_finite() && factor > 0.0 && factor <= 1.0 && every > 0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::arg(format!("invalid learning-rate schedule {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Expected batch size `b`; also the fixed gradient divisor.
    pub batch_size: usize,
    pub k_neg: usize,
    pub cap_k: usize,
    /// Clipping bound; infinite disables clipping (non-private runs only).
    pub clip_c: f64,
    pub clip_mode: ClipMode,
    /// Noise multiplier; zero means a non-private run.
    pub sigma: f64,
    pub iterations: usize,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub seed: u64,
    /// Defaults to `1 / |Ē|`.
    pub delta: Option<f64>,
    pub alphas: Vec<f64>,
    pub encoder: EncoderKind,
    pub out_dim: usize,
    /// Evaluate the fixed monitoring objective every this many steps; 0 disables it.
    pub monitor_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            k_neg: 4,
            cap_k: 5,
            clip_c: 1.0,
            clip_mode: ClipMode::Adaptive,
            sigma: 1.0,
            iterations: 100,
            lr: LrSchedule::Constant(0.1),
            momentum: 0.0,
            seed: 0,
            delta: None,
            alphas: default_alphas(),
            encoder: EncoderKind::Linear,
            out_dim: 8,
            monitor_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn is_private(&self) -> bool {
        self.sigma > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::arg("batch size b must be at least 1"));
        }
        if self.k_neg == 0 {
            return Err(Error::arg("k_neg must be at least 1"));
        }
        if self.cap_k == 0 {
            return Err(Error::arg("degree cap K must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::arg(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        ClipConfig {
            c: self.clip_c,
            mode: self.clip_mode,
        }
        .validate()?;
        if self.is_private() && !self.clip_c.is_finite() {
            return Err(Error::arg("private training needs a finite clipping bound"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::arg(format!("delta must lie in (0, 1), got {d}")));
            }
        }
        if self.out_dim == 0 {
            return Err(Error::arg("embedding dimension must be positive"));
        }
        self.lr.validate()
    }

    pub fn bound_kind(&self) -> BoundKind {
        match self.clip_mode {
            ClipMode::Adaptive => BoundKind::Adaptive,
            ClipMode::Standard => BoundKind::Standard,
        }
    }
}

/// Running RDP record: per-step curve, its `T`-fold composition and the (ε, δ) view.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivacyLedger {
    pub params: AccountantParams,
    pub bound: BoundKind,
    pub per_iteration: RdpCurve,
    pub composed: RdpCurve,
    pub dp: DpResult,
    pub iterations: u64,
}

impl PrivacyLedger {
    pub fn new(params: AccountantParams, bound: BoundKind, alphas: &[f64], delta: f64) -> Result<Self> {
        let per_iteration = rdp_curve(&params, alphas, bound)?;
        let composed = compose(&per_iteration, 0);
        let dp = composite_dp(&per_iteration, 0, delta)?;
        Ok(PrivacyLedger {
            params,
            bound,
            per_iteration,
            composed,
            dp,
            iterations: 0,
        })
    }

    /// Records one more mechanism invocation.
    pub fn step(&mut self) -> Result<()> {
        self.advance_to(self.iterations + 1)
    }

    pub fn advance_to(&mut self, iterations: u64) -> Result<()> {
        self.iterations = iterations;
        self.composed = compose(&self.per_iteration, iterations);
        self.dp = composite_dp(&self.per_iteration, iterations, self.dp.delta)?;
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut kv = KvDoc::new();
        let p = &self.params;
        kv.push("bound", self.bound.name())
            .push("m", p.m)
            .push("n", p.n)
            .push("K", p.k)
            .push("gamma", fmt_num(p.gamma))
            .push("k_neg", p.k_neg)
            .push("sigma", fmt_num(p.sigma))
            .push("iterations", self.iterations)
            .push("delta", fmt_num(self.dp.delta))
            .push("eps", fmt_num(self.dp.eps))
            .push("best_alpha", self.dp.best_alpha.map_or("none".to_string(), fmt_num));
        kv
    }
}

/// Per-step diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    pub batch_len: usize,
    /// Mean tuple loss on the sampled batch (NaN when the batch is empty).
    pub batch_loss: f64,
    /// Norm of the clipped gradient sum before noise.
    pub clipped_norm: f64,
    /// Mean loss on the fixed monitoring batch, when evaluated.
    pub monitor_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: EncoderModel,
    /// `None` for non-private runs.
    pub ledger: Option<PrivacyLedger>,
    pub history: Vec<StepRecord>,
    pub cap_report: DegreeCapReport,
}

impl TrainOutcome {
    /// CSV `iteration,batch_len,batch_loss,clipped_norm,monitor_loss`.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("iteration,batch_len,batch_loss,clipped_norm,monitor_loss\n");
        for r in &self.history {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.iteration,
                r.batch_len,
                fmt_num(r.batch_loss),
                fmt_num(r.clipped_norm),
                r.monitor_loss.map_or(String::new(), fmt_num)
            );
        }
        out
    }
}

/// Accountant parameters for a run on an already capped graph.
pub fn accountant_params_for(capped: &Graph, cfg: &TrainConfig) -> Result<AccountantParams> {
    let m = capped.m();
    if m == 0 {
        return Err(Error::arg("graph has no edges after degree capping"));
    }
    let gamma = (cfg.batch_size as f64 / m as f64).min(1.0);
    Ok(AccountantParams {
        m: m as u64,
        n: capped.active_nodes().len() as u64,
        k: cfg.cap_k as u64,
        gamma,
        k_neg: cfg.k_neg as u64,
        sigma: cfg.sigma,
    })
}

fn monitor_batch(capped: &Graph, cfg: &TrainConfig) -> Result<Option<MiniBatch>> {
    if cfg.monitor_every == 0 {
        return Ok(None);
    }
    let active = capped.active_nodes();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    // one tuple per edge; negatives drawn in chunks that fit the node pool
    let per = (active.len() / cfg.k_neg).max(1);
    let mut tuples = Vec::new();
    for chunk in capped.edges().chunks(per) {
        let b = neg_sample_wor(chunk, cfg.k_neg, &active, &mut rng)?;
        tuples.extend(b.tuples);
    }
    Ok(Some(MiniBatch::new(tuples, Vec::new())))
}

fn mean_loss(model: &EncoderModel, graph: &Graph, batch: &MiniBatch, loss: &LossSpec) -> Result<f64> {
    let features = graph.features().ok_or_else(|| Error::arg("graph has no features"))?;
    let mut total = 0.0;
    for t in &batch.tuples {
        total += tuple_loss(model, features, t, loss)?;
    }
    Ok(total / batch.len().max(1) as f64)
}

fn fail(iteration: usize, e: Error) -> Error {
    Error::Training {
        iteration,
        source: Box::new(e),
    }
}

/// Degree-caps `graph` at `cfg.cap_k` and runs `cfg.iterations` noisy SGD steps.
///
/// Each step: Poisson positives at `γ = b / |Ē|`, negatives without
/// replacement, per-tuple gradients, clipping, Gaussian noise of std `σC`
/// per coordinate drawn from the same stream after the sampling draws, and
/// division by the configured `b`. Empty batches still take a noise-only step.
pub fn dp_train(graph: &Graph, cfg: &TrainConfig, loss: &LossSpec) -> Result<TrainOutcome> {
    dp_train_observed(graph, cfg, loss, &mut |_, _| {})
}

/// [`dp_train`] with a callback invoked after every step on the record and updated model.
pub fn dp_train_observed(
    graph: &Graph,
    cfg: &TrainConfig,
    loss: &LossSpec,
    on_step: &mut dyn FnMut(&StepRecord, &EncoderModel),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss.validate()?;
    let features = graph
        .features()
        .ok_or_else(|| Error::arg("training needs node features"))?;
    let (capped, cap_report) = cap_degrees(graph, cfg.cap_k, cfg.seed)?;
    let active = capped.active_nodes();
    if cfg.batch_size * cfg.k_neg > active.len() {
        return Err(Error::Capacity {
            needed: cfg.batch_size * cfg.k_neg,
            available: active.len(),
        });
    }
    let params = accountant_params_for(&capped, cfg)?;
    let mut ledger = if cfg.is_private() {
        let delta = cfg.delta.unwrap_or(1.0 / capped.m() as f64);
        Some(PrivacyLedger::new(params, cfg.bound_kind(), &cfg.alphas, delta)?)
    } else {
        None
    };

    let mut init_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(1);
    let mut model = EncoderModel::init(
        cfg.encoder,
        features.dim(),
        cfg.out_dim,
        rand::Rng::random(&mut init_rng),
    )?;
    let monitor = monitor_batch(&capped, cfg)?;
    let clip = ClipConfig {
        c: cfg.clip_c,
        mode: cfg.clip_mode,
    };
    let noise = if cfg.is_private() {
        Some(Normal::new(0.0, cfg.sigma * cfg.clip_c).map_err(|e| Error::arg(e.to_string()))?)
    } else {
        None
    };

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut velocity = GradVec::zeros(model.num_params());
    let mut history = Vec::with_capacity(cfg.iterations);
    let b = cfg.batch_size as f64;
    for t in 0..cfg.iterations {
        let batch = sample_batch(capped.edges(), &active, params.gamma, cfg.k_neg, &mut rng).map_err(|e| fail(t, e))?;
        let mut grads = Vec::with_capacity(batch.len());
        let mut total_loss = 0.0;
        for tuple in &batch.tuples {
            let (l, g) = tuple_loss_grad(&model, features, tuple, loss).map_err(|e| fail(t, e))?;
            if !l.is_finite() {
                return Err(fail(t, Error::numeric(format!("non-finite loss {l}"))));
            }
            total_loss += l;
            grads.push(g);
        }
        let mut g = if batch.is_empty() {
            GradVec::zeros(model.num_params())
        } else {
            clip.apply(&batch, &grads).map_err(|e| fail(t, e))?
        };
        let clipped_norm = g.norm();
        if let Some(n) = &noise {
            for x in &mut g.0 {
                *x += n.sample(&mut rng);
            }
        }
        g.scale(1.0 / b);
        velocity.scale(cfg.momentum);
        velocity.add_scaled(&g, 1.0);
        let lr = cfg.lr.at(t);
        for (w, v) in model.weights.iter_mut().zip(&velocity.0) {
            *w -= lr * v;
        }
        if model.weights.iter().any(|w| !w.is_finite()) {
            return Err(fail(t, Error::numeric("parameters became non-finite")));
        }
        if let Some(l) = ledger.as_mut() {
            l.step().map_err(|e| fail(t, e))?;
        }
        let monitor_loss = match &monitor {
            Some(mb) if (t + 1) % cfg.monitor_every == 0 => {
                Some(mean_loss(&model, &capped, mb, loss).map_err(|e| fail(t, e))?)
            }
            _ => None,
        };
        let record = StepRecord {
            iteration: t,
            batch_len: batch.len(),
            batch_loss: if batch.is_empty() {
                f64::NAN
            } else {
                total_loss / batch.len() as f64
            },
            clipped_norm,
            monitor_loss,
        };
        on_step(&record, &model);
        history.push(record);
    }
    Ok(TrainOutcome {
        model,
        ledger,
        history,
        cap_report,
    })
}

/// Mean loss of `model` on the fixed monitoring batch of `graph` after capping.
pub fn monitor_loss(model: &EncoderModel, graph: &Graph, cfg: &TrainConfig, loss: &LossSpec) -> Result<f64> {
    let (capped, _) = cap_degrees(graph, cfg.cap_k, cfg.seed)?;
    let cfg = TrainConfig {
        monitor_every: cfg.monitor_every.max(1),
        ..cfg.clone()
    };
    let mb = monitor_batch(&capped, &cfg)?.expect("monitoring enabled");
    mean_loss(model, &capped, &mb, loss)
}
