use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use log::info;
use reldp::accountant::{
    calibrate_sigma, composite_dp, fmt_num, parse_alpha_grid, rdp_curve, AccountantParams, BoundKind, RdpCurve,
};
use reldp::kv::KvDoc;
use reldp::{Error, Result};

use crate::{bound_kind, AccountantArgs, ModeArg};

#[derive(Args, Debug)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub acct: AccountantArgs,
    /// Noise multiplier.
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Also write composed (ε, δ) for T up to this many iterations.
    #[arg(long, value_parser = crate::parse_count)]
    pub iters: Option<u64>,
    /// Defaults to 1/m.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_enum, default_value = "all")]
    pub mode: ModeArg,
    /// Naive bound α/σ² instead of α/(2σ²).
    #[arg(long)]
    pub naive_loose: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub acct: AccountantArgs,
    #[arg(long)]
    pub target_eps: f64,
    /// Defaults to 1/m.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_parser = crate::parse_count)]
    pub iters: u64,
    #[arg(long, value_enum, default_value = "adaptive")]
    pub mode: ModeArg,
    #[arg(long)]
    pub naive_loose: bool,
    /// Also write the result as `key = value` text.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn params(a: &AccountantArgs, sigma: f64) -> AccountantParams {
    AccountantParams {
        m: a.m,
        n: a.n,
        k: a.k,
        gamma: a.gamma,
        k_neg: a.kneg,
        sigma,
    }
}

fn default_delta(delta: Option<f64>, m: u64) -> Result<f64> {
    let d = delta.unwrap_or(1.0 / m.max(1) as f64);
    if d > 0.0 && d < 1.0 {
        Ok(d)
    } else {
        Err(Error::Argument(format!("delta must lie in (0, 1), got {d}")))
    }
}

/// `1, 2, 3, 4, 5, 6, 8, 10, 13, 16, 20, ...` (ten per decade) up to and including `t`.
pub fn log_spaced(t: u64) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::new();
    let mut k = 0;
    loop {
        let v = 10f64.powf(k as f64 / 10.0).round() as u64;
        if v >= t {
            break;
        }
        if out.last() != Some(&v) {
            out.push(v);
        }
        k += 1;
    }
    if t > 0 {
        out.push(t);
    }
    out
}

fn dp_csv(curve: &RdpCurve, t: u64, delta: f64) -> Result<String> {
    let mut out = String::from("iterations,eps,delta,best_alpha\n");
    for it in log_spaced(t) {
        let dp = composite_dp(curve, it, delta)?;
        let _ = writeln!(
            out,
            "{it},{},{},{}",
            fmt_num(dp.eps),
            fmt_num(delta),
            dp.best_alpha.map_or(String::new(), fmt_num)
        );
    }
    Ok(out)
}

pub fn run_bounds(a: &BoundsArgs) -> Result<u8> {
    let alphas = parse_alpha_grid(&a.acct.alphas)?;
    let p = params(&a.acct, a.sigma);
    p.validate()?;
    let delta = default_delta(a.delta, a.acct.m)?;
    std::fs::create_dir_all(&a.out)?;
    for kind in bound_kind(a.mode, a.naive_loose) {
        info!("computing the {} curve over {} orders", kind.name(), alphas.len());
        let curve = rdp_curve(&p, &alphas, kind)?;
        let path = a.out.join(format!("rdp_{}.csv", kind.name()));
        std::fs::write(&path, curve.to_csv())?;
        println!("wrote {}", path.display());
        if let Some(t) = a.iters {
            let path = a.out.join(format!("dp_{}.csv", kind.name()));
            std::fs::write(&path, dp_csv(&curve, t, delta)?)?;
            let dp = composite_dp(&curve, t, delta)?;
            println!(
                "wrote {}: {} after T = {t}: eps = {}, delta = {}, alpha = {}",
                path.display(),
                kind.name(),
                fmt_num(dp.eps),
                fmt_num(delta),
                dp.best_alpha.map_or("none".into(), fmt_num)
            );
        }
    }
    Ok(0)
}

pub fn run_calibrate(a: &CalibrateArgs) -> Result<u8> {
    let kind = match a.mode {
        ModeArg::All => return Err(Error::Argument("calibration needs a single --mode".into())),
        m => bound_kind(m, a.naive_loose)[0],
    };
    let alphas = parse_alpha_grid(&a.acct.alphas)?;
    let delta = default_delta(a.delta, a.acct.m)?;
    let p = params(&a.acct, 1.0);
    p.validate()?;
    let sigma = calibrate_sigma(a.target_eps, delta, a.iters, &p, kind, &alphas)?;
    let dp = composite_dp(&rdp_curve(&p.with_sigma(sigma), &alphas, kind)?, a.iters, delta)?;
    let doc = calibration_kv(kind, sigma, a.target_eps, dp.eps, delta, dp.best_alpha, a.iters);
    print!("{}", doc.render());
    if let Some(path) = &a.out {
        doc.write(path)?;
    }
    Ok(0)
}

fn calibration_kv(
    kind: BoundKind,
    sigma: f64,
    target: f64,
    eps: f64,
    delta: f64,
    alpha: Option<f64>,
    iters: u64,
) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.push("bound", kind.name())
        .push("sigma", fmt_num(sigma))
        .push("target_eps", fmt_num(target))
        .push("eps", fmt_num(eps))
        .push("delta", fmt_num(delta))
        .push("best_alpha", alpha.map_or("none".into(), fmt_num))
        .push("iterations", iters);
    doc
}
