//! `Ψ_α(P‖Q) = E_Q[(P/Q)^α]` for Gaussian mixtures against the centred Gaussian.
//!
//! Everything here works with `ln Ψ`. For the orders and noise levels of
//! interest `Ψ` itself overflows `f64` long before the bounds become useless.

use super::binomial::ln_choose;
use super::quad::{integrate, QuadOptions};
use crate::error::{Error, Result};

pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Largest `ln Ψ` span kept when locating the integrand's support.
const SUPPORT_SPAN: f64 = 75.0;
/// Cells whose endpoint values fall this far below the running maximum are dropped.
const CELL_SPAN: f64 = 70.0;
const MAX_SCAN_POINTS: f64 = 20_000.0;

#[inline]
pub(crate) fn ln_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a == f64::INFINITY || b == f64::INFINITY {
        return f64::INFINITY;
    }
    let m = a.max(b);
    m + (-(a - b).abs()).exp().ln_1p()
}

pub(crate) fn ln_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = LnAcc::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// `ln(1 + e^x)`.
pub(crate) fn ln1p_exp(x: f64) -> f64 {
    if x > 35.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(e^y - 1)` for `y > 0`.
pub(crate) fn ln_expm1(y: f64) -> f64 {
    if y > 35.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Streaming log-sum-exp.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LnAcc {
    max: f64,
    sum: f64,
}

impl LnAcc {
    pub(crate) fn new() -> Self {
        LnAcc {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY || self.max == f64::INFINITY {
            return;
        }
        if x == f64::INFINITY {
            self.max = x;
            self.sum = 1.0;
            return;
        }
        if x > self.max {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    pub(crate) fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `Ψ_α(mixture ‖ base)`.
    MixtureVsBase,
    /// `Ψ_α(base ‖ mixture)`.
    BaseVsMixture,
}

/// Two sums of Gaussian likelihood ratios against `N(0, σ²)`:
/// `U(x) = Σ e^{c_i} L_{μ_i}(x)` and `V(x) = Σ e^{d_j} L_{ν_j}(x)` with
/// `L_μ(x) = exp((μx − μ²/2)/σ²)`.
#[derive(Clone, Debug)]
pub(crate) struct PairMixture {
    pub sigma: f64,
    pub u: Vec<(f64, f64)>,
    pub v: Vec<(f64, f64)>,
}

/// One term `p · E[(a U + b V)^β]` of a fused expectation, in logs.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Member {
    pub lp: f64,
    pub la: f64,
    pub lb: f64,
}

impl PairMixture {
    fn ln_sum(&self, comps: &[(f64, f64)], x: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        let mut acc = LnAcc::new();
        for &(c, mu) in comps {
            acc.add(c + (mu * x - 0.5 * mu * mu) / s2);
        }
        acc.value()
    }
}

struct Envelope {
    peak: f64,
    center: f64,
}

/// Gaussian envelope `W φ(x) L_μ(x)^β`, in logs: peak height and location.
fn envelope(lw: f64, mu: f64, beta: f64, sigma: f64) -> Envelope {
    Envelope {
        peak: lw + (beta * beta - beta) * mu * mu / (2.0 * sigma * sigma) - LN_SQRT_2PI - sigma.ln(),
        center: beta * mu,
    }
}

/// `ln ∫ exp(g)` where `g` is bracketed by the given envelopes.
///
/// With `union` the integrand lies below the sum of the envelopes, otherwise
/// below their minimum. `kappa` bounds the integrand's log-concavity
/// (`g'' >= -kappa`) away from isolated zeros; the scan step derives from it.
fn integrate_log<G: Fn(f64) -> f64>(
    g: G,
    envelopes: &[Envelope],
    union: bool,
    kappa: f64,
    sigma: f64,
    opts: &QuadOptions,
) -> Result<f64> {
    if envelopes.is_empty() {
        return Err(Error::numeric("mixture has no component with positive weight"));
    }
    let mut l_max = f64::NEG_INFINITY;
    for x in std::iter::once(0.0).chain(envelopes.iter().map(|e| e.center)) {
        if x.is_finite() {
            l_max = l_max.max(g(x));
        }
    }
    if !l_max.is_finite() {
        return Err(Error::numeric(format!("integrand not finite at probe points: {l_max}")));
    }

    let half_width = |e: &Envelope, thr: f64| -> Option<(f64, f64)> {
        if e.peak == f64::INFINITY {
            return Some((f64::NEG_INFINITY, f64::INFINITY));
        }
        (e.peak > thr).then(|| {
            let h = sigma * (2.0 * (e.peak - thr)).sqrt();
            (e.center - h, e.center + h)
        })
    };
    let region: Vec<(f64, f64)> = if union {
        let thr = l_max - SUPPORT_SPAN - (envelopes.len() as f64).ln();
        let mut iv: Vec<_> = envelopes.iter().filter_map(|e| half_width(e, thr)).collect();
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (a, b) in iv {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        merged
    } else {
        let thr = l_max - SUPPORT_SPAN;
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for e in envelopes {
            let (a, b) = half_width(e, thr).ok_or_else(|| Error::numeric("support bracket is empty"))?;
            lo = lo.max(a);
            hi = hi.min(b);
        }
        vec![(lo, hi)]
    };
    if region.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::numeric("could not bracket the integrand's support"));
    }

    let mut step = 0.5 / kappa.sqrt();
    let total: f64 = region.iter().map(|(a, b)| b - a).sum();
    if total / step > MAX_SCAN_POINTS {
        step = total / MAX_SCAN_POINTS;
    }

    let mut g_max = l_max;
    let mut grids = Vec::with_capacity(region.len());
    for (a, b) in region {
        let n = ((b - a) / step).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        let xs: Vec<f64> = (0..=n).map(|i| a + h * i as f64).collect();
        let gs: Vec<f64> = xs.iter().map(|&x| g(x)).collect();
        if let Some(bad) = gs.iter().find(|v| v.is_nan() || **v == f64::INFINITY) {
            return Err(Error::numeric(format!("integrand evaluated to {bad}")));
        }
        g_max = gs.iter().copied().fold(g_max, f64::max);
        grids.push((xs, gs));
    }

    let chunk = (8.0 * step).max(0.25 * sigma);
    let mut pieces = Vec::new();
    for (xs, gs) in &grids {
        let cells = xs.len() - 1;
        let mut keep = vec![false; cells];
        for i in 0..cells {
            if gs[i].max(gs[i + 1]) > g_max - CELL_SPAN {
                keep[i.saturating_sub(1)] = true;
                keep[i] = true;
                if i + 1 < cells {
                    keep[i + 1] = true;
                }
            }
        }
        let mut i = 0;
        while i < cells {
            if !keep[i] {
                i += 1;
                continue;
            }
            let start = i;
            while i < cells && keep[i] {
                i += 1;
            }
            let (a, b) = (xs[start], xs[i]);
            let parts = ((b - a) / chunk).ceil().max(1.0) as usize;
            let w = (b - a) / parts as f64;
            for p in 0..parts {
                let lo = a + w * p as f64;
                let hi = if p + 1 == parts { b } else { lo + w };
                pieces.push((lo, hi));
            }
        }
    }

    // ln-integrands whose terms reach size S carry rounding noise ~ S·ε_mach,
    // which no refinement can remove
    let x_max = pieces.iter().fold(0.0f64, |m, &(a, b)| m.max(a.abs()).max(b.abs()));
    let noise = 4.0 * f64::EPSILON * (x_max * x_max / (sigma * sigma) + g_max.abs());
    let opts = QuadOptions {
        rel_tol: opts.rel_tol.max(noise),
        ..*opts
    };
    let res = integrate(|x| (g(x) - g_max).exp(), &pieces, &opts)?;
    if !(res.value > 0.0) {
        return Err(Error::numeric("quadrature returned a non-positive value"));
    }
    Ok(g_max + res.value.ln())
}

/// `ln Σ_ℓ p_ℓ E_{N(0,σ²)}[(a_ℓ U + b_ℓ V)^β]` for `β > 1` or `β < 0`.
///
/// For `β > 1` the integrand is below `Σ_c W_c φ L_c^β` (Jensen), for `β < 0`
/// below `min_c W_c φ L_c^β`.
pub(crate) fn ln_fused(pm: &PairMixture, members: &[Member], beta: f64, opts: &QuadOptions) -> Result<f64> {
    if !!(0.0..=1.0).contains(&beta) {
        return Err(Error::arg(format!("exponent {beta} outside (-inf, 0) U (1, inf)")));
    }
    let sigma = pm.sigma;
    let s2 = sigma * sigma;
    let ln_norm = LN_SQRT_2PI + sigma.ln();
    let g = |x: f64| {
        let lu = pm.ln_sum(&pm.u, x);
        let lv = pm.ln_sum(&pm.v, x);
        let mut acc = LnAcc::new();
        for m in members {
            acc.add(m.lp + beta * ln_add_exp(m.la + lu, m.lb + lv));
        }
        acc.value() - x * x / (2.0 * s2) - ln_norm
    };

    let forward = beta > 1.0;
    let mut envelopes = Vec::new();
    let mut mu_lo = f64::INFINITY;
    let mut mu_hi = f64::NEG_INFINITY;
    for (comps, pick_a) in [(&pm.u, true), (&pm.v, false)] {
        for &(c, mu) in comps.iter() {
            let lw = ln_sum_exp(members.iter().map(|m| {
                let lw = if pick_a { m.la } else { m.lb } + c;
                if forward {
                    m.lp + lw
                } else if lw == f64::NEG_INFINITY {
                    f64::INFINITY
                } else {
                    m.lp + beta * lw
                }
            }));
            if lw == f64::NEG_INFINITY {
                continue;
            }
            mu_lo = mu_lo.min(mu);
            mu_hi = mu_hi.max(mu);
            envelopes.push(envelope(lw, mu, beta, sigma));
        }
    }
    // ln of a likelihood-ratio sum is convex; the reverse direction adds
    // curvature |β| Δμ² / (4σ⁴) through the power
    let spread = if forward { 0.0 } else { (mu_hi - mu_lo).max(0.0) };
    let kappa = (1.0 + beta.abs() * spread * spread / (4.0 * s2)) / s2;
    if !forward && envelopes.iter().all(|e| e.peak == f64::INFINITY) {
        // every component is missing from some member: bound each member by
        // its heaviest component instead and sum the envelopes
        let fallback = heaviest_component_envelopes(pm, members, beta);
        return integrate_log(g, &fallback, true, kappa, sigma, opts);
    }
    integrate_log(g, &envelopes, forward, kappa, sigma, opts)
}

/// Envelopes `Σ_c L_c^β Σ_{m→c} p_m w_{m,c}^β` for `β < 0`, where each member
/// is assigned to the component carrying its largest weight.
fn heaviest_component_envelopes(pm: &PairMixture, members: &[Member], beta: f64) -> Vec<Envelope> {
    let comps: Vec<(f64, f64, bool)> =
        pm.u.iter()
            .map(|&(c, mu)| (c, mu, true))
            .chain(pm.v.iter().map(|&(c, mu)| (c, mu, false)))
            .collect();
    let mut acc: Vec<LnAcc> = comps.iter().map(|_| LnAcc::new()).collect();
    for m in members {
        let weight = |&(c, _, pick_a): &(f64, f64, bool)| if pick_a { m.la } else { m.lb } + c;
        let Some((best, lw)) = comps.iter().map(weight).enumerate().max_by(|a, b| a.1.total_cmp(&b.1)) else {
            continue;
        };
        if lw > f64::NEG_INFINITY {
            acc[best].add(m.lp + beta * lw);
        }
    }
    comps
        .iter()
        .zip(&acc)
        .filter(|(_, a)| a.value() > f64::NEG_INFINITY)
        .map(|(&(_, mu, _), a)| envelope(a.value(), mu, beta, pm.sigma))
        .collect()
}

/// `ln h(d)` with `h(d) = (1+d)^β − 1 − βd`, given `ln(1+d)` and `d`.
fn ln_excess_power(d: f64, ln1pd: f64, beta: f64) -> f64 {
    if d == 0.0 {
        return f64::NEG_INFINITY;
    }
    if d.abs() < 1e-3 {
        // Σ_{k≥2} C(β,k) d^k
        let mut term = beta * (beta - 1.0) / 2.0 * d * d;
        let mut sum = term;
        for k in 3..40 {
            term *= (beta - (k - 1) as f64) / k as f64 * d;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        return sum.ln();
    }
    let lp = beta * ln1pd;
    if lp < 30.0 {
        return (lp.exp_m1() - beta * d).max(0.0).ln();
    }
    // d > 0 here: ln((1+d)^β) + ln(1 − (1+βd)/(1+d)^β)
    let ln_lin = ln_add_exp(0.0, beta.ln() + d.ln());
    lp + (-(ln_lin - lp).exp()).ln_1p()
}

/// `ln Σ_ℓ p_ℓ (Ψ_α(q_ℓ) − 1)` for the two-point mixture, by quadrature of
/// `E[(1+d)^α − 1 − αd]` with `d = q(L_1 − 1)`.
///
/// Keeps full relative accuracy when `Ψ − 1` is tiny. Members carry
/// `la = ln(1−q)` and `lb = ln q`.
pub(crate) fn ln_fused_excess(sigma: f64, members: &[Member], alpha: f64, opts: &QuadOptions) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::arg(format!("order {alpha} must exceed 1")));
    }
    let s2 = sigma * sigma;
    let ln_norm = LN_SQRT_2PI + sigma.ln();
    let live: Vec<Member> = members
        .iter()
        .copied()
        .filter(|m| m.lb > f64::NEG_INFINITY && m.lp > f64::NEG_INFINITY)
        .collect();
    if live.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let g = |x: f64| {
        let s = (x - 0.5) / s2;
        let em1 = s.exp_m1();
        let mut acc = LnAcc::new();
        for m in &live {
            let ln1pd = ln_add_exp(m.la, m.lb + s);
            let d = if s < 600.0 { m.lb.exp() * em1 } else { f64::INFINITY };
            let lh = if d.is_finite() {
                ln_excess_power(d, ln1pd, alpha)
            } else {
                alpha * ln1pd
            };
            acc.add(m.lp + lh);
        }
        acc.value() - x * x / (2.0 * s2) - ln_norm
    };
    // h(r) <= r^α + α − 1 and r^α <= (1−q) + q L^α
    let lp_all = ln_sum_exp(live.iter().map(|m| m.lp));
    let w0 = ln_add_exp(
        ln_sum_exp(live.iter().map(|m| m.lp + m.la)),
        lp_all + (alpha - 1.0).ln(),
    );
    let w1 = ln_sum_exp(live.iter().map(|m| m.lp + m.lb));
    let envelopes = [envelope(w0, 0.0, alpha, sigma), envelope(w1, 1.0, alpha, sigma)];
    integrate_log(g, &envelopes, true, 1.0 / s2, sigma, opts)
}

fn check_sigma_alpha(sigma: f64, alpha: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!("sigma must be positive and finite, got {sigma}")));
    }
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(Error::arg(format!("alpha must be finite and > 1, got {alpha}")));
    }
    Ok(())
}

fn check_q(q: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::arg(format!("mixture weight q must lie in [0, 1], got {q}")));
    }
    Ok(())
}

/// Returns `alpha` as an integer if it is one (and small enough for closed forms).
pub(crate) fn integer_order(alpha: f64) -> Option<u64> {
    (alpha.fract() == 0.0 && (2.0..=100_000.0).contains(&alpha)).then_some(alpha as u64)
}

/// `ln(Ψ − 1)` for the two-point mixture at integer order:
/// `Σ_{k≥2} C(α,k) (1−q)^{α−k} q^k (e^{k(k−1)/(2σ²)} − 1)`.
pub(crate) fn ln_excess_two_point(q: f64, sigma: f64, alpha: u64) -> f64 {
    if q == 0.0 {
        return f64::NEG_INFINITY;
    }
    let s2 = sigma * sigma;
    let shift = |k: f64| k * (k - 1.0) / (2.0 * s2);
    if q == 1.0 {
        return ln_expm1(shift(alpha as f64));
    }
    let lq = q.ln();
    let l1q = (-q).ln_1p();
    let mut acc = LnAcc::new();
    let mut lc = (alpha as f64).ln(); // ln C(α, 1)
    for k in 2..=alpha {
        lc += ((alpha - k + 1) as f64 / k as f64).ln();
        let kf = k as f64;
        acc.add(lc + (alpha - k) as f64 * l1q + kf * lq + ln_expm1(shift(kf)));
    }
    acc.value()
}

/// Integer-order closed form of `ln Ψ_α((1−q)N(0,σ²) + qN(1,σ²) ‖ N(0,σ²))`.
pub fn ln_psi_two_point_closed(q: f64, sigma: f64, alpha: u64) -> Result<f64> {
    check_q(q)?;
    check_sigma_alpha(sigma, alpha as f64)?;
    Ok(ln1p_exp(ln_excess_two_point(q, sigma, alpha)))
}

/// Quadrature route for `ln Ψ_α` of the two-point mixture, any real `α > 1`.
pub fn ln_psi_two_point_quad(q: f64, sigma: f64, alpha: f64, opts: &QuadOptions) -> Result<f64> {
    check_q(q)?;
    check_sigma_alpha(sigma, alpha)?;
    if q == 0.0 {
        return Ok(0.0);
    }
    let pm = PairMixture {
        sigma,
        u: vec![(0.0, 0.0)],
        v: vec![(0.0, 1.0)],
    };
    let m = Member {
        lp: 0.0,
        la: (-q).ln_1p(),
        lb: q.ln(),
    };
    ln_fused(&pm, &[m], alpha, opts)
}

/// `ln Ψ_α((1−q)N(0,σ²) + qN(1,σ²) ‖ N(0,σ²))`.
///
/// Integer orders use the binomial closed form, other orders quadrature.
pub fn ln_psi_two_point(q: f64, sigma: f64, alpha: f64) -> Result<f64> {
    check_q(q)?;
    check_sigma_alpha(sigma, alpha)?;
    if q == 1.0 {
        return Ok(alpha * (alpha - 1.0) / (2.0 * sigma * sigma));
    }
    match integer_order(alpha) {
        Some(a) => ln_psi_two_point_closed(q, sigma, a),
        None => ln_psi_two_point_quad(q, sigma, alpha, &QuadOptions::default()),
    }
}

pub fn psi_two_point(q: f64, sigma: f64, alpha: f64) -> Result<f64> {
    ln_psi_two_point(q, sigma, alpha).map(f64::exp)
}

fn check_mixture(weights: &[f64], means: &[f64]) -> Result<()> {
    if weights.is_empty() || weights.len() != means.len() {
        return Err(Error::arg(format!(
            "mixture needs equal, nonzero numbers of weights and means ({} vs {})",
            weights.len(),
            means.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::arg("mixture weights must be finite and nonnegative"));
    }
    if means.iter().any(|m| !m.is_finite()) {
        return Err(Error::arg("mixture means must be finite"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::arg(format!("mixture weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Quadrature route for `ln Ψ_α` between `Σ w_i N(μ_i, σ²)` and `N(0, σ²)`.
pub fn ln_psi_mixture(weights: &[f64], means: &[f64], sigma: f64, alpha: f64, direction: Direction) -> Result<f64> {
    ln_psi_mixture_with(weights, means, sigma, alpha, direction, &QuadOptions::default())
}

pub fn ln_psi_mixture_with(
    weights: &[f64],
    means: &[f64],
    sigma: f64,
    alpha: f64,
    direction: Direction,
    opts: &QuadOptions,
) -> Result<f64> {
    check_mixture(weights, means)?;
    check_sigma_alpha(sigma, alpha)?;
    let u: Vec<(f64, f64)> = weights
        .iter()
        .zip(means)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, m)| (w.ln(), *m))
        .collect();
    if u.iter().all(|&(_, m)| m == 0.0) {
        return Ok(0.0);
    }
    let pm = PairMixture {
        sigma,
        u,
        v: Vec::new(),
    };
    let m = Member {
        lp: 0.0,
        la: 0.0,
        lb: f64::NEG_INFINITY,
    };
    let beta = match direction {
        Direction::MixtureVsBase => alpha,
        Direction::BaseVsMixture => 1.0 - alpha,
    };
    ln_fused(&pm, &[m], beta, opts)
}

pub fn psi_mixture(weights: &[f64], means: &[f64], sigma: f64, alpha: f64, direction: Direction) -> Result<f64> {
    ln_psi_mixture(weights, means, sigma, alpha, direction).map(f64::exp)
}

/// Upper limit on the number of multi-indices the closed form will visit.
pub const CLOSED_FORM_BUDGET: u128 = 20_000_000;

/// Integer-order closed form of `ln Ψ_α(Σ w_i N(μ_i, σ²) ‖ N(0, σ²))`.
///
/// Uses `E[Π_i L_{μ_i}^{k_i}] = exp((S² − Σ k_i μ_i²) / (2σ²))` with
/// `S = Σ k_i μ_i`. Integer means are grouped by `S` through a polynomial
/// power; other means enumerate the multinomial expansion.
pub fn ln_psi_mixture_closed(weights: &[f64], means: &[f64], sigma: f64, alpha: u64) -> Result<f64> {
    check_mixture(weights, means)?;
    check_sigma_alpha(sigma, alpha as f64)?;
    let s2 = sigma * sigma;
    let comps: Vec<(f64, f64)> = weights
        .iter()
        .zip(means)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, m)| (w.ln(), *m))
        .collect();

    if comps.iter().all(|(_, m)| m.fract() == 0.0 && m.abs() < 1e6) {
        let lo = comps.iter().map(|c| c.1 as i64).min().unwrap();
        let hi = comps.iter().map(|c| c.1 as i64).max().unwrap();
        let width = (hi - lo) as usize;
        // base polynomial in z^(μ - lo)
        let mut base = vec![f64::NEG_INFINITY; width + 1];
        for &(lw, mu) in &comps {
            let idx = (mu as i64 - lo) as usize;
            base[idx] = ln_add_exp(base[idx], lw - mu * mu / (2.0 * s2));
        }
        let mut poly = vec![0.0];
        for _ in 0..alpha {
            let mut next = vec![f64::NEG_INFINITY; poly.len() + width];
            for (i, &a) in poly.iter().enumerate() {
                if a == f64::NEG_INFINITY {
                    continue;
                }
                for (j, &b) in base.iter().enumerate() {
                    if b != f64::NEG_INFINITY {
                        next[i + j] = ln_add_exp(next[i + j], a + b);
                    }
                }
            }
            poly = next;
        }
        let offset = alpha as i64 * lo;
        return Ok(ln_sum_exp(poly.iter().enumerate().map(|(i, &c)| {
            let s = (i as i64 + offset) as f64;
            c + s * s / (2.0 * s2)
        })));
    }

    let count = ln_choose(alpha + comps.len() as u64 - 1, comps.len() as u64 - 1).exp();
    if count > CLOSED_FORM_BUDGET as f64 {
        return Err(Error::Budget {
            required: count as u128,
            limit: CLOSED_FORM_BUDGET,
        });
    }
    let mut acc = LnAcc::new();
    let mut k = vec![0u64; comps.len()];
    enumerate(&comps, alpha, 0, &mut k, s2, &mut acc);
    Ok(acc.value())
}

fn enumerate(comps: &[(f64, f64)], left: u64, idx: usize, k: &mut Vec<u64>, s2: f64, acc: &mut LnAcc) {
    if idx + 1 == comps.len() {
        k[idx] = left;
        let total: u64 = k.iter().sum();
        let mut ln_multi = ln_factorial(total);
        let mut s = 0.0;
        let mut sq = 0.0;
        let mut lw = 0.0;
        for (&ki, &(w, mu)) in k.iter().zip(comps) {
            ln_multi -= ln_factorial(ki);
            s += ki as f64 * mu;
            sq += ki as f64 * mu * mu;
            lw += ki as f64 * w;
        }
        acc.add(ln_multi + lw + (s * s - sq) / (2.0 * s2));
        return;
    }
    for ki in 0..=left {
        k[idx] = ki;
        enumerate(comps, left - ki, idx + 1, k, s2, acc);
    }
}

fn ln_factorial(k: u64) -> f64 {
    (2..=k).map(|j| (j as f64).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn q_zero_and_one() {
        assert_eq!(psi_two_point(0.0, 0.7, 3.0).unwrap(), 1.0);
        assert_eq!(psi_two_point(0.0, 0.7, 2.5).unwrap(), 1.0);
        for (s, a) in [(0.5, 2.0), (1.0, 3.0), (2.0, 16.0)] {
            let want = a * (a - 1.0) / (2.0 * s * s);
            assert!(close(ln_psi_two_point(1.0, s, a).unwrap(), want, 1e-15));
            let closed = ln_psi_two_point_closed(1.0, s, a as u64).unwrap();
            assert!(close(closed, want, 1e-14));
        }
    }

    #[test]
    fn hand_value_small_q() {
        let want = 0.99f64 * 0.99 + 2.0 * 0.99 * 0.01 + 1e-4 * std::f64::consts::E;
        let got = psi_two_point(0.01, 1.0, 2.0).unwrap();
        assert!(close(got, want, 1e-15));
        assert!(close(got, 1.000_171_828_182_846, 1e-15));
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let opts = QuadOptions::default();
        for &q in &[1e-4, 1e-2, 0.5] {
            for &s in &[0.5, 1.0, 2.0] {
                for a in [2u64, 5, 11, 32] {
                    let c = ln_psi_two_point_closed(q, s, a).unwrap();
                    let n = ln_psi_two_point_quad(q, s, a as f64, &opts).unwrap();
                    assert!(
                        (c - n).abs() < 1e-9 * c.abs().max(1e-300) || (c - n).abs() < 1e-15,
                        "q={q} s={s} a={a}: {c} vs {n}"
                    );
                }
            }
        }
    }

    #[test]
    fn mixture_reference_values() {
        // mpmath, 30 digits
        let fwd = ln_psi_mixture(&[0.9, 0.1], &[0.0, 2.0], 1.0, 2.0, Direction::MixtureVsBase).unwrap();
        assert!(close(fwd.exp(), 1.535_981_500_331_442_4, 1e-12));
        let rev = ln_psi_mixture(&[0.9, 0.1], &[0.0, 2.0], 1.0, 2.0, Direction::BaseVsMixture).unwrap();
        assert!(close(rev.exp(), 1.045_699_262_437_331_5, 1e-12));
        let closed = ln_psi_mixture_closed(&[0.9, 0.1], &[0.0, 2.0], 1.0, 2).unwrap();
        assert!(close(closed, fwd, 1e-12));
    }

    #[test]
    fn degenerate_mixtures() {
        assert_eq!(
            psi_mixture(&[1.0], &[0.0], 1.0, 3.0, Direction::MixtureVsBase).unwrap(),
            1.0
        );
        let q = 0.2;
        let two = ln_psi_two_point(q, 0.8, 4.0).unwrap();
        let mix = ln_psi_mixture(&[1.0 - q, q], &[0.0, 1.0], 0.8, 4.0, Direction::MixtureVsBase).unwrap();
        assert!(close(mix, two, 1e-11));
    }

    #[test]
    fn non_integer_means_enumerate() {
        let w = [0.5, 0.3, 0.2];
        let m = [0.0, 0.5, 1.5];
        let c = ln_psi_mixture_closed(&w, &m, 1.0, 6).unwrap();
        let q = ln_psi_mixture(&w, &m, 1.0, 6.0, Direction::MixtureVsBase).unwrap();
        assert!(close(c, q, 1e-11));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(psi_two_point(1.5, 1.0, 2.0).is_err());
        assert!(psi_two_point(0.5, 0.0, 2.0).is_err());
        assert!(psi_two_point(0.5, 1.0, 1.0).is_err());
        assert!(psi_mixture(&[0.5, 0.4], &[0.0, 1.0], 1.0, 2.0, Direction::MixtureVsBase).is_err());
        assert!(psi_mixture(&[1.0], &[0.0, 1.0], 1.0, 2.0, Direction::MixtureVsBase).is_err());
    }

    #[test]
    fn infinite_terms_saturate() {
        assert_eq!(ln_sum_exp([f64::INFINITY, f64::INFINITY, 1.0]), f64::INFINITY);
        assert_eq!(ln_add_exp(f64::INFINITY, f64::INFINITY), f64::INFINITY);
        assert_eq!(ln_add_exp(2.0, f64::INFINITY), f64::INFINITY);
    }

    #[test]
    fn log_helpers() {
        assert_eq!(ln_add_exp(f64::NEG_INFINITY, 1.0), 1.0);
        assert!(close(ln_sum_exp([0.0, 0.0]), 2f64.ln(), 1e-15));
        assert!(close(ln1p_exp(100.0), 100.0, 1e-15));
        assert!(close(ln_expm1(1e-10), (1e-10f64).ln(), 1e-9));
    }
}
