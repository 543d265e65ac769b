//! Binomial expectations of `Ψ` over the positive-sample count `ℓ ~ Bin(m, γ)`.
//!
//! The sum is evaluated exactly on a window around the mean and the two tails
//! are replaced by upper bounds, so a truncated result never understates ε.
//! The window grows until both tails are below `TAIL_RTOL` of the body.
//!
//! Tail bounds:
//! - every per-`ℓ` quantity is convex in `ℓ`, so below the window it is at most
//!   `max(F(0), F(lo))`;
//! - forward quantities obey `F(ℓ) ≤ (ℓ/hi)^α F(hi)` above the window, because
//!   the mixture weight is linear through the origin in `ℓ`;
//! - the reverse quantity obeys `F(ℓ) ≤ ((1−t_hi)/(1−t_ℓ))^{α−1} F(hi)` and is
//!   bounded by a constant once the shifted weight `t_ℓ` reaches one half.

use std::collections::{HashMap, HashSet};
use std::sync::{Mutex, OnceLock};

use super::binomial::{ln_choose, ln_lower_tail, ln_pmf, ln_weighted_upper_tail};
use super::psi::{
    integer_order, ln1p_exp, ln_add_exp, ln_excess_two_point, ln_fused, ln_fused_excess, ln_sum_exp, LnAcc, Member,
    PairMixture,
};
use super::quad::QuadOptions;
use super::AccountantParams;
use crate::error::{Error, Result};

const TAIL_RTOL: f64 = 1e-14;
const MAX_WIDEN: usize = 64;

/// `Γ_ℓ = 1 − (1−γ)^K (1 − ℓ k_neg / n)`, clamped to `[0, 1]`.
pub fn effective_rate(params: &AccountantParams, ell: u64) -> f64 {
    if ell.saturating_mul(params.k_neg) > params.n && first_clamp(params) {
        log::warn!(
            "effective rate clamped to 1 at ell={ell} (ell*k_neg={} > n={})",
            ell.saturating_mul(params.k_neg),
            params.n
        );
    }
    let l1g = ln_one_minus_rate(params, ell);
    (-l1g.exp_m1()).clamp(0.0, 1.0)
}

/// `ln(1 − Γ_ℓ)`; `-inf` once `ℓ k_neg ≥ n`.
fn ln_one_minus_rate(p: &AccountantParams, ell: u64) -> f64 {
    let frac = shifted_fraction(p, ell);
    if frac >= 1.0 {
        return f64::NEG_INFINITY;
    }
    let positive = if p.k == 0 { 0.0 } else { p.k as f64 * (-p.gamma).ln_1p() };
    positive + (-frac).ln_1p()
}

/// `min(1, ℓ k_neg / n)`.
fn shifted_fraction(p: &AccountantParams, ell: u64) -> f64 {
    (ell as f64 * p.k_neg as f64 / p.n as f64).min(1.0)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(Error::arg(format!("alpha must be finite and > 1, got {alpha}")));
    }
    Ok(())
}

fn finite_eps(v: f64, p: &AccountantParams, alpha: f64) -> Result<f64> {
    if v.is_nan() {
        return Err(Error::numeric(format!(
            "bound evaluated to NaN at alpha={alpha} for {p:?}"
        )));
    }
    Ok(v)
}

/// A per-`ℓ` quantity `F(ℓ) ≥ 0` averaged over `Bin(m, γ)`.
trait Summand {
    /// `ln F(ℓ)`.
    fn single(&mut self, ell: u64) -> Result<f64>;
    /// `ln Σ_{lo ≤ ℓ ≤ hi} P(ℓ) F(ℓ)`.
    fn body(&mut self, lo: u64, hi: u64) -> Result<f64>;
    /// Upper bound on `ln Σ_{ℓ > hi} P(ℓ) F(ℓ)`, `None` while `hi` is too close to the mode.
    fn upper_tail(&mut self, hi: u64) -> Result<Option<f64>>;
}

/// `ln E_{ℓ~Bin(m,γ)} F(ℓ)` with conservative tails.
fn expectation<S: Summand>(s: &mut S, m: u64, gamma: f64) -> Result<f64> {
    if m == 0 {
        return s.single(0);
    }
    if gamma >= 1.0 {
        return s.single(m);
    }
    let mf = m as f64;
    let mean = mf * gamma;
    let sd = (mean * (1.0 - gamma)).sqrt();
    let mut lo = (mean - 8.0 * sd - 2.0).floor().max(0.0) as u64;
    let mut hi = ((mean + 8.0 * sd + 2.0).ceil().min(mf) as u64).max(1).min(m);
    let ln_tol = TAIL_RTOL.ln();
    for _ in 0..MAX_WIDEN {
        let body = s.body(lo, hi)?;
        let lower = if lo == 0 {
            Some(f64::NEG_INFINITY)
        } else {
            match ln_lower_tail(lo - 1, m, gamma) {
                Some(mass) => Some(s.single(0)?.max(s.single(lo)?) + mass),
                None => None,
            }
        };
        let upper = if hi >= m {
            Some(f64::NEG_INFINITY)
        } else {
            s.upper_tail(hi)?
        };
        let lower_ok = lower.is_some_and(|l| l == f64::NEG_INFINITY || l - body < ln_tol);
        let upper_ok = upper.is_some_and(|u| u == f64::NEG_INFINITY || u - body < ln_tol);
        if lower_ok && upper_ok {
            let sur = ln_add_exp(lower.unwrap(), upper.unwrap());
            return Ok(ln_add_exp(body, sur));
        }
        if !lower_ok {
            lo /= 2;
        }
        if !upper_ok {
            let grow = ((hi as f64 - mean).max(8.0)).ceil() as u64;
            hi = hi.saturating_add(grow).min(m);
        }
    }
    Err(Error::numeric(format!(
        "binomial window did not converge (m={m}, gamma={gamma}, window=[{lo}, {hi}])"
    )))
}

fn pmf(m: u64, gamma: f64, ell: u64) -> f64 {
    ln_pmf(ell, m, gamma)
}

fn cached(cache: &mut HashMap<u64, f64>, ell: u64, f: impl FnOnce() -> Result<f64>) -> Result<f64> {
    if let Some(v) = cache.get(&ell) {
        return Ok(*v);
    }
    let v = f()?;
    cache.insert(ell, v);
    Ok(v)
}

/// True the first time a given `(n, k_neg)` pair clamps in this process.
fn first_clamp(p: &AccountantParams) -> bool {
    static SEEN: OnceLock<Mutex<HashSet<(u64, u64)>>> = OnceLock::new();
    let seen = SEEN.get_or_init(|| Mutex::new(HashSet::new()));
    seen.lock().map_or(true, |mut s| s.insert((p.n, p.k_neg)))
}

fn warn_clamp(p: &AccountantParams, hi: u64) {
    if hi.saturating_mul(p.k_neg) > p.n && first_clamp(p) {
        log::warn!(
            "binomial window reaches ell={hi} where ell*k_neg exceeds n={}; mixture weight clamped to 1",
            p.n
        );
    }
}

/// `D(ℓ) = Ψ_α(Γ_ℓ) − 1` for the adaptive bound.
struct AdaptiveExcess<'a> {
    p: &'a AccountantParams,
    alpha: f64,
    integer: Option<u64>,
    opts: QuadOptions,
    cache: HashMap<u64, f64>,
}

impl AdaptiveExcess<'_> {
    fn member(&self, ell: u64, lp: f64) -> Member {
        let la = ln_one_minus_rate(self.p, ell);
        Member {
            lp,
            la,
            lb: (-la.exp_m1()).ln(),
        }
    }
}

impl Summand for AdaptiveExcess<'_> {
    fn single(&mut self, ell: u64) -> Result<f64> {
        let m = self.member(ell, 0.0);
        let (sigma, alpha, integer, opts) = (self.p.sigma, self.alpha, self.integer, self.opts);
        cached(&mut self.cache, ell, || match integer {
            Some(a) => Ok(ln_excess_two_point(m.lb.exp(), sigma, a)),
            None => ln_fused_excess(sigma, &[m], alpha, &opts),
        })
    }

    fn body(&mut self, lo: u64, hi: u64) -> Result<f64> {
        warn_clamp(self.p, hi);
        let (m, g) = (self.p.m, self.p.gamma);
        if self.integer.is_some() {
            let mut acc = LnAcc::new();
            for ell in lo..=hi {
                let lp = pmf(m, g, ell);
                if lp > f64::NEG_INFINITY {
                    acc.add(lp + self.single(ell)?);
                }
            }
            return Ok(acc.value());
        }
        let members: Vec<Member> = (lo..=hi).map(|ell| self.member(ell, pmf(m, g, ell))).collect();
        ln_fused_excess(self.p.sigma, &members, self.alpha, &self.opts)
    }

    fn upper_tail(&mut self, hi: u64) -> Result<Option<f64>> {
        // D(ℓ) ≤ Ψ(ℓ) ≤ (ℓ/hi)^α Ψ(hi)
        let psi_hi = ln1p_exp(self.single(hi)?);
        Ok(ln_weighted_upper_tail(hi + 1, self.p.m, self.p.gamma, self.alpha, hi as f64).map(|t| t + psi_hi))
    }
}

/// `ε(α)` of the adaptive-clipping bound:
/// `ln E_ℓ Ψ_α((1−Γ_ℓ) N(0,σ²) + Γ_ℓ N(1,σ²) ‖ N(0,σ²)) / (α−1)`.
pub fn rdp_adaptive(params: &AccountantParams, alpha: f64) -> Result<f64> {
    params.validate()?;
    check_alpha(alpha)?;
    let mut s = AdaptiveExcess {
        p: params,
        alpha,
        integer: integer_order(alpha),
        opts: QuadOptions::default(),
        cache: HashMap::new(),
    };
    let ln_excess = expectation(&mut s, params.m, params.gamma)?;
    finite_eps(ln1p_exp(ln_excess) / (alpha - 1.0), params, alpha)
}

/// Both directions of the standard-clipping bound, already divided by `α − 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StandardDirections {
    pub forward: f64,
    pub reverse: f64,
}

/// The `2(K+1)`-component mixture: `U = Σ A_i L_i`, `V = Σ A_i L_{i+2}` with
/// `A_i = C(K,i) γ^i (1−γ)^{K−i}`, mixed as `(1−t_ℓ) U + t_ℓ V`.
struct StandardMixture<'a> {
    p: &'a AccountantParams,
    alpha: f64,
    beta: f64,
    pm: PairMixture,
    opts: QuadOptions,
    cache: HashMap<u64, f64>,
}

impl<'a> StandardMixture<'a> {
    fn new(p: &'a AccountantParams, alpha: f64, forward: bool) -> Self {
        let k = p.k;
        let lg = p.gamma.ln();
        let l1g = (-p.gamma).ln_1p();
        let mut u = Vec::new();
        let mut v = Vec::new();
        for i in 0..=k {
            let la = ln_choose(k, i)
                + if i == 0 { 0.0 } else { i as f64 * lg }
                + if i == k { 0.0 } else { (k - i) as f64 * l1g };
            if la > f64::NEG_INFINITY {
                u.push((la, i as f64));
                v.push((la, (i + 2) as f64));
            }
        }
        StandardMixture {
            p,
            alpha,
            beta: if forward { alpha } else { 1.0 - alpha },
            pm: PairMixture { sigma: p.sigma, u, v },
            opts: QuadOptions::default(),
            cache: HashMap::new(),
        }
    }

    fn forward(&self) -> bool {
        self.beta > 1.0
    }

    fn member(&self, ell: u64, lp: f64) -> Member {
        let t = shifted_fraction(self.p, ell);
        Member {
            lp,
            la: (-t).ln_1p(),
            lb: t.ln(),
        }
    }

    fn ln_upper_mass(&self, above: u64) -> Option<f64> {
        ln_weighted_upper_tail(above + 1, self.p.m, self.p.gamma, 0.0, 1.0)
    }

    /// `ln(E[U^β] + E[V^β])` bounded through `U ≥ A_i L_i`.
    fn reverse_constant(&self) -> f64 {
        let s2 = self.p.sigma * self.p.sigma;
        let b = self.beta;
        let side = |comps: &[(f64, f64)]| {
            comps
                .iter()
                .map(|&(la, mu)| b * la + (b * b - b) * mu * mu / (2.0 * s2))
                .fold(f64::INFINITY, f64::min)
        };
        ln_add_exp(side(&self.pm.u), side(&self.pm.v))
    }
}

impl Summand for StandardMixture<'_> {
    fn single(&mut self, ell: u64) -> Result<f64> {
        let m = self.member(ell, 0.0);
        let (pm, beta, opts) = (&self.pm, self.beta, self.opts);
        if let Some(v) = self.cache.get(&ell) {
            return Ok(*v);
        }
        let v = ln_fused(pm, &[m], beta, &opts)?;
        self.cache.insert(ell, v);
        Ok(v)
    }

    fn body(&mut self, lo: u64, hi: u64) -> Result<f64> {
        warn_clamp(self.p, hi);
        let (m, g) = (self.p.m, self.p.gamma);
        let members: Vec<Member> = (lo..=hi)
            .map(|ell| self.member(ell, pmf(m, g, ell)))
            .filter(|mb| mb.lp > f64::NEG_INFINITY)
            .collect();
        ln_fused(&self.pm, &members, self.beta, &self.opts)
    }

    fn upper_tail(&mut self, hi: u64) -> Result<Option<f64>> {
        let f_hi = self.single(hi)?;
        if self.forward() {
            return Ok(ln_weighted_upper_tail(hi + 1, self.p.m, self.p.gamma, self.alpha, hi as f64).map(|t| t + f_hi));
        }
        let p = self.p;
        let am1 = self.alpha - 1.0;
        let t_hi = shifted_fraction(p, hi);
        // first ℓ with t_ℓ ≥ 1/2
        let half = p.n.div_ceil(2 * p.k_neg);
        let l1t = |ell: u64| (-shifted_fraction(p, ell)).ln_1p();
        let mut parts = Vec::new();
        if hi + 1 < half {
            let h2 = (2 * hi).min(half - 1);
            let Some(mass) = self.ln_upper_mass(hi) else {
                return Ok(None);
            };
            parts.push(mass + am1 * ((-t_hi).ln_1p() - l1t(h2)) + f_hi);
            if h2 < half - 1 {
                let Some(mass) = self.ln_upper_mass(h2) else {
                    return Ok(None);
                };
                parts.push(mass + am1 * ((-t_hi).ln_1p() - l1t(half - 1)) + f_hi);
            }
        }
        let from = half.max(hi + 1);
        let Some(mass) = self.ln_upper_mass(from - 1) else {
            return Ok(None);
        };
        parts.push(mass + self.reverse_constant());
        Ok(Some(ln_sum_exp(parts)))
    }
}

/// Forward and reverse standard-clipping bounds at order `α`.
pub fn rdp_standard_directions(params: &AccountantParams, alpha: f64) -> Result<StandardDirections> {
    params.validate()?;
    check_alpha(alpha)?;
    let mut fwd = StandardMixture::new(params, alpha, true);
    let mut rev = StandardMixture::new(params, alpha, false);
    let lf = expectation(&mut fwd, params.m, params.gamma)?;
    let lr = expectation(&mut rev, params.m, params.gamma)?;
    finite_eps(lf, params, alpha)?;
    finite_eps(lr, params, alpha)?;
    Ok(StandardDirections {
        forward: lf.max(0.0) / (alpha - 1.0),
        reverse: lr.max(0.0) / (alpha - 1.0),
    })
}

/// `ε(α)` of the standard-clipping bound: the larger of the two directions.
pub fn rdp_standard(params: &AccountantParams, alpha: f64) -> Result<f64> {
    let d = rdp_standard_directions(params, alpha)?;
    Ok(d.forward.max(d.reverse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accountant::psi::ln_psi_two_point;

    fn defaults() -> AccountantParams {
        AccountantParams::reference()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs()
    }

    #[test]
    fn effective_rate_values() {
        let p = defaults();
        // mpmath, 50 digits
        assert!(close(effective_rate(&p, 50), 2.499_890_002_099_98e-4, 1e-13));
        let full = AccountantParams { n: 200, k_neg: 4, ..p };
        assert_eq!(effective_rate(&full, 50), 1.0);
        assert_eq!(effective_rate(&full, 80), 1.0);
        let g0 = effective_rate(&p, 0);
        assert!(close(g0, -(5.0 * (-1e-5f64).ln_1p()).exp_m1(), 1e-15));
    }

    #[test]
    fn adaptive_reference_values() {
        // mpmath over the full binomial support, 40 digits
        let p = defaults();
        let cases = [
            (1.25, 1.958_353_473_463_61e-6),
            (1.5, 2.404_879_036_680_49e-6),
            (2.0, 3.392_457_648_59e-6),
            (3.0, 6.407_774_66e-6),
            (4.0, 4.747_696_059_2e-5),
            (6.0, 2.084_183_486),
            (8.0, 6.569_806_381_96),
            (16.0, 23.245_663_235_9),
            (32.0, 55.608_100_983_2),
            (64.0, 119.869_216_779),
            (128.0, 248.121_596_383),
        ];
        for (a, want) in cases {
            let got = rdp_adaptive(&p, a).unwrap();
            assert!(close(got, want, 1e-9), "alpha={a}: {got} vs {want}");
        }
    }

    #[test]
    fn zero_edges_is_single_term() {
        let p = AccountantParams { m: 0, ..defaults() };
        let g0 = effective_rate(&p, 0);
        for a in [2.0, 8.0, 2.5] {
            let want = ln_psi_two_point(g0, p.sigma, a).unwrap() / (a - 1.0);
            let got = rdp_adaptive(&p, a).unwrap();
            assert!(close(got, want, 1e-9), "alpha={a}");
        }
        assert!(close(rdp_adaptive(&p, 2.0).unwrap(), 1.339_900_063_983_909_4e-7, 1e-9));
        assert!(close(rdp_adaptive(&p, 8.0).unwrap(), 4.681_705_670_048_336, 1e-9));
    }

    #[test]
    fn standard_reference_values() {
        // mpmath: polynomial expansion (forward) and direct quadrature (reverse)
        let p = defaults();
        let d = rdp_standard_directions(&p, 2.0).unwrap();
        assert!(close(d.forward, 63.856_162_090_122_4, 1e-9), "{}", d.forward);
        assert!(close(d.reverse, 9.281_946_262_357_34e-5, 1e-7), "{}", d.reverse);
        let d = rdp_standard_directions(&p, 3.0).unwrap();
        assert!(close(d.forward, 194.906_592_034_745, 1e-9), "{}", d.forward);
    }

    #[test]
    fn standard_dominates_adaptive() {
        let p = defaults();
        for a in [1.5, 2.0, 5.0, 17.0, 64.0] {
            assert!(rdp_standard(&p, a).unwrap() >= rdp_adaptive(&p, a).unwrap());
        }
    }

    #[test]
    fn standard_without_degree_collapses() {
        let p = AccountantParams {
            k: 0,
            m: 10,
            n: 1_000_000_000_000,
            k_neg: 1,
            gamma: 0.01,
            ..defaults()
        };
        let e = rdp_standard(&p, 2.0).unwrap();
        assert!(e < 1e-9, "{e}");
    }

    #[test]
    fn tiny_rate_vanishes() {
        let p = AccountantParams {
            gamma: 1e-12,
            n: 1 << 50,
            m: 1000,
            ..defaults()
        };
        assert!(rdp_adaptive(&p, 2.0).unwrap() < 1e-18);
    }

    #[test]
    fn full_rate_is_pure_shift() {
        let p = AccountantParams {
            gamma: 1.0,
            m: 3,
            n: 12,
            k_neg: 4,
            ..defaults()
        };
        // Γ_3 = 1
        assert!(close(rdp_adaptive(&p, 3.0).unwrap(), 3.0 / (2.0 * 0.25), 1e-12));
    }

    #[test]
    fn rejects_bad_orders() {
        assert!(rdp_adaptive(&defaults(), 1.0).is_err());
        assert!(rdp_standard(&defaults(), f64::NAN).is_err());
    }

    #[test]
    fn reverse_direction_when_members_drop_components() {
        // K = 0 and ℓ·k_neg reaches n: ℓ = 0 has no shifted part, ℓ ≥ 50 no base part
        let p = AccountantParams {
            m: 1428,
            n: 50,
            k: 0,
            gamma: 1e-4,
            k_neg: 1,
            sigma: 0.4,
        };
        for (alpha, want) in [
            (10.5, 105.271441033845),
            (36.0, 442.948676852044),
            (128.0, 1598.0567219671),
        ] {
            let got = rdp_standard_directions(&p, alpha).unwrap().reverse;
            assert!((got / want - 1.0).abs() < 1e-11, "alpha {alpha}: {got} vs {want}");
        }
    }

    #[test]
    fn zero_cap_with_certain_sampling() {
        // ℓ = 1 always and Γ = 1/50
        let p = AccountantParams {
            m: 1,
            n: 50,
            k: 0,
            gamma: 1.0,
            k_neg: 1,
            sigma: 0.4,
        };
        assert_eq!(effective_rate(&p, 1), 0.02);
        for alpha in [1.5, 2.0, 7.0] {
            let want = ln_psi_two_point(0.02, 0.4, alpha).unwrap() / (alpha - 1.0);
            let got = rdp_adaptive(&p, alpha).unwrap();
            assert!((got / want - 1.0).abs() < 1e-12, "{got} vs {want}");
        }
    }
}
