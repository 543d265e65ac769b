//! Rényi-DP accounting for Poisson positive sampling coupled with
//! without-replacement negative sampling.
//!
//! Per-iteration curves come from [`rdp_adaptive`] (sensitivity `C` via
//! frequency clipping), [`rdp_standard`] (linear sensitivity of constant
//! clipping) or [`rdp_naive`]. Curves compose additively and convert to
//! (ε, δ)-DP through [`rdp_to_dp`].

pub mod binomial;
mod bounds;
mod calibrate;
pub mod psi;
pub mod quad;

use std::fmt::Write as _;

pub use bounds::{effective_rate, rdp_adaptive, rdp_standard, rdp_standard_directions, StandardDirections};
pub use calibrate::calibrate_sigma;
pub use psi::{
    ln_psi_mixture, ln_psi_mixture_closed, ln_psi_two_point, ln_psi_two_point_closed, ln_psi_two_point_quad,
    psi_mixture, psi_two_point, Direction,
};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccountantParams {
    /// Positive edges after degree capping.
    pub m: u64,
    /// Node count.
    pub n: u64,
    /// Maximum node degree after capping.
    pub k: u64,
    /// Poisson inclusion probability of a positive edge.
    pub gamma: f64,
    pub k_neg: u64,
    /// Noise multiplier; the noise std is `sigma * C`.
    pub sigma: f64,
}

impl AccountantParams {
    /// Defaults of the reference parameter block.
    pub fn reference() -> Self {
        AccountantParams {
            m: 5_000_000,
            n: 1_000_000,
            k: 5,
            gamma: 1e-5,
            k_neg: 4,
            sigma: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::arg(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.n == 0 {
            return Err(Error::arg("n must be at least 1"));
        }
        if self.k_neg == 0 {
            return Err(Error::arg("k_neg must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::arg(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn with_sigma(self, sigma: f64) -> Self {
        AccountantParams { sigma, ..self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    Adaptive,
    Standard,
    /// `α / (2σ²)`, or `α / σ²` when `loose`.
    Naive {
        loose: bool,
    },
}

impl BoundKind {
    pub fn name(&self) -> &'static str {
        match self {
            BoundKind::Adaptive => "adaptive",
            BoundKind::Standard => "standard",
            BoundKind::Naive { .. } => "naive",
        }
    }
}

/// ε(α) over a strictly increasing grid of orders.
#[derive(Clone, Debug, PartialEq)]
pub struct RdpCurve {
    points: Vec<(f64, f64)>,
}

impl RdpCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::arg("curve orders must be strictly increasing"));
            }
        }
        for &(a, e) in &points {
            if !(a > 1.0 && a.is_finite()) {
                return Err(Error::arg(format!("order {a} is not finite and > 1")));
            }
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::arg(format!("epsilon {e} at order {a} is not finite and >= 0")));
            }
        }
        Ok(RdpCurve { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn eps_at(&self, alpha: f64) -> Option<f64> {
        self.points.iter().find(|p| p.0 == alpha).map(|p| p.1)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// CSV with header `alpha,eps`; shortest round-trip formatting, integral orders without a decimal point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,eps\n");
        for &(a, e) in &self.points {
            let _ = writeln!(out, "{a},{}", fmt_num(e));
        }
        out
    }
}

/// Shortest decimal that round-trips through `f64`, always with a decimal point or exponent.
pub fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DpResult {
    pub eps: f64,
    pub delta: f64,
    /// Order achieving the minimum; `None` when no mechanism has run.
    pub best_alpha: Option<f64>,
    pub iterations: u64,
}

/// Default orders: `1.25, 1.5, 1.75, 2, 3, ..., 256`.
pub fn default_alphas() -> Vec<f64> {
    let mut a = vec![1.25, 1.5, 1.75];
    a.extend((2..=256).map(|k| k as f64));
    a
}

/// Parses a grid spec: `default`, a comma list (`2,4,8.5`), or `lo:hi[:step]`.
pub fn parse_alpha_grid(spec: &str) -> Result<Vec<f64>> {
    let spec = spec.trim();
    if spec.is_empty() || spec == "default" {
        return Ok(default_alphas());
    }
    let bad = || Error::arg(format!("invalid alpha grid {spec:?}"));
    let mut out: Vec<f64> = if spec.contains(':') {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let (lo, hi, step) = match parts.as_slice() {
            [lo, hi] => (*lo, *hi, 1.0),
            [lo, hi, st] => (*lo, *hi, *st),
            _ => return Err(bad()),
        };
        if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(bad());
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| lo + step * i as f64).collect()
    } else {
        spec.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    out.sort_by(f64::total_cmp);
    out.dedup();
    if out.is_empty() || out.iter().any(|a| !(*a > 1.0 && a.is_finite())) {
        return Err(Error::arg(format!(
            "alpha grid {spec:?} must contain finite orders > 1"
        )));
    }
    Ok(out)
}

/// `α / (2σ²)`.
pub fn rdp_naive(sigma: f64, alpha: f64) -> f64 {
    alpha / (2.0 * sigma * sigma)
}

pub fn rdp_curve(params: &AccountantParams, alphas: &[f64], kind: BoundKind) -> Result<RdpCurve> {
    params.validate()?;
    let mut points = Vec::with_capacity(alphas.len());
    for &a in alphas {
        let e = match kind {
            BoundKind::Adaptive => rdp_adaptive(params, a)?,
            BoundKind::Standard => rdp_standard(params, a)?,
            BoundKind::Naive { loose: false } => rdp_naive(params.sigma, a),
            BoundKind::Naive { loose: true } => 2.0 * rdp_naive(params.sigma, a),
        };
        points.push((a, e));
    }
    RdpCurve::new(points)
}

/// `T`-fold composition: ε_T(α) = T ε(α).
pub fn compose(curve: &RdpCurve, iterations: u64) -> RdpCurve {
    RdpCurve {
        points: curve.points.iter().map(|&(a, e)| (a, e * iterations as f64)).collect(),
    }
}

/// Conversion bound at a single order:
/// `ε + ln((α−1)/α) − (ln δ + ln α)/(α−1)`.
pub fn dp_from_rdp_point(alpha: f64, eps: f64, delta: f64) -> f64 {
    eps + ((alpha - 1.0) / alpha).ln() - (delta.ln() + alpha.ln()) / (alpha - 1.0)
}

/// Best (ε, δ) over the curve's orders, clamped at zero.
pub fn rdp_to_dp(curve: &RdpCurve, delta: f64) -> Result<DpResult> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::arg(format!("delta must lie in (0, 1), got {delta}")));
    }
    if curve.is_empty() {
        return Err(Error::arg("cannot convert an empty curve"));
    }
    let (alpha, eps) = curve
        .points
        .iter()
        .map(|&(a, e)| (a, dp_from_rdp_point(a, e, delta)))
        .fold(
            (f64::NAN, f64::INFINITY),
            |best, cur| {
                if cur.1 < best.1 {
                    cur
                } else {
                    best
                }
            },
        );
    Ok(DpResult {
        eps: eps.max(0.0),
        delta,
        best_alpha: Some(alpha),
        iterations: 0,
    })
}

/// (ε, δ) after `iterations` steps of a mechanism with per-step curve `per_step`.
/// Zero iterations release nothing and report ε = 0.
pub fn composite_dp(per_step: &RdpCurve, iterations: u64, delta: f64) -> Result<DpResult> {
    if iterations == 0 {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::arg(format!("delta must lie in (0, 1), got {delta}")));
        }
        return Ok(DpResult {
            eps: 0.0,
            delta,
            best_alpha: None,
            iterations: 0,
        });
    }
    let mut r = rdp_to_dp(&compose(per_step, iterations), delta)?;
    r.iterations = iterations;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_values() {
        assert_eq!(rdp_naive(0.5, 2.0), 4.0);
        assert_eq!(rdp_naive(1.0, 2.0), 1.0);
        assert!((rdp_naive(0.7, 1.0 + 1e-12) - 1.0 / (2.0 * 0.49)).abs() < 1e-11);
    }

    #[test]
    fn composition() {
        let c = RdpCurve::new(vec![(2.0, 0.001), (3.0, 0.002)]).unwrap();
        assert!(compose(&c, 0).points().iter().all(|p| p.1 == 0.0));
        assert_eq!(compose(&c, 1), c);
        assert!((compose(&c, 100).eps_at(2.0).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn conversion_reference_value() {
        // mpmath: 1 + ln(1/2) - (ln 1e-6 + ln 2)
        let c = RdpCurve::new(vec![(2.0, 1.0)]).unwrap();
        let r = rdp_to_dp(&c, 1e-6).unwrap();
        assert!((r.eps - 13.429_216_196_844_383).abs() < 1e-12);
        assert_eq!(r.best_alpha, Some(2.0));
    }

    #[test]
    fn conversion_of_zero_curve() {
        let alphas = default_alphas();
        let zero = RdpCurve::new(alphas.iter().map(|&a| (a, 0.0)).collect()).unwrap();
        let r = rdp_to_dp(&zero, 1e-5).unwrap();
        let want = alphas
            .iter()
            .map(|&a| dp_from_rdp_point(a, 0.0, 1e-5))
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        assert_eq!(r.eps, want);
        assert_eq!(r.best_alpha, Some(256.0));
    }

    #[test]
    fn conversion_monotone_in_delta() {
        let c = RdpCurve::new(vec![(2.0, 0.5), (8.0, 3.0), (32.0, 20.0)]).unwrap();
        let mut prev = f64::INFINITY;
        for d in [1e-12, 1e-9, 1e-6, 1e-3, 0.1] {
            let e = rdp_to_dp(&c, d).unwrap().eps;
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn conversion_errors() {
        assert!(rdp_to_dp(&RdpCurve::new(vec![]).unwrap(), 1e-5).is_err());
        let c = RdpCurve::new(vec![(2.0, 1.0)]).unwrap();
        assert!(rdp_to_dp(&c, 0.0).is_err());
        assert!(rdp_to_dp(&c, 1.0).is_err());
    }

    #[test]
    fn zero_iterations_report_zero() {
        let c = RdpCurve::new(vec![(2.0, 1.0)]).unwrap();
        let r = composite_dp(&c, 0, 1e-5).unwrap();
        assert_eq!((r.eps, r.best_alpha), (0.0, None));
        let r = composite_dp(&c, 3, 1e-5).unwrap();
        assert_eq!(r.iterations, 3);
    }

    #[test]
    fn grids() {
        let d = default_alphas();
        assert_eq!(d.len(), 258);
        assert_eq!(&d[..4], &[1.25, 1.5, 1.75, 2.0]);
        assert_eq!(parse_alpha_grid("2").unwrap(), vec![2.0]);
        assert_eq!(parse_alpha_grid("4, 2,2").unwrap(), vec![2.0, 4.0]);
        assert_eq!(parse_alpha_grid("2:4").unwrap(), vec![2.0, 3.0, 4.0]);
        assert_eq!(parse_alpha_grid("2:3:0.5").unwrap(), vec![2.0, 2.5, 3.0]);
        assert_eq!(parse_alpha_grid("default").unwrap(), d);
        for bad in ["1", "0.5,2", "x", "2:1", "2:4:0", "2:3:4:5", "inf"] {
            assert!(parse_alpha_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn curve_validation_and_csv() {
        assert!(RdpCurve::new(vec![(3.0, 1.0), (2.0, 1.0)]).is_err());
        assert!(RdpCurve::new(vec![(2.0, -1.0)]).is_err());
        let c = RdpCurve::new(vec![(2.0, 4.0), (2.5, 1e-7)]).unwrap();
        assert_eq!(c.to_csv(), "alpha,eps\n2,4.0\n2.5,1e-7\n");
    }
}
