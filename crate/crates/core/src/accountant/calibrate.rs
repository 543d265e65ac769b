use super::{composite_dp, rdp_curve, AccountantParams, BoundKind};
use crate::error::{Error, Result};

const SIGMA_LO: f64 = 1e-2;
const SIGMA_HI: f64 = 1e3;
const MAX_STEPS: usize = 200;

/// Smallest noise multiplier found whose composed (ε, δ) lies in `[0.99, 1] · target`.
///
/// Bisects `ln σ` over `[1e-2, 1e3]`, relying on ε being nonincreasing in σ.
/// The `sigma` field of `params` is ignored.
pub fn calibrate_sigma(
    target_eps: f64,
    delta: f64,
    iterations: u64,
    params: &AccountantParams,
    kind: BoundKind,
    alphas: &[f64],
) -> Result<f64> {
    if !(target_eps > 0.0 && target_eps.is_finite()) {
        return Err(Error::arg(format!(
            "calibration needs a finite positive target epsilon, got {target_eps}"
        )));
    }
    let eps_at = |sigma: f64| -> Result<f64> {
        let curve = rdp_curve(&params.with_sigma(sigma), alphas, kind)?;
        Ok(composite_dp(&curve, iterations, delta)?.eps)
    };
    let accept = |e: f64| e <= target_eps && e >= 0.99 * target_eps;

    let e_lo = eps_at(SIGMA_LO)?;
    let e_hi = eps_at(SIGMA_HI)?;
    let failure = || Error::Calibration {
        target: target_eps,
        sigma_lo: SIGMA_LO,
        eps_at_lo: e_lo,
        sigma_hi: SIGMA_HI,
        eps_at_hi: e_hi,
    };
    if accept(e_lo) {
        return Ok(SIGMA_LO);
    }
    if e_hi > target_eps || e_lo < 0.99 * target_eps {
        return Err(failure());
    }
    let (mut lo, mut hi) = (SIGMA_LO, SIGMA_HI);
    let mut e = e_hi;
    for _ in 0..MAX_STEPS {
        if accept(e) {
            return Ok(hi);
        }
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        let em = eps_at(mid)?;
        if em <= target_eps {
            hi = mid;
            e = em;
        } else {
            lo = mid;
        }
    }
    if accept(e) {
        Ok(hi)
    } else {
        Err(failure())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_targets() {
        let p = AccountantParams::reference();
        let alphas = [2.0, 8.0];
        for t in [f64::INFINITY, 0.0, -1.0, f64::NAN] {
            assert!(matches!(
                calibrate_sigma(t, 1e-5, 10, &p, BoundKind::Adaptive, &alphas),
                Err(Error::Argument(_))
            ));
        }
    }

    #[test]
    fn naive_round_trip() {
        let p = AccountantParams::reference();
        let alphas: Vec<f64> = (2..=64).map(f64::from).collect();
        let s = calibrate_sigma(3.0, 1e-5, 100, &p, BoundKind::Naive { loose: false }, &alphas).unwrap();
        let curve = rdp_curve(&p.with_sigma(s), &alphas, BoundKind::Naive { loose: false }).unwrap();
        let e = composite_dp(&curve, 100, 1e-5).unwrap().eps;
        assert!((2.97..=3.0).contains(&e), "{e}");
    }

    #[test]
    fn unreachable_target_reports_bracket() {
        let p = AccountantParams::reference();
        let err = calibrate_sigma(1e-9, 1e-5, 100, &p, BoundKind::Naive { loose: false }, &[2.0]).unwrap_err();
        assert!(matches!(err, Error::Calibration { .. }));
    }
}
