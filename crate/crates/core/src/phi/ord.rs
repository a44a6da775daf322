use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extended::Extended;

use super::{DeformedLogExp, PhiSpec};

/// Allowed gap between declared and fitted exponents.
pub const FIT_TOLERANCE: f64 = 0.02;

/// Growth-exponent diagnostics for a generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrdReport {
    pub delta_zero_est: f64,
    pub delta_inf_est: f64,
    /// Order of `ln_phi` at 0.
    pub delta_prime_est: f64,
    pub ord_bound: f64,
    /// Declared `max(delta_zero, delta_inf) < ord_bound`.
    pub admissible: bool,
    pub p_phi: Extended,
    /// `delta_prime <= max(delta_zero, 0)` within [`FIT_TOLERANCE`].
    pub log_order_bound_holds: bool,
}

/// Least-squares slope of `y` against `x`.
fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Samples `f` at 31 log-spaced points over `[10^lo, 10^hi]` and returns the
/// log-log slope.
fn log_log_slope(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let pts: Vec<(f64, f64)> = (0..=30)
        .map(|k| {
            let e = lo + (hi - lo) * k as f64 / 30.0;
            let s = 10f64.powf(e);
            (s.ln(), f(s).ln())
        })
        .collect();
    slope(&pts)
}

/// Checks the declared exponents of `spec` against log-log fits over three
/// decades at each end and evaluates the class membership `max(delta) < a`.
pub fn validate_ord(spec: &PhiSpec, a: f64) -> Result<OrdReport> {
    let phi = |s: f64| spec.eval(s);
    let delta_zero_est = log_log_slope(-9.0, -6.0, phi) - 1.0;
    let delta_inf_est = log_log_slope(6.0, 9.0, phi) - 1.0;
    for (name, declared, fitted) in [
        ("delta_zero", spec.delta_zero(), delta_zero_est),
        ("delta_inf", spec.delta_inf(), delta_inf_est),
    ] {
        if !fitted.is_finite() || (declared - fitted).abs() > FIT_TOLERANCE {
            return Err(Error::Metadata {
                name: name.into(),
                declared,
                fitted,
            });
        }
    }

    // t^delta ln_phi(t) has a limit at 0 iff delta >= -slope of ln|ln_phi|
    // (for unbounded ln_phi) and for every delta >= 0 when ln_phi is bounded.
    let lx = DeformedLogExp::new(spec)?;
    let log_slope = log_log_slope(-60.0, -57.0, |t| lx.ln_unchecked(t).abs());
    let delta_prime_est = (-log_slope).max(0.0);

    Ok(OrdReport {
        delta_zero_est,
        delta_inf_est,
        delta_prime_est,
        ord_bound: a,
        admissible: spec.max_delta() < a,
        p_phi: spec.p_phi(),
        log_order_bound_holds: delta_prime_est <= delta_zero_est.max(0.0) + FIT_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_example() {
        let r = validate_ord(&PhiSpec::power(1.2).unwrap(), 0.5).unwrap();
        assert!((r.delta_zero_est - 0.2).abs() < 1e-9);
        assert!((r.delta_inf_est - 0.2).abs() < 1e-9);
        assert!(r.admissible);
        assert!((r.p_phi.finite().unwrap() - 4.0).abs() < 1e-12);
        assert!((r.delta_prime_est - 0.2).abs() < 1e-3);
        assert!(r.log_order_bound_holds);
    }

    #[test]
    fn linear_generator() {
        let r = validate_ord(&PhiSpec::power(1.0).unwrap(), 0.5).unwrap();
        assert!(r.delta_zero_est.abs() < 1e-12 && r.delta_inf_est.abs() < 1e-12);
        assert_eq!(r.p_phi, Extended::PosInf);
        assert!(r.admissible);
        assert!(r.delta_prime_est < FIT_TOLERANCE);
        for d in 2..8 {
            let a = 2.0 / (d as f64 + 2.0);
            assert!(validate_ord(&PhiSpec::power(1.0).unwrap(), a).unwrap().admissible);
        }
    }

    #[test]
    fn perturbed_power_tail_fit() {
        let spec = PhiSpec::perturbed_power(1.0, 0.2).unwrap();
        let r = validate_ord(&spec, 0.5).unwrap();
        assert!(r.delta_zero_est.abs() < 1e-5);
        assert!((r.delta_inf_est - 0.2).abs() < 1e-5);
        assert!(r.admissible);
        assert!(r.log_order_bound_holds);
    }

    #[test]
    fn metadata_mismatch_is_reported() {
        let spec = PhiSpec::power(1.2).unwrap().with_exponents(0.0, 0.2);
        match validate_ord(&spec, 0.5) {
            Err(Error::Metadata { name, .. }) => assert_eq!(name, "delta_zero"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn compact_support_generator_has_zero_log_order() {
        let r = validate_ord(&PhiSpec::power(0.5).unwrap(), 0.5).unwrap();
        assert_eq!(r.delta_prime_est, 0.0);
        assert!(r.log_order_bound_holds);
    }
}
