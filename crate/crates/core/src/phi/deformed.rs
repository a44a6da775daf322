use std::sync::Arc;

use crate::error::{Error, Result};
use crate::extended::Extended;

use super::interp::LogInterpolant;
use super::{Generator, PhiSpec};

#[derive(Debug, Clone)]
enum Backend {
    /// `ln_q(t) = (t^{1-q} - 1)/(1 - q)`, `ln t` at `q = 1`.
    Power { q: f64 },
    Table(Arc<LogInterpolant>),
}

/// `ln_phi(t) = int_1^t ds/phi(s)` and its inverse `exp_phi`, extended by 0
/// below `l_phi` and by `+inf` above `L_phi`.
///
/// Immutable after construction and cheap to clone.
#[derive(Debug, Clone)]
pub struct DeformedLogExp {
    spec: PhiSpec,
    backend: Backend,
    lower: Extended,
    upper: Extended,
}

impl DeformedLogExp {
    pub fn new(spec: &PhiSpec) -> Result<Self> {
        let (backend, base_lower, base_upper) = match spec.generator() {
            Generator::Power { q } => {
                let q = *q;
                let lower = if q < 1.0 {
                    Extended::Finite(-1.0 / (1.0 - q))
                } else {
                    Extended::NegInf
                };
                let upper = if q > 1.0 {
                    Extended::Finite(1.0 / (q - 1.0))
                } else {
                    Extended::PosInf
                };
                (Backend::Power { q }, lower, upper)
            }
            _ => {
                let table = LogInterpolant::build(spec)?;
                let (lo, hi) = table.bounds();
                (Backend::Table(Arc::new(table)), lo, hi)
            }
        };
        let inv = 1.0 / spec.scale();
        Ok(Self {
            spec: spec.clone(),
            backend,
            lower: base_lower.scale(inv),
            upper: base_upper.scale(inv),
        })
    }

    pub fn spec(&self) -> &PhiSpec {
        &self.spec
    }

    pub fn phi(&self, s: f64) -> f64 {
        self.spec.eval(s)
    }

    /// `(l_phi, L_phi)`.
    pub fn log_bounds(&self) -> (Extended, Extended) {
        (self.lower, self.upper)
    }

    /// Whether `tau` lies strictly inside `(l_phi, L_phi)`.
    pub fn in_range(&self, tau: f64) -> bool {
        self.lower.below(tau) && self.upper.exceeds(tau)
    }

    fn base_ln(&self, t: f64) -> f64 {
        match &self.backend {
            Backend::Power { q } => {
                let a = 1.0 - q;
                let lt = t.ln();
                if a == 0.0 {
                    lt
                } else {
                    (a * lt).exp_m1() / a
                }
            }
            Backend::Table(table) => table.ln_at(t.ln()),
        }
    }

    /// Deformed logarithm; `t` must be positive and finite.
    pub fn ln(&self, t: f64) -> Result<f64> {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Domain(format!("ln_phi needs finite t > 0, got {t}")));
        }
        Ok(self.ln_unchecked(t))
    }

    /// [`DeformedLogExp::ln`] without the argument check, for inner loops.
    #[inline]
    pub fn ln_unchecked(&self, t: f64) -> f64 {
        self.base_ln(t) / self.spec.scale()
    }

    /// Deformed exponential on the whole real line.
    pub fn exp(&self, tau: f64) -> Result<Extended> {
        if tau.is_nan() {
            return Err(Error::Domain("exp_phi of NaN".into()));
        }
        if !self.lower.below(tau) {
            return Ok(Extended::Finite(0.0));
        }
        if !self.upper.exceeds(tau) {
            return Ok(Extended::PosInf);
        }
        let x = self.spec.scale() * tau;
        let value = match &self.backend {
            Backend::Power { q } => {
                let a = 1.0 - q;
                if a == 0.0 {
                    x.exp()
                } else if a * x <= -1.0 {
                    // Bound computed as 1/|a| may round past the true edge.
                    return Ok(if a > 0.0 { Extended::Finite(0.0) } else { Extended::PosInf });
                } else {
                    ((a * x).ln_1p() / a).exp()
                }
            }
            Backend::Table(table) => table.inverse_u(x)?.exp(),
        };
        Ok(Extended::from_f64(value))
    }

    /// `exp_phi(tau)` as a float: 0 below `l_phi`, `+inf` at or above `L_phi`.
    #[inline]
    pub fn exp_value(&self, tau: f64) -> f64 {
        match self.exp(tau) {
            Ok(v) => v.to_f64(),
            Err(_) => f64::NAN,
        }
    }

    /// `d/dtau exp_phi(tau) = phi(exp_phi(tau))`.
    pub fn exp_derivative(&self, tau: f64) -> Result<Extended> {
        Ok(match self.exp(tau)? {
            Extended::Finite(t) => Extended::Finite(self.phi(t)),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn lx(spec: PhiSpec) -> DeformedLogExp {
        DeformedLogExp::new(&spec).unwrap()
    }

    #[test]
    fn ordinary_log_and_exp() {
        let g = lx(PhiSpec::power(1.0).unwrap());
        assert!((g.ln(E).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(g.ln(1.0).unwrap(), 0.0);
        assert!((g.exp_value(1.0) - E).abs() < 1e-15);
        assert_eq!(g.log_bounds(), (Extended::NegInf, Extended::PosInf));
    }

    #[test]
    fn square_root_generator() {
        let g = lx(PhiSpec::power(0.5).unwrap());
        assert!((g.ln(4.0).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(g.log_bounds(), (Extended::Finite(-2.0), Extended::PosInf));
        assert_eq!(g.exp(-2.0).unwrap(), Extended::Finite(0.0));
        assert_eq!(g.exp(-3.0).unwrap(), Extended::Finite(0.0));
        assert!(g.exp_value(-1.999) > 0.0);
    }

    #[test]
    fn square_generator_blows_up() {
        let g = lx(PhiSpec::power(2.0).unwrap());
        assert_eq!(g.log_bounds(), (Extended::NegInf, Extended::Finite(1.0)));
        assert_eq!(g.exp(1.0).unwrap(), Extended::PosInf);
        assert!((g.exp_value(0.5) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn scaled_bounds() {
        let g = lx(PhiSpec::power(0.5).unwrap().scaled(3.0).unwrap());
        let (lo, _) = g.log_bounds();
        assert!((lo.finite().unwrap() + 2.0 / 3.0).abs() < 1e-15);
        let base = lx(PhiSpec::power(1.0).unwrap());
        let doubled = lx(PhiSpec::power(1.0).unwrap().scaled(2.0).unwrap());
        assert!((doubled.ln(E).unwrap() - 0.5).abs() < 1e-15);
        assert!((doubled.exp_value(0.3) - base.exp_value(0.6)).abs() < 1e-15);
    }

    #[test]
    fn interpolated_generator_matches_power_closed_form() {
        // s^q (1+s)^0 goes through the interpolant but equals s^q.
        for q in [0.6, 1.0, 1.3] {
            let table = lx(PhiSpec::perturbed_power(q, 0.0).unwrap());
            let exact = lx(PhiSpec::power(q).unwrap());
            for t in [1e-12, 1e-5, 0.3, 1.0, 2.0, 1e4, 1e15] {
                let a = table.ln(t).unwrap();
                let b = exact.ln(t).unwrap();
                assert!((a - b).abs() <= 1e-11 * b.abs().max(1.0), "q={q} t={t}: {a} vs {b}");
            }
            let (lo_a, hi_a) = table.log_bounds();
            let (lo_b, hi_b) = exact.log_bounds();
            assert_eq!(lo_a.is_finite(), lo_b.is_finite());
            assert_eq!(hi_a.is_finite(), hi_b.is_finite());
            if let (Some(a), Some(b)) = (lo_a.finite(), lo_b.finite()) {
                assert!((a - b).abs() < 1e-10, "{a} {b}");
            }
            if let (Some(a), Some(b)) = (hi_a.finite(), hi_b.finite()) {
                assert!((a - b).abs() < 1e-10, "{a} {b}");
            }
        }
    }

    #[test]
    fn perturbed_bounds() {
        let g = lx(PhiSpec::perturbed_power(1.0, 0.2).unwrap());
        let (lo, hi) = g.log_bounds();
        assert_eq!(lo, Extended::NegInf);
        // L_phi = int_1^inf ds / (s (1+s)^0.2)
        let l_upper = crate::quadrature::exp_sinh(
            |s| 1.0 / (s * (1.0 + s).powf(0.2)),
            1.0,
            crate::quadrature::Tolerance::new(1e-13, 1e-13),
        )
        .unwrap()
        .value;
        assert!((hi.finite().unwrap() - l_upper).abs() < 1e-9, "{hi} vs {l_upper}");
    }
}
