//! Cached representation of `ln_phi` for generators without a closed form.
//!
//! In `u = ln t` the derivative of `g(u) = ln_phi(e^u)` is
//! `h(u) = e^u / phi(e^u)`, which is smooth and positive. `g` is tabulated on a
//! grid by Gauss–Legendre integration of `h` and interpolated by cubic Hermite
//! segments using the exact slopes `h(u_i)`. Outside the grid `h` is
//! extrapolated as the exponential fitted on the end segment, i.e. `1/phi`
//! as a power law, which integrates in closed form.

use crate::error::{Error, Result};
use crate::extended::Extended;
use crate::quadrature::gauss_legendre;

use super::PhiSpec;

const U_MIN: f64 = -40.0;
const U_MAX: f64 = 40.0;
const STEP: f64 = 1.0 / 128.0;
const GL_POINTS: usize = 8;
/// Tail exponents below this magnitude are treated as zero (logarithmic growth).
const EXPONENT_ZERO: f64 = 1e-6;
/// Declared exponents within this distance of zero cannot decide the tail.
const EXPONENT_AMBIGUOUS: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
struct Tail {
    u: f64,
    value: f64,
    slope: f64,
    /// Fitted `d ln h / du` at the grid end.
    exponent: f64,
}

impl Tail {
    /// `int_{u_end}^{u} h` for the extrapolated `h`.
    fn integral(&self, u: f64) -> f64 {
        let du = u - self.u;
        if self.exponent == 0.0 {
            self.slope * du
        } else {
            self.slope * (self.exponent * du).exp_m1() / self.exponent
        }
    }

    /// Inverse of [`Tail::integral`]; `None` when `delta` is outside its range.
    fn invert(&self, delta: f64) -> Option<f64> {
        if self.exponent == 0.0 {
            return Some(self.u + delta / self.slope);
        }
        let arg = self.exponent * delta / self.slope;
        if arg <= -1.0 {
            return None;
        }
        Some(self.u + arg.ln_1p() / self.exponent)
    }

    /// Limit of `value + integral(u)` in the direction where `exponent` makes it finite.
    fn limit(&self) -> f64 {
        self.value - self.slope / self.exponent
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LogInterpolant {
    nodes: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    left: Tail,
    right: Tail,
    lower: Extended,
    upper: Extended,
}

impl LogInterpolant {
    /// Builds the table for the unscaled base generator of `spec`.
    pub(crate) fn build(spec: &PhiSpec) -> Result<Self> {
        let gen = spec.generator();
        let log_h = |u: f64| u - gen.log_eval(u);

        let mut lo = U_MIN;
        let mut hi = U_MAX;
        let mut knots: Vec<f64> = match gen {
            super::Generator::Table(t) => t.log_knots().to_vec(),
            _ => Vec::new(),
        };
        if let (Some(first), Some(last)) = (knots.first(), knots.last()) {
            lo = lo.min((first - 1.0).floor());
            hi = hi.max((last + 1.0).ceil());
        }
        let steps = ((hi - lo) / STEP).round() as usize;
        let mut nodes: Vec<f64> = (0..=steps).map(|i| lo + i as f64 * STEP).collect();
        nodes.append(&mut knots);
        nodes.sort_by(f64::total_cmp);
        nodes.dedup_by(|a, b| (*a - *b).abs() < 1e-9 * STEP);
        // Make u = 0 (t = 1) an exact node so that ln_phi(1) = 0 exactly.
        let origin = match nodes.binary_search_by(|x| x.total_cmp(&0.0)) {
            Ok(i) => i,
            Err(i) => {
                nodes.insert(i, 0.0);
                i
            }
        };

        let slopes: Vec<f64> = nodes.iter().map(|&u| log_h(u).exp()).collect();
        if slopes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Generator(format!(
                "{} overflows on the tabulation range",
                spec.label()
            )));
        }
        let (gx, gw) = gauss_legendre(GL_POINTS);
        let segment = |a: f64, b: f64| -> f64 {
            let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
            gx.iter().zip(&gw).map(|(x, w)| w * log_h(c + r * x).exp()).sum::<f64>() * r
        };
        let mut values = vec![0.0; nodes.len()];
        for i in origin + 1..nodes.len() {
            values[i] = values[i - 1] + segment(nodes[i - 1], nodes[i]);
        }
        for i in (0..origin).rev() {
            values[i] = values[i + 1] - segment(nodes[i], nodes[i + 1]);
        }

        // Fritsch-Carlson: Hermite segments are monotone when both end
        // slopes are within (0, 3] times the secant. Segments whose rise is
        // below the resolution of the values are flat to working precision.
        for i in 0..nodes.len() - 1 {
            let width = nodes[i + 1] - nodes[i];
            let resolution = 4.0 * f64::EPSILON * values[i].abs().max(values[i + 1].abs());
            if (slopes[i] + slopes[i + 1]) * width <= resolution {
                continue;
            }
            let secant = (values[i + 1] - values[i]) / width;
            let (a, b) = (slopes[i] / secant, slopes[i + 1] / secant);
            if !(secant > 0.0 && a > 0.0 && b > 0.0 && a <= 3.0 && b <= 3.0) {
                return Err(Error::Generator(format!(
                    "ln_phi table for {} is not monotone near t = {:e}",
                    spec.label(),
                    nodes[i].exp()
                )));
            }
        }

        let n = nodes.len();
        let fit = |i: usize, j: usize| (slopes[j].ln() - slopes[i].ln()) / (nodes[j] - nodes[i]);
        let clean = |a: f64| if a.abs() < EXPONENT_ZERO { 0.0 } else { a };
        let left = Tail {
            u: nodes[0],
            value: values[0],
            slope: slopes[0],
            exponent: clean(fit(0, 1)),
        };
        let right = Tail {
            u: nodes[n - 1],
            value: values[n - 1],
            slope: slopes[n - 1],
            exponent: clean(fit(n - 2, n - 1)),
        };

        // l_phi is finite iff h decays as u -> -inf (exponent > 0); the
        // declared delta_zero = -exponent must agree.
        let lower = if left.exponent > 0.0 {
            Extended::Finite(left.limit())
        } else {
            Extended::NegInf
        };
        let upper = if right.exponent < 0.0 {
            Extended::Finite(right.limit())
        } else {
            Extended::PosInf
        };
        let declared_finite_lower = spec.delta_zero() < 0.0;
        let declared_finite_upper = spec.delta_inf() > 0.0;
        if lower.is_finite() != declared_finite_lower || spec.delta_zero().abs() < EXPONENT_AMBIGUOUS && spec.delta_zero() != 0.0 {
            return Err(Error::Inconclusive {
                what: format!("l_phi for {}", spec.label()),
                lower: f64::NEG_INFINITY,
                upper: left.value - left.slope / left.exponent.max(EXPONENT_ZERO),
            });
        }
        if upper.is_finite() != declared_finite_upper || spec.delta_inf().abs() < EXPONENT_AMBIGUOUS && spec.delta_inf() != 0.0 {
            return Err(Error::Inconclusive {
                what: format!("L_phi for {}", spec.label()),
                lower: right.value - right.slope / right.exponent.min(-EXPONENT_ZERO),
                upper: f64::INFINITY,
            });
        }

        Ok(Self {
            nodes,
            values,
            slopes,
            left,
            right,
            lower,
            upper,
        })
    }

    pub(crate) fn bounds(&self) -> (Extended, Extended) {
        (self.lower, self.upper)
    }

    /// `ln_phi(e^u)`.
    pub(crate) fn ln_at(&self, u: f64) -> f64 {
        let n = self.nodes.len();
        if u <= self.nodes[0] {
            return self.left.value + self.left.integral(u);
        }
        if u >= self.nodes[n - 1] {
            return self.right.value + self.right.integral(u);
        }
        let i = self.nodes.partition_point(|&x| x <= u) - 1;
        let width = self.nodes[i + 1] - self.nodes[i];
        let theta = (u - self.nodes[i]) / width;
        self.hermite(i, width, theta)
    }

    fn hermite(&self, i: usize, width: f64, theta: f64) -> f64 {
        let t2 = theta * theta;
        let t3 = t2 * theta;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + theta;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.values[i]
            + h10 * width * self.slopes[i]
            + h01 * self.values[i + 1]
            + h11 * width * self.slopes[i + 1]
    }

    fn hermite_derivative(&self, i: usize, width: f64, theta: f64) -> f64 {
        let t2 = theta * theta;
        let d00 = 6.0 * t2 - 6.0 * theta;
        let d10 = 3.0 * t2 - 4.0 * theta + 1.0;
        let d01 = -d00;
        let d11 = 3.0 * t2 - 2.0 * theta;
        (d00 * self.values[i] + d01 * self.values[i + 1]) / width
            + d10 * self.slopes[i]
            + d11 * self.slopes[i + 1]
    }

    /// Solves `ln_phi(e^u) = tau` for `u`, for `tau` strictly inside the bounds.
    pub(crate) fn inverse_u(&self, tau: f64) -> Result<f64> {
        let n = self.nodes.len();
        if tau <= self.values[0] {
            return self.left.invert(tau - self.left.value).ok_or_else(|| {
                Error::numeric(format!("tau = {tau} below the deformed-log range"), 0.0)
            });
        }
        if tau >= self.values[n - 1] {
            return self.right.invert(tau - self.right.value).ok_or_else(|| {
                Error::numeric(format!("tau = {tau} above the deformed-log range"), 0.0)
            });
        }
        let i = self.values.partition_point(|&v| v <= tau) - 1;
        let width = self.nodes[i + 1] - self.nodes[i];
        let (g0, g1) = (self.values[i], self.values[i + 1]);
        if tau == g0 {
            return Ok(self.nodes[i]);
        }
        // Safeguarded Newton on theta in [0, 1].
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut theta = ((tau - g0) / (g1 - g0)).clamp(0.0, 1.0);
        let tol = 1e-15 * tau.abs().max(1.0);
        for _ in 0..60 {
            let r = self.hermite(i, width, theta) - tau;
            if r.abs() <= tol {
                return Ok(self.nodes[i] + theta * width);
            }
            if r > 0.0 {
                hi = theta;
            } else {
                lo = theta;
            }
            let d = self.hermite_derivative(i, width, theta) * width;
            let mut next = theta - r / d;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - theta).abs() < 1e-17 {
                return Ok(self.nodes[i] + next * width);
            }
            theta = next;
        }
        if hi - lo < 1e-12 {
            return Ok(self.nodes[i] + 0.5 * (lo + hi) * width);
        }
        Err(Error::numeric(
            format!("inversion of ln_phi did not converge at tau = {tau}"),
            hi - lo,
        ))
    }
}
