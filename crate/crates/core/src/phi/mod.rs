//! Admissible generators `phi` and the deformed logarithm/exponential pair
//! they induce.
//!
//! A generator is an increasing positive function on `(0, inf)`. It carries
//! two growth exponents, `delta_zero` (behaviour as `s -> 0`) and
//! `delta_inf` (as `s -> inf`), which are declared rather than inferred:
//! [`validate_ord`] only checks the declaration against log-log fits.

mod deformed;
mod interp;
mod ord;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extended::Extended;

pub use deformed::DeformedLogExp;
pub use ord::{validate_ord, OrdReport};

/// Monotone samples `(s_i, phi_i)` interpolated linearly in log-log
/// coordinates and extended by the end segments' power laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableGenerator {
    log_s: Vec<f64>,
    log_phi: Vec<f64>,
}

impl TableGenerator {
    pub fn new(s: &[f64], phi: &[f64]) -> Result<Self> {
        if s.len() != phi.len() {
            return Err(Error::Generator(format!(
                "table columns differ in length ({} vs {})",
                s.len(),
                phi.len()
            )));
        }
        if s.len() < 2 {
            return Err(Error::Generator("table needs at least two rows".into()));
        }
        for w in s.windows(2).zip(phi.windows(2)) {
            let (ws, wp) = w;
            if !(ws[1] > ws[0] && wp[1] > wp[0]) {
                return Err(Error::Generator(
                    "table columns must be strictly increasing".into(),
                ));
            }
        }
        if s[0] <= 0.0 || phi[0] <= 0.0 || s.iter().chain(phi).any(|v| !v.is_finite()) {
            return Err(Error::Generator("table entries must be finite and positive".into()));
        }
        Ok(Self {
            log_s: s.iter().map(|v| v.ln()).collect(),
            log_phi: phi.iter().map(|v| v.ln()).collect(),
        })
    }

    /// Reads a two-column `s,phi` CSV. A header row is allowed.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)?;
        let (mut s, mut phi) = (Vec::new(), Vec::new());
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != 2 {
                return Err(Error::Generator(format!(
                    "{}: row {} has {} columns, expected 2",
                    path.display(),
                    row + 1,
                    record.len()
                )));
            }
            match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
                (Ok(a), Ok(b)) => {
                    s.push(a);
                    phi.push(b);
                }
                _ if row == 0 => continue,
                _ => {
                    return Err(Error::Generator(format!(
                        "{}: row {} is not numeric",
                        path.display(),
                        row + 1
                    )))
                }
            }
        }
        Self::new(&s, &phi)
    }

    fn slope(&self, i: usize) -> f64 {
        (self.log_phi[i + 1] - self.log_phi[i]) / (self.log_s[i + 1] - self.log_s[i])
    }

    pub fn slope_low(&self) -> f64 {
        self.slope(0)
    }

    pub fn slope_high(&self) -> f64 {
        self.slope(self.log_s.len() - 2)
    }

    fn log_eval(&self, log_s: f64) -> f64 {
        let n = self.log_s.len();
        let i = self.log_s.partition_point(|&x| x <= log_s).clamp(1, n - 1) - 1;
        self.log_phi[i] + self.slope(i) * (log_s - self.log_s[i])
    }

    pub(crate) fn log_knots(&self) -> &[f64] {
        &self.log_s
    }

    pub fn len(&self) -> usize {
        self.log_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_s.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// `phi(s) = s^q`
    Power { q: f64 },
    /// `phi(s) = s^q (1 + s)^eps`
    PerturbedPower { q: f64, eps: f64 },
    Table(TableGenerator),
}

impl Generator {
    /// `ln phi(e^u)`.
    pub(crate) fn log_eval(&self, u: f64) -> f64 {
        match self {
            Generator::Power { q } => q * u,
            Generator::PerturbedPower { q, eps } => q * u + eps * ln_1p_exp(u),
            Generator::Table(t) => t.log_eval(u),
        }
    }
}

/// `ln(1 + e^u)` without overflow.
fn ln_1p_exp(u: f64) -> f64 {
    if u > 30.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// An admissible generator together with its declared growth exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiSpec {
    label: String,
    generator: Generator,
    /// Positive multiplier: the generator is `scale * base(s)`.
    scale: f64,
    delta_zero: f64,
    delta_inf: f64,
}

impl PhiSpec {
    pub fn power(q: f64) -> Result<Self> {
        if !(q.is_finite() && q > 0.0) {
            return Err(Error::Generator(format!("power exponent must be positive, got {q}")));
        }
        Self::checked(format!("power({q})"), Generator::Power { q }, q - 1.0, q - 1.0)
    }

    pub fn perturbed_power(q: f64, eps: f64) -> Result<Self> {
        if !(q.is_finite() && eps.is_finite() && q > 0.0 && q + eps > 0.0) {
            return Err(Error::Generator(format!(
                "perturbed power needs q > 0 and q + eps > 0, got q = {q}, eps = {eps}"
            )));
        }
        Self::checked(
            format!("perturbed_power({q},{eps})"),
            Generator::PerturbedPower { q, eps },
            q - 1.0,
            q + eps - 1.0,
        )
    }

    pub fn table(table: TableGenerator) -> Result<Self> {
        let (low, high) = (table.slope_low(), table.slope_high());
        Self::checked(
            format!("table({} rows)", table.len()),
            Generator::Table(table),
            low - 1.0,
            high - 1.0,
        )
    }

    /// Overrides the declared exponents. Use when the true limits differ from
    /// what the constructor infers (for tables with unrepresentative ends).
    pub fn with_exponents(mut self, delta_zero: f64, delta_inf: f64) -> Self {
        self.delta_zero = delta_zero;
        self.delta_inf = delta_inf;
        self
    }

    fn checked(label: String, generator: Generator, delta_zero: f64, delta_inf: f64) -> Result<Self> {
        let spec = Self {
            label,
            generator,
            scale: 1.0,
            delta_zero,
            delta_inf,
        };
        spec.check_monotone()?;
        Ok(spec)
    }

    fn check_monotone(&self) -> Result<()> {
        let mut previous = f64::NEG_INFINITY;
        for k in -240..=240 {
            let u = k as f64 * 0.25;
            let log_phi = self.generator.log_eval(u);
            if !log_phi.is_finite() || log_phi <= previous {
                return Err(Error::Generator(format!(
                    "{} is not strictly increasing and positive near s = {:e}",
                    self.label,
                    u.exp()
                )));
            }
            previous = log_phi;
        }
        Ok(())
    }

    /// `s -> alpha * phi(s)`, with unchanged exponent metadata.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Domain(format!("scale factor must be positive, got {alpha}")));
        }
        let mut out = self.clone();
        out.scale *= alpha;
        out.label = if out.scale == 1.0 {
            strip_scale(&self.label).to_string()
        } else {
            format!("{}*{}", out.scale, strip_scale(&self.label))
        };
        Ok(out)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn delta_zero(&self) -> f64 {
        self.delta_zero
    }

    pub fn delta_inf(&self) -> f64 {
        self.delta_inf
    }

    pub fn max_delta(&self) -> f64 {
        self.delta_zero.max(self.delta_inf)
    }

    /// The power exponent when the generator is (a multiple of) `s^q`.
    pub fn power_exponent(&self) -> Option<f64> {
        match self.generator {
            Generator::Power { q } => Some(q),
            Generator::PerturbedPower { q, eps } if eps == 0.0 => Some(q),
            _ => None,
        }
    }

    /// `p_phi = 1/max(delta) - 1`, or `+inf` when `max(delta) <= 0`.
    pub fn p_phi(&self) -> Extended {
        let m = self.max_delta();
        if m > 0.0 {
            Extended::Finite(1.0 / m - 1.0)
        } else {
            Extended::PosInf
        }
    }

    /// Membership in the class guaranteeing finite second moments in dimension `d`.
    pub fn admissible_for(&self, dim: usize) -> bool {
        self.max_delta() < 2.0 / (dim as f64 + 2.0)
    }

    pub fn check_admissible(&self, dim: usize) -> Result<()> {
        if dim < 2 {
            return Err(Error::Domain(format!("dimension must be at least 2, got {dim}")));
        }
        if !self.admissible_for(dim) {
            return Err(Error::Domain(format!(
                "{} has max exponent {} >= 2/(d+2) = {} for d = {dim}",
                self.label,
                self.max_delta(),
                2.0 / (dim as f64 + 2.0)
            )));
        }
        Ok(())
    }

    /// Whether `phi(s) -> 0` as `s -> 0`.
    pub fn vanishes_at_zero(&self) -> bool {
        self.delta_zero > -1.0
    }

    pub fn eval(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return if self.vanishes_at_zero() { 0.0 } else { f64::NAN };
        }
        match self.generator {
            Generator::Power { q } => self.scale * s.powf(q),
            _ => self.scale * self.generator.log_eval(s.ln()).exp(),
        }
    }
}

fn strip_scale(label: &str) -> &str {
    match label.split_once('*') {
        Some((prefix, rest)) if prefix.parse::<f64>().is_ok() => rest,
        _ => label,
    }
}

impl fmt::Display for PhiSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}
