//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use phiexp::{DeformedLogExp, FamilyPoint, FamilyTag, PhiSpec, TableGenerator};

/// Every generator shipped with the crate, in a representative setting.
pub fn builtin_generators() -> Vec<PhiSpec> {
    let mut out: Vec<PhiSpec> = [0.6, 0.8, 1.0, 1.2, 1.4]
        .iter()
        .map(|&q| PhiSpec::power(q).unwrap())
        .collect();
    out.push(PhiSpec::perturbed_power(1.0, 0.2).unwrap());
    out.push(PhiSpec::perturbed_power(0.8, 0.3).unwrap());
    out.push(table_generator());
    out.push(PhiSpec::power(1.2).unwrap().scaled(3.0).unwrap());
    out
}

/// `s (1 + s)^0.2` sampled over sixteen decades.
pub fn table_generator() -> PhiSpec {
    let s: Vec<f64> = (0..=160).map(|k| 10f64.powf(-8.0 + 0.1 * k as f64)).collect();
    let phi: Vec<f64> = s.iter().map(|&s| s * (1.0 + s).powf(0.2)).collect();
    PhiSpec::table(TableGenerator::new(&s, &phi).unwrap())
        .unwrap()
        .with_exponents(0.0, 0.2)
}

pub fn lx(spec: &PhiSpec) -> DeformedLogExp {
    DeformedLogExp::new(spec).unwrap()
}

pub fn isotropic(spec: &PhiSpec, family: FamilyTag, dim: usize, a2: f64) -> FamilyPoint {
    FamilyPoint::new(&lx(spec), family, DVector::zeros(dim), DMatrix::identity(dim, dim) * a2).unwrap()
}

/// `n` log-spaced points over `[10^lo, 10^hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (n - 1) as f64))
        .collect()
}

/// Relative difference with an absolute floor of `floor`.
pub fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

/// Largest violation of each generator property, as `(name, worst, limit)`.
pub fn phi_property_report(spec: &PhiSpec) -> Vec<(&'static str, f64, f64)> {
    let g = lx(spec);
    let ts = log_grid(-6.0, 6.0, 241);

    let round_trip = ts
        .iter()
        .map(|&t| rel(g.exp_value(g.ln(t).unwrap()), t, 0.0))
        .fold(0.0, f64::max);

    // Chord slopes must not increase; report the largest increase relative
    // to the slope scale.
    let mut concavity = 0.0f64;
    for w in ts.windows(3) {
        let (a, b, c) = (w[0], w[1], w[2]);
        let (la, lb, lc) = (g.ln(a).unwrap(), g.ln(b).unwrap(), g.ln(c).unwrap());
        let s1 = (lb - la) / (b - a);
        let s2 = (lc - lb) / (c - b);
        concavity = concavity.max((s2 - s1) / s1);
    }

    let mut derivative = 0.0f64;
    for &t in log_grid(-3.0, 3.0, 61).iter() {
        let tau = g.ln(t).unwrap();
        let (lo, hi) = g.log_bounds();
        let room = [lo.finite(), hi.finite()]
            .iter()
            .flatten()
            .map(|b| (b - tau).abs())
            .fold(f64::INFINITY, f64::min);
        let h = 1e-4 * tau.abs().max(1.0).min(room);
        if !(g.in_range(tau - h) && g.in_range(tau + h)) {
            continue;
        }
        let fd = (g.exp_value(tau + h) - g.exp_value(tau - h)) / (2.0 * h);
        let exact = g.exp_derivative(tau).unwrap().to_f64();
        derivative = derivative.max(rel(fd, exact, 0.0));
    }

    let ord = phiexp::validate_ord(spec, 0.5).unwrap();
    let log_order = ord.delta_prime_est - ord.delta_zero_est.max(0.0);

    vec![
        ("round trip", round_trip, 1e-10),
        ("concavity", concavity, 0.0),
        ("derivative identity", derivative, 1e-6),
        ("log-order bound", log_order, 0.02),
    ]
}
