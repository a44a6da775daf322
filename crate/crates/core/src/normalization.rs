//! The radial integrals `f_phi(p, lambda)` and the normalization pair
//! `(lambda, c)` that makes `exp_phi(lambda - c |x - v|_V^2)` a probability
//! density with mean `v` and covariance `V`.
//!
//! With `s = lambda - ln_phi(t)` the integral
//! `f(p, lambda) = int_0^{exp_phi(lambda)} (lambda - ln_phi t)^p t / phi(t) dt`
//! becomes `int_0^{lambda - l_phi} s^p exp_phi(lambda - s) ds`. The piece
//! `[0, eps]` carries the `s^p` singularity and is done by tanh-sinh; the
//! rest by Gauss–Kronrod when `l_phi` is finite and by exp-sinh otherwise,
//! which copes with the algebraic decay of heavy-tailed generators.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::extended::Extended;
use crate::phi::DeformedLogExp;
use crate::quadrature::{exp_sinh, gauss_kronrod, tanh_sinh, Tolerance};

const QUAD_TOL: Tolerance = Tolerance::new(1e-300, 1e-13);
/// Bracket scan budget (evaluations of `F`).
pub const SCAN_BUDGET: usize = 200;
/// Relative residual of the first normalization equation at which bisection stops.
pub const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyTag {
    /// Constants solved at the actual covariance.
    N,
    /// Constants solved at the identity, density rescaled by `det(V)^{-1/2}`.
    G,
}

impl fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FamilyTag::N => "N",
            FamilyTag::G => "G",
        })
    }
}

impl std::str::FromStr for FamilyTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "N" | "n" => Ok(FamilyTag::N),
            "G" | "g" => Ok(FamilyTag::G),
            other => Err(Error::Input(format!("unknown family tag {other:?}"))),
        }
    }
}

/// Solved normalization pair for `(phi, d, V)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizationConstants {
    pub lambda: f64,
    pub c: f64,
    pub dim: usize,
    pub det_v: f64,
    pub family: FamilyTag,
    /// `|F(d/2, lambda) / target - 1|`.
    pub residual: f64,
    /// Final bisection bracket.
    pub bracket: (f64, f64),
    /// Sign changes seen by the scan; more than one means the first was taken.
    pub crossings: usize,
    pub evaluations: usize,
}

impl NormalizationConstants {
    pub fn multiple_crossings(&self) -> bool {
        self.crossings > 1
    }
}

fn check_lambda(lx: &DeformedLogExp, lambda: f64) -> Result<()> {
    if !lx.in_range(lambda) {
        let (lo, hi) = lx.log_bounds();
        return Err(Error::Domain(format!(
            "lambda = {lambda} outside ({lo}, {hi})"
        )));
    }
    Ok(())
}

fn check_p(lx: &DeformedLogExp, p: f64, lower: f64) -> Result<()> {
    let upper = lx.spec().p_phi();
    if !(p > lower && upper.exceeds(p)) {
        return Err(Error::Domain(format!("p = {p} outside ({lower}, {upper})")));
    }
    Ok(())
}

/// `s^p exp_phi(lambda - s)`, computed in logs where the factors could overflow.
#[inline]
fn integrand(lx: &DeformedLogExp, p: f64, lambda: f64, s: f64) -> f64 {
    let e = lx.exp_value(lambda - s);
    if e == 0.0 || s == 0.0 {
        return if p == 0.0 { e } else { 0.0 };
    }
    let v = s.powf(p) * e;
    if v.is_finite() && v > 0.0 {
        v
    } else {
        (p * s.ln() + e.ln()).exp()
    }
}

/// `f_phi(p, lambda)` for `p in (-1, p_phi)`, `lambda in (l_phi, L_phi)`.
pub fn f_integral(lx: &DeformedLogExp, p: f64, lambda: f64) -> Result<f64> {
    check_p(lx, p, -1.0)?;
    check_lambda(lx, lambda)?;
    let (lower, _) = lx.log_bounds();
    let span = match lower {
        Extended::Finite(l) => lambda - l,
        _ => f64::INFINITY,
    };
    let eps = (0.5 * span).min(1.0);
    let f = |s: f64| integrand(lx, p, lambda, s);
    let head = tanh_sinh(f, 0.0, eps, QUAD_TOL)?;
    let tail = if span.is_finite() {
        gauss_kronrod(f, eps, span, QUAD_TOL)?
    } else {
        exp_sinh(f, eps, QUAD_TOL)?
    };
    let value = head.value + tail.value;
    if !(value.is_finite() && value >= 0.0) {
        return Err(Error::numeric(
            format!("f_phi({p}, {lambda}) evaluated to {value}"),
            head.error + tail.error,
        ));
    }
    Ok(value)
}

/// `ln F_phi(p, lambda)` with `F = f(p-1)^{p+1} / f(p)^p`.
pub fn ln_big_f(lx: &DeformedLogExp, p: f64, lambda: f64) -> Result<f64> {
    check_p(lx, p, 0.0)?;
    let lower = f_integral(lx, p - 1.0, lambda)?;
    let upper = f_integral(lx, p, lambda)?;
    Ok((p + 1.0) * lower.ln() - p * upper.ln())
}

/// `F_phi(p, lambda) = f(p-1, lambda)^{p+1} / f(p, lambda)^p`, for `p in (0, p_phi)`.
pub fn big_f(lx: &DeformedLogExp, p: f64, lambda: f64) -> Result<f64> {
    ln_big_f(lx, p, lambda).map(f64::exp)
}

/// Right-hand side of the first normalization equation,
/// `(d pi)^{-d/2} Gamma(d/2) / sqrt(det V)`, in logs.
pub fn ln_target(dim: usize, det_v: f64) -> f64 {
    let d = dim as f64;
    -0.5 * d * (d * std::f64::consts::PI).ln() + ln_gamma(0.5 * d) - 0.5 * det_v.ln()
}

/// Determinant of a symmetric positive definite matrix via Cholesky.
pub fn spd_determinant(v: &DMatrix<f64>) -> Result<f64> {
    if !v.is_square() {
        return Err(Error::Input(format!(
            "covariance must be square, got {}x{}",
            v.nrows(),
            v.ncols()
        )));
    }
    let chol = v
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Input("covariance is not positive definite".into()))?;
    let det: f64 = chol.l().diagonal().iter().map(|x| x * x).product();
    Ok(det)
}

struct Residual<'a> {
    lx: &'a DeformedLogExp,
    half_d: f64,
    ln_target: f64,
    evaluations: usize,
}

impl Residual<'_> {
    fn at(&mut self, lambda: f64) -> Result<f64> {
        self.evaluations += 1;
        Ok(ln_big_f(self.lx, self.half_d, lambda)? - self.ln_target)
    }
}

/// Candidate lambdas: `ln_phi` of a geometric grid in `t`, so that the scan
/// adapts to the generator's own scale and never leaves `(l_phi, L_phi)`.
fn scan_grid(lx: &DeformedLogExp) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(SCAN_BUDGET);
    let half = (SCAN_BUDGET as i32 - 40) / 2;
    for k in -half..=half {
        let t = 10f64.powf(k as f64 * 40.0 / half as f64);
        let lambda = lx.ln_unchecked(t);
        if lx.in_range(lambda) && out.last().is_none_or(|&prev| lambda > prev) {
            out.push(lambda);
        }
    }
    out
}

fn bisect(res: &mut Residual<'_>, mut lo: f64, mut hi: f64, mut r_lo: f64) -> Result<(f64, f64, (f64, f64))> {
    let mut best = (lo, r_lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let r = res.at(mid)?;
        if r.abs() < best.1.abs() {
            best = (mid, r);
        }
        if r.abs() < RESIDUAL_TOL {
            return Ok((mid, r, (lo, hi)));
        }
        if (r < 0.0) == (r_lo < 0.0) {
            lo = mid;
            r_lo = r;
        } else {
            hi = mid;
        }
    }
    Ok((best.0, best.1, (lo, hi)))
}

fn finish(
    lx: &DeformedLogExp,
    dim: usize,
    det_v: f64,
    family: FamilyTag,
    lambda: f64,
    r: f64,
    bracket: (f64, f64),
    crossings: usize,
    evaluations: usize,
) -> Result<NormalizationConstants> {
    let d = dim as f64;
    let c = f_integral(lx, 0.5 * d, lambda)? / (d * f_integral(lx, 0.5 * d - 1.0, lambda)?);
    Ok(NormalizationConstants {
        lambda,
        c,
        dim,
        det_v,
        family,
        residual: r.exp_m1().abs(),
        bracket,
        crossings,
        evaluations,
    })
}

fn check_generator(lx: &DeformedLogExp, dim: usize, det_v: f64) -> Result<()> {
    lx.spec().check_admissible(dim)?;
    if !(det_v.is_finite() && det_v > 0.0) {
        return Err(Error::Input(format!("det V must be positive, got {det_v}")));
    }
    Ok(())
}

/// Solves the normalization equations for a covariance of determinant
/// `det_v` (the constants depend on `V` only through it).
///
/// Scans the whole grid for sign changes of `ln F(d/2, .) - ln target`,
/// bisects the first one and reports how many were seen.
pub fn solve_for_det(
    lx: &DeformedLogExp,
    dim: usize,
    det_v: f64,
    family: FamilyTag,
) -> Result<NormalizationConstants> {
    check_generator(lx, dim, det_v)?;
    let solve_det = if family == FamilyTag::G { 1.0 } else { det_v };
    let mut res = Residual {
        lx,
        half_d: 0.5 * dim as f64,
        ln_target: ln_target(dim, solve_det),
        evaluations: 0,
    };
    let grid = scan_grid(lx);
    let mut first: Option<(f64, f64, f64)> = None;
    let mut crossings = 0;
    let mut previous: Option<(f64, f64)> = None;
    for &lambda in &grid {
        let r = match res.at(lambda) {
            Ok(r) if r.is_finite() => r,
            // Quadrature can fail at the extreme ends of the grid; those
            // points carry no sign information.
            _ => continue,
        };
        if r == 0.0 {
            crossings += 1;
            first.get_or_insert((lambda, lambda, r));
        } else if let Some((lp, rp)) = previous {
            if (rp < 0.0) != (r < 0.0) && rp != 0.0 {
                crossings += 1;
                first.get_or_insert((lp, lambda, rp));
            }
        }
        previous = Some((lambda, r));
    }
    let Some((lo, hi, r_lo)) = first else {
        return Err(Error::Bracket {
            lower: grid.first().copied().unwrap_or(f64::NAN),
            upper: grid.last().copied().unwrap_or(f64::NAN),
            evaluations: res.evaluations,
        });
    };
    let (lambda, r, bracket) = if lo == hi {
        (lo, 0.0, (lo, hi))
    } else {
        bisect(&mut res, lo, hi, r_lo)?
    };
    let evaluations = res.evaluations;
    finish(lx, dim, det_v, family, lambda, r, bracket, crossings, evaluations)
}

/// Like [`solve_for_det`] but brackets locally around `hint` (a nearby
/// solution) by geometric expansion. Used when tabulating constants.
pub fn solve_for_det_near(
    lx: &DeformedLogExp,
    dim: usize,
    det_v: f64,
    hint: f64,
) -> Result<NormalizationConstants> {
    check_generator(lx, dim, det_v)?;
    let mut res = Residual {
        lx,
        half_d: 0.5 * dim as f64,
        ln_target: ln_target(dim, det_v),
        evaluations: 0,
    };
    let (lower, upper) = lx.log_bounds();
    let clamp = |x: f64| {
        let x = match lower {
            Extended::Finite(l) if x <= l => 0.5 * (l + hint),
            _ => x,
        };
        match upper {
            Extended::Finite(u) if x >= u => 0.5 * (u + hint),
            _ => x,
        }
    };
    let r0 = res.at(hint)?;
    if r0 == 0.0 {
        return finish(lx, dim, det_v, FamilyTag::N, hint, 0.0, (hint, hint), 1, res.evaluations);
    }
    let mut step = 1e-2 * hint.abs().max(1e-2);
    let mut last = (hint, r0);
    while res.evaluations < SCAN_BUDGET {
        // F increases towards L_phi near a solution in practice; search in the
        // direction that reduces the residual first.
        let dir = if r0 < 0.0 { 1.0 } else { -1.0 };
        let next = clamp(last.0 + dir * step);
        if next == last.0 {
            break;
        }
        let r = res.at(next)?;
        if (r < 0.0) != (r0 < 0.0) {
            let (lo, hi, r_lo) = if next < hint { (next, last.0, r) } else { (last.0, next, last.1) };
            let (lambda, r, bracket) = bisect(&mut res, lo, hi, r_lo)?;
            let evaluations = res.evaluations;
            return finish(lx, dim, det_v, FamilyTag::N, lambda, r, bracket, 1, evaluations);
        }
        last = (next, r);
        step *= 2.0;
    }
    // Fall back to the global scan.
    solve_for_det(lx, dim, det_v, FamilyTag::N)
}

/// Solves for `(lambda, c)` at covariance `v`. For the `G` family the
/// equations are solved at the identity and `det V` is only recorded.
pub fn solve_constants(
    lx: &DeformedLogExp,
    dim: usize,
    v: &DMatrix<f64>,
    family: FamilyTag,
) -> Result<NormalizationConstants> {
    if v.nrows() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: v.nrows(),
        });
    }
    let asym = (v - v.transpose()).amax();
    if asym > 1e-10 * v.amax().max(1.0) {
        return Err(Error::Input(format!("covariance is not symmetric (defect {asym:e})")));
    }
    let det_v = spd_determinant(v)?;
    solve_for_det(lx, dim, det_v, family)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phi::PhiSpec;
    use statrs::function::gamma::gamma;
    use std::f64::consts::PI;

    fn lx(spec: PhiSpec) -> DeformedLogExp {
        DeformedLogExp::new(&spec).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn gaussian_f_matches_gamma() {
        let g = lx(PhiSpec::power(1.0).unwrap());
        assert!(rel(f_integral(&g, 0.0, 0.0).unwrap(), 1.0) < 1e-12);
        assert!(rel(f_integral(&g, 0.5, 0.0).unwrap(), PI.sqrt() / 2.0) < 1e-12);
        for p in [-0.5, 0.0, 0.5, 1.0, 1.5] {
            for lambda in [-1.0, 0.0, 1.0] {
                let got = f_integral(&g, p, lambda).unwrap();
                let want = f64::exp(lambda) * gamma(p + 1.0);
                assert!(rel(got, want) < 1e-10, "p={p} lambda={lambda}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn big_f_gaussian_values() {
        let g = lx(PhiSpec::power(1.0).unwrap());
        assert!(rel(big_f(&g, 1.0, 0.0).unwrap(), 1.0) < 1e-12);
        let lam = -(2.0 * PI).ln();
        assert!(rel(big_f(&g, 1.0, lam).unwrap(), 1.0 / (2.0 * PI)) < 1e-12);
    }

    #[test]
    fn domain_errors() {
        let g = lx(PhiSpec::power(1.2).unwrap());
        assert!(matches!(f_integral(&g, -1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(f_integral(&g, 4.5, 0.0), Err(Error::Domain(_))));
        assert!(matches!(f_integral(&g, 1.0, 5.5), Err(Error::Domain(_))));
        assert!(matches!(big_f(&g, 0.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn f_vanishes_towards_lower_bound() {
        let g = lx(PhiSpec::power(0.5).unwrap());
        let values: Vec<f64> = [-1.0, -1.5, -1.9, -1.99, -1.999]
            .iter()
            .map(|&l| f_integral(&g, 1.0, l).unwrap())
            .collect();
        for w in values.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(values[4] < 1e-6);
    }

    #[test]
    fn gaussian_constants() {
        let g = lx(PhiSpec::power(1.0).unwrap());
        for d in [2usize, 3] {
            let k = solve_constants(&g, d, &DMatrix::identity(d, d), FamilyTag::N).unwrap();
            let want = -(d as f64) / 2.0 * (2.0 * PI).ln();
            assert!((k.lambda - want).abs() < 1e-10, "d={d} {}", k.lambda);
            assert!((k.c - 0.5).abs() < 1e-10);
            assert!(k.residual < RESIDUAL_TOL);
            assert_eq!(k.crossings, 1);
        }
    }

    #[test]
    fn g_family_ignores_determinant() {
        let g = lx(PhiSpec::power(1.2).unwrap());
        let v = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0]));
        let kg = solve_constants(&g, 2, &v, FamilyTag::G).unwrap();
        let ki = solve_constants(&g, 2, &DMatrix::identity(2, 2), FamilyTag::N).unwrap();
        assert_eq!(kg.lambda, ki.lambda);
        assert_eq!(kg.det_v, 4.0);
        let kn = solve_constants(&g, 2, &v, FamilyTag::N).unwrap();
        assert!(kn.lambda < ki.lambda);
    }

    #[test]
    fn local_solver_agrees_with_scan() {
        let g = lx(PhiSpec::power(0.8).unwrap());
        let a = solve_for_det(&g, 2, 3.0, FamilyTag::N).unwrap();
        let b = solve_for_det_near(&g, 2, 3.0, a.lambda + 0.05).unwrap();
        assert!((a.lambda - b.lambda).abs() < 1e-10);
        assert!(rel(a.c, b.c) < 1e-10);
    }

    #[test]
    fn rejects_inadmissible_and_bad_covariances() {
        let g = lx(PhiSpec::power(1.6).unwrap());
        assert!(solve_for_det(&g, 2, 1.0, FamilyTag::N).is_err());
        let g = lx(PhiSpec::power(1.0).unwrap());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(solve_constants(&g, 2, &bad, FamilyTag::N), Err(Error::Input(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(solve_constants(&g, 2, &asym, FamilyTag::N), Err(Error::Input(_))));
        assert!(matches!(
            solve_constants(&g, 3, &DMatrix::identity(2, 2), FamilyTag::N),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
