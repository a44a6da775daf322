//! The `N` and `G` families of `phi`-exponential distributions.
//!
//! For mean `v`, covariance `V` and `m = |x - v|_V^2 = (x-v)^T V^{-1} (x-v)`:
//!
//! * `n(v, V)(x) = exp_phi(lambda(V) - c(V) m)`
//! * `g(v, V)(x) = exp_phi(lambda(I) - c(I) m) / sqrt(det V)`
//!
//! Both have mean `v` and covariance `V`; they agree for every `V` exactly
//! when `phi` is a power function.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extended::Extended;
use crate::grid::{sphere_area, DensityGrid};
use crate::normalization::{solve_for_det, spd_determinant, FamilyTag, NormalizationConstants};
use crate::phi::{DeformedLogExp, PhiSpec};
use crate::quadrature::{gauss_kronrod_vec, Tolerance};
use crate::transport::spd_sqrt;

/// A member `N_phi(v, V)` or `G_phi(v, V)` with solved constants.
#[derive(Debug, Clone)]
pub struct FamilyPoint {
    family: FamilyTag,
    lx: DeformedLogExp,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    cov_inv: DMatrix<f64>,
    constants: NormalizationConstants,
    /// `det V^{-1/2}` for `G`, 1 for `N`.
    amplitude: f64,
}

impl FamilyPoint {
    pub fn new(
        lx: &DeformedLogExp,
        family: FamilyTag,
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    ) -> Result<Self> {
        let det = check_params(&mean, &cov)?;
        let constants = solve_for_det(lx, mean.len(), det, family)?;
        Self::with_constants(lx, family, mean, cov, constants)
    }

    /// Builds a point from constants solved earlier (e.g. shared `G`
    /// constants, which only depend on the dimension).
    pub fn with_constants(
        lx: &DeformedLogExp,
        family: FamilyTag,
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        mut constants: NormalizationConstants,
    ) -> Result<Self> {
        let det = check_params(&mean, &cov)?;
        if constants.dim != mean.len() || constants.family != family {
            return Err(Error::Input(format!(
                "constants for {}/d={} do not match {family}/d={}",
                constants.family,
                constants.dim,
                mean.len()
            )));
        }
        if family == FamilyTag::N && ((constants.det_v - det) / det).abs() > 1e-10 {
            return Err(Error::Input(format!(
                "constants solved for det V = {}, covariance has {det}",
                constants.det_v
            )));
        }
        constants.det_v = det;
        let cov_inv = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))?
            .inverse();
        let amplitude = match family {
            FamilyTag::N => 1.0,
            FamilyTag::G => det.sqrt().recip(),
        };
        Ok(Self {
            family,
            lx: lx.clone(),
            mean,
            cov,
            cov_inv,
            constants,
            amplitude,
        })
    }

    pub fn family(&self) -> FamilyTag {
        self.family
    }

    pub fn lx(&self) -> &DeformedLogExp {
        &self.lx
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn constants(&self) -> &NormalizationConstants {
        &self.constants
    }

    /// `|x - v|_V^2`.
    pub fn mahalanobis2(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let y = DVector::from_column_slice(x) - &self.mean;
        Ok(y.dot(&(&self.cov_inv * &y)).max(0.0))
    }

    /// Density as a function of the squared Mahalanobis radius. Exactly 0
    /// once the argument of `exp_phi` reaches `l_phi`.
    pub fn profile(&self, m2: f64) -> f64 {
        let NormalizationConstants { lambda, c, .. } = self.constants;
        self.amplitude * self.lx.exp_value(lambda - c * m2)
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.profile(self.mahalanobis2(x)?))
    }

    pub fn peak(&self) -> f64 {
        self.profile(0.0)
    }

    /// Mahalanobis radius `sqrt((lambda - l_phi) / c)` of the support.
    pub fn support_radius(&self) -> Extended {
        match self.lx.log_bounds().0 {
            Extended::Finite(l) => {
                Extended::Finite(((self.constants.lambda - l) / self.constants.c).sqrt())
            }
            _ => Extended::PosInf,
        }
    }
}

fn check_params(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if cov.nrows() != mean.len() || !cov.is_square() {
        return Err(Error::DimensionMismatch {
            expected: mean.len(),
            got: cov.nrows(),
        });
    }
    let asym = (cov - cov.transpose()).amax();
    if asym > 1e-10 * cov.amax().max(1.0) {
        return Err(Error::Input(format!("covariance is not symmetric (defect {asym:e})")));
    }
    spd_determinant(cov)
}

/// Quadrature moments of a family member compared with its parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub mass: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub mass_deviation: f64,
    pub mean_deviation: f64,
    pub cov_deviation: f64,
    /// Mahalanobis radius the integrals were carried to.
    pub radius: f64,
    /// Estimated second-moment mass beyond `radius`.
    pub tail_estimate: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Initial truncation radius (Mahalanobis units) and its budget.
const RADIUS_START: f64 = 8.0;
const RADIUS_BUDGET: f64 = 1e9;

/// Mass, mean and covariance of `point` by quadrature in Mahalanobis polar
/// coordinates `x = v + V^{1/2} r w`.
///
/// The angular integral uses the `2d` cross-polytope directions `+-e_i`,
/// which integrate spherical polynomials of degree <= 3 exactly; the moments
/// need degree 2. The radial integral runs to the support edge, or for
/// unbounded support to a radius grown geometrically until the tail of the
/// second-moment integrand (estimated from its fitted power decay) falls
/// below `tol / 10`.
pub fn verify_moments(point: &FamilyPoint, tol: f64) -> Result<MomentReport> {
    if !(tol > 0.0) {
        return Err(Error::Input(format!("tolerance must be positive, got {tol}")));
    }
    let d = point.dim();
    let root = spd_sqrt(&point.cov)?;
    let jac = point.cov.determinant().sqrt() * sphere_area(d) / (2 * d) as f64;
    let ncomp = 1 + d + d * d;
    let second = |r: f64| r.powi(d as i32 + 1) * point.profile(r * r);

    let (radius, tail) = match point.support_radius() {
        Extended::Finite(r) => (r, 0.0),
        _ => {
            let mut r = RADIUS_START;
            loop {
                let (g_half, g) = (second(0.5 * r), second(r));
                let tail = if g == 0.0 {
                    0.0
                } else {
                    let k = (g_half / g).ln() / std::f64::consts::LN_2;
                    if k > 1.0 {
                        r * g / (k - 1.0)
                    } else {
                        f64::INFINITY
                    }
                };
                if jac * tail * root.amax().powi(2) < 0.1 * tol {
                    break (r, tail * jac);
                }
                r *= 2.0;
                if r > RADIUS_BUDGET {
                    return Err(Error::Truncation { radius: r });
                }
            }
        }
    };

    let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(2 * d);
    for i in 0..d {
        for sign in [1.0, -1.0] {
            let mut e = DVector::zeros(d);
            e[i] = sign;
            dirs.push(&root * e);
        }
    }
    let mut x = vec![0.0; d];
    let mut integrand = |r: f64, out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        let radial = r.powi(d as i32 - 1);
        for s in &dirs {
            for k in 0..d {
                x[k] = point.mean[k] + r * s[k];
            }
            let w = radial * point.density(&x).unwrap_or(f64::NAN);
            out[0] += w;
            for k in 0..d {
                out[1 + k] += w * x[k];
                for j in 0..d {
                    out[1 + d + k * d + j] += w * r * r * s[k] * s[j];
                }
            }
        }
    };
    let qtol = Tolerance::new(1e-3 * tol, 1e-12);
    let mut total = vec![0.0; ncomp];
    // Panels in r: a linear core then geometric shells so wide truncation
    // radii stay cheap.
    let mut edges = vec![0.0];
    let core = radius.min(RADIUS_START);
    for i in 1..=4 {
        edges.push(core * i as f64 / 4.0);
    }
    while *edges.last().unwrap() < radius {
        let next = (2.0 * edges.last().unwrap()).min(radius);
        edges.push(next);
    }
    for w in edges.windows(2) {
        let part = gauss_kronrod_vec(&mut integrand, w[0], w[1], ncomp, qtol, 2000)?;
        for (t, v) in total.iter_mut().zip(&part.values) {
            *t += v;
        }
    }
    total.iter_mut().for_each(|t| *t *= jac);

    let mass = total[0];
    let mean: Vec<f64> = (0..d).map(|k| total[1 + k] / mass).collect();
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|k| (0..d).map(|j| total[1 + d + k * d + j]).collect())
        .collect();
    let mass_deviation = (mass - 1.0).abs();
    let mean_deviation = (0..d).map(|k| (mean[k] - point.mean[k]).abs()).fold(0.0, f64::max);
    let cov_deviation = (0..d)
        .flat_map(|k| (0..d).map(move |j| (k, j)))
        .map(|(k, j)| (cov[k][j] - point.cov[(k, j)]).abs())
        .fold(0.0, f64::max);
    let passed = mass_deviation < tol && mean_deviation < tol && cov_deviation < tol;
    Ok(MomentReport {
        mass,
        mean,
        cov,
        mass_deviation,
        mean_deviation,
        cov_deviation,
        radius,
        tail_estimate: tail,
        tol,
        passed,
    })
}

/// Number of radial samples used by [`coincidence_gap`].
pub const GAP_SAMPLES: usize = 4001;

/// `sup_x |g_phi(0, a^2 I)(x) - n_psi(0, a^2 I)(x)|` over a radial grid,
/// divided by the larger of the two peaks.
pub fn coincidence_gap(phi: &PhiSpec, psi: &PhiSpec, dim: usize, a: f64) -> Result<f64> {
    let lphi = DeformedLogExp::new(phi)?;
    let lpsi = if phi == psi { lphi.clone() } else { DeformedLogExp::new(psi)? };
    coincidence_gap_lx(&lphi, &lpsi, dim, a)
}

/// [`coincidence_gap`] for already realized generators.
pub fn coincidence_gap_lx(
    lphi: &DeformedLogExp,
    lpsi: &DeformedLogExp,
    dim: usize,
    a: f64,
) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Input(format!("scale a must be positive, got {a}")));
    }
    let cov = DMatrix::identity(dim, dim) * (a * a);
    let g = FamilyPoint::new(lphi, FamilyTag::G, DVector::zeros(dim), cov.clone())?;
    let n = FamilyPoint::new(lpsi, FamilyTag::N, DVector::zeros(dim), cov)?;
    // Mahalanobis radius covering both supports, or where both densities
    // have decayed far below the peak.
    let reach = |p: &FamilyPoint| p.support_radius().finite().unwrap_or(12.0 + 4.0 * dim as f64);
    let r_max = 1.0001 * reach(&g).max(reach(&n));
    let peak = g.peak().max(n.peak());
    let mut worst: f64 = 0.0;
    for i in 0..GAP_SAMPLES {
        let r = r_max * i as f64 / (GAP_SAMPLES - 1) as f64;
        worst = worst.max((g.profile(r * r) - n.profile(r * r)).abs());
    }
    Ok(worst / peak)
}

/// Moment-matched fit of a grid density by a family member.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub fitted_mean: DVector<f64>,
    pub fitted_cov: DMatrix<f64>,
    /// L1 distance between the grid density and the fitted member.
    pub l1_residual: f64,
    pub family: FamilyTag,
    pub constants: NormalizationConstants,
}

/// Grid mass tolerance accepted by [`fit_family`].
pub const FIT_MASS_TOL: f64 = 1e-4;

/// Fits the member of the `family` with the grid's empirical mean and
/// covariance and reports the L1 distance to it.
pub fn fit_family(grid: &DensityGrid, lx: &DeformedLogExp, family: FamilyTag) -> Result<FitResult> {
    let mass = grid.mass();
    if (mass - 1.0).abs() > FIT_MASS_TOL {
        return Err(Error::Input(format!("grid mass {mass} is not within {FIT_MASS_TOL} of 1")));
    }
    let mean = grid.mean();
    let cov = grid.covariance();
    if cov.clone().cholesky().is_none() {
        return Err(Error::Degenerate("empirical covariance is not positive definite".into()));
    }
    let point = FamilyPoint::new(lx, family, mean.clone(), cov.clone())?;
    let l1 = grid.l1_distance(|x| point.density(x).unwrap_or(f64::NAN));
    Ok(FitResult {
        fitted_mean: mean,
        fitted_cov: cov,
        l1_residual: l1.min(2.0),
        family,
        constants: point.constants,
    })
}

/// Point `t` of the Wasserstein geodesic from `delta_0` to `N_phi(0, I)`,
/// i.e. the dilation `G_phi(0, t^2 I)`, sampled on a radial grid and fitted
/// against the `N` family. The residual vanishes (up to discretization) for
/// power generators and stays positive otherwise.
pub fn geodesic_membership(lx: &DeformedLogExp, dim: usize, t: f64, cells: usize) -> Result<FitResult> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("geodesic time {t} outside (0, 1]")));
    }
    let cov = DMatrix::identity(dim, dim) * (t * t);
    let g = FamilyPoint::new(lx, FamilyTag::G, DVector::zeros(dim), cov)?;
    let reach = g.support_radius().finite().map_or(t * (12.0 + 4.0 * dim as f64), |r| 1.0001 * r * t);
    let mut grid = DensityGrid::radial(dim, cells, reach)?;
    grid.fill(|x| g.density(x).unwrap_or(f64::NAN))?;
    grid.normalize()?;
    fit_family(&grid, lx, FamilyTag::N)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn lx(spec: PhiSpec) -> DeformedLogExp {
        DeformedLogExp::new(&spec).unwrap()
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn gaussian_density_matches_closed_form() {
        let g = lx(PhiSpec::power(1.0).unwrap());
        let v = DVector::from_vec(vec![1.0, -2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let det = cov.determinant();
        let inv = cov.clone().try_inverse().unwrap();
        for tag in [FamilyTag::N, FamilyTag::G] {
            let p = FamilyPoint::new(&g, tag, v.clone(), cov.clone()).unwrap();
            for x in [[1.0, -2.0], [0.0, 0.0], [3.0, 1.0]] {
                let y = DVector::from_row_slice(&x) - &v;
                let exact = (-0.5 * y.dot(&(&inv * &y))).exp() / (2.0 * PI * det.sqrt());
                assert!((p.density(&x).unwrap() - exact).abs() < 1e-12 * exact.max(1e-3));
            }
        }
    }

    #[test]
    fn n_and_g_agree_at_identity() {
        let l = lx(PhiSpec::power(1.2).unwrap());
        let n = FamilyPoint::new(&l, FamilyTag::N, DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let g = FamilyPoint::new(&l, FamilyTag::G, DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        for x in [[0.0, 0.0], [0.3, -1.0], [4.0, 2.0]] {
            assert_eq!(n.density(&x).unwrap(), g.density(&x).unwrap());
        }
        assert!(n.density(&[1.0]).is_err());
    }

    #[test]
    fn compact_support_is_exact() {
        let l = lx(PhiSpec::power(0.6).unwrap());
        let p = FamilyPoint::new(&l, FamilyTag::N, DVector::zeros(2), diag(&[1.0, 4.0])).unwrap();
        let r = p.support_radius().finite().unwrap();
        assert!(p.profile((0.999 * r).powi(2)) > 0.0);
        assert_eq!(p.profile((1.0 + 1e-12) * r * r), 0.0);
        assert_eq!(p.density(&[0.0, 2.0 * r * 1.001]).unwrap(), 0.0);
        assert!(p.density(&[0.0, 2.0 * r * 0.999]).unwrap() > 0.0);
    }

    #[test]
    fn gaussian_moments_verify() {
        let g = lx(PhiSpec::power(1.0).unwrap());
        let p = FamilyPoint::new(&g, FamilyTag::N, DVector::zeros(2), diag(&[1.0, 4.0])).unwrap();
        let rep = verify_moments(&p, 1e-8).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn q_gaussian_moments_verify() {
        for q in [0.8, 1.4] {
            let l = lx(PhiSpec::power(q).unwrap());
            let p = FamilyPoint::new(&l, FamilyTag::N, DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
            let rep = verify_moments(&p, 1e-6).unwrap();
            assert!(rep.passed, "q = {q}: {rep:?}");
        }
    }

    #[test]
    fn trivial_coincidence_at_unit_scale() {
        let s = PhiSpec::perturbed_power(1.0, 0.2).unwrap();
        assert!(coincidence_gap(&s, &s, 2, 1.0).unwrap() < 1e-10);
        assert!(coincidence_gap(&s, &s, 2, -1.0).is_err());
    }

    #[test]
    fn self_fit_is_small() {
        let l = lx(PhiSpec::power(1.2).unwrap());
        let p = FamilyPoint::new(&l, FamilyTag::N, DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let mut grid = DensityGrid::radial(2, 1000, 60.0).unwrap();
        grid.fill(|x| p.density(x).unwrap()).unwrap();
        let fit = fit_family(&grid, &l, FamilyTag::N).unwrap();
        assert!(fit.l1_residual < 1e-3, "{}", fit.l1_residual);

        let mut gauss = DensityGrid::radial(2, 1000, 12.0).unwrap();
        gauss.fill(|x| (-0.5 * x[0] * x[0]).exp() / (2.0 * PI)).unwrap();
        let cross = fit_family(&gauss, &l, FamilyTag::N).unwrap();
        assert!(cross.l1_residual > 1e-2, "{}", cross.l1_residual);
    }
}
