//! Closed-form Wasserstein geometry on the `G` family.
//!
//! Between `G(v, V)` and `G(u, U)` the optimal map is the affine
//! `x -> W (x - v) + u` with `W = U^{1/2} (U^{1/2} V U^{1/2})^{-1/2} U^{1/2}`,
//! so distances and geodesics coincide with those of Gaussian measures and
//! never depend on the generator.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::FamilyPoint;
use crate::normalization::FamilyTag;

/// Relative eigenvalue level (of the trace) below which a covariance is
/// treated as degenerate.
const EIGEN_CLAMP: f64 = 1e-14;
const SYMMETRY_TOL: f64 = 1e-10;
/// Negative `W2^2` radicands down to this magnitude are rounding and clamp to 0.
const RADICAND_TOL: f64 = 1e-12;

/// Mean and (possibly degenerate) covariance of a family member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || !cov.is_square() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: cov.nrows(),
            });
        }
        check_symmetric(&cov)?;
        let p = Self { mean, cov };
        let eig = SymmetricEigen::new(p.cov.clone());
        let floor = -EIGEN_CLAMP * p.cov.trace().abs().max(f64::MIN_POSITIVE) - 1e-300;
        if eig.eigenvalues.iter().any(|&l| l < floor) {
            return Err(Error::Input("covariance has a negative eigenvalue".into()));
        }
        Ok(p)
    }

    /// Dirac mass at `mean`.
    pub fn dirac(mean: DVector<f64>) -> Self {
        let d = mean.len();
        Self {
            mean,
            cov: DMatrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// The affine optimal map `x -> W (x - v) + u`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimalMap {
    pub matrix: DMatrix<f64>,
    pub source_mean: DVector<f64>,
    pub target_mean: DVector<f64>,
}

impl OptimalMap {
    pub fn between(source: &GaussianParams, target: &GaussianParams) -> Result<Self> {
        same_dim(source, target)?;
        Ok(Self {
            matrix: optimal_matrix(&source.cov, &target.cov)?,
            source_mean: source.mean.clone(),
            target_mean: target.mean.clone(),
        })
    }

    pub fn identity(mean: DVector<f64>) -> Self {
        let d = mean.len();
        Self {
            matrix: DMatrix::identity(d, d),
            source_mean: mean.clone(),
            target_mean: mean,
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * (x - &self.source_mean) + &self.target_mean
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Input(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
    }
    let defect = (m - m.transpose()).amax();
    if defect > SYMMETRY_TOL * m.amax().max(1.0) {
        return Err(Error::Input(format!("matrix is not symmetric (defect {defect:e})")));
    }
    Ok(())
}

fn same_dim(p: &GaussianParams, q: &GaussianParams) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(())
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m.clone()));
    let clamp = EIGEN_CLAMP * m.trace().abs();
    let mapped = eig.eigenvalues.map(|l| f(if l < clamp { 0.0 } else { l }));
    symmetrize(&eig.eigenvectors * DMatrix::from_diagonal(&mapped) * eig.eigenvectors.transpose())
}

/// Symmetric square root by spectral decomposition. Eigenvalues below
/// `1e-14 * trace` are clamped to zero so degenerate covariances are accepted.
pub fn spd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    let eig = SymmetricEigen::new(symmetrize(m.clone()));
    let clamp = EIGEN_CLAMP * m.trace().abs();
    if eig.eigenvalues.iter().any(|&l| l < -clamp - 1e-300) {
        return Err(Error::Input("matrix has a negative eigenvalue".into()));
    }
    Ok(spectral_map(m, f64::sqrt))
}

/// `W = U^{1/2} (U^{1/2} V U^{1/2})^{-1/2} U^{1/2}`, satisfying `W V W = U`.
pub fn optimal_matrix(v: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.shape() != u.shape() {
        return Err(Error::DimensionMismatch {
            expected: v.nrows(),
            got: u.nrows(),
        });
    }
    let u_half = spd_sqrt(u)?;
    check_symmetric(v)?;
    let inner = symmetrize(&u_half * v * &u_half);
    let eig = SymmetricEigen::new(inner.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    if !(lo > EIGEN_CLAMP * hi) {
        return Err(Error::numeric(
            "U^{1/2} V U^{1/2} is numerically singular",
            if lo > 0.0 { hi / lo } else { f64::INFINITY },
        ));
    }
    let inv_half = spectral_map(&inner, |l| 1.0 / l.sqrt());
    Ok(symmetrize(&u_half * inv_half * &u_half))
}

/// `W2^2 = |v-u|^2 + tr V + tr U - 2 tr (U^{1/2} V U^{1/2})^{1/2}` with the
/// clamping flag.
pub fn w2_squared(p: &GaussianParams, q: &GaussianParams) -> Result<(f64, bool)> {
    same_dim(p, q)?;
    let u_half = spd_sqrt(&q.cov)?;
    let inner = symmetrize(&u_half * &p.cov * &u_half);
    let cross = spd_sqrt(&inner)?.trace();
    let shift = (&p.mean - &q.mean).norm_squared();
    let radicand = shift + p.cov.trace() + q.cov.trace() - 2.0 * cross;
    let scale = (shift + p.cov.trace() + q.cov.trace()).max(1.0);
    if radicand >= 0.0 {
        Ok((radicand, false))
    } else if radicand >= -RADICAND_TOL * scale {
        Ok((0.0, true))
    } else {
        Err(Error::numeric("negative W2 radicand", radicand))
    }
}

/// Wasserstein distance between `G_phi(v, V)` and `G_phi(u, U)` for any
/// admissible `phi`.
pub fn w2_distance(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    w2_squared(p, q).map(|(r, _)| r.sqrt())
}

/// Point at time `t in [0, 1]` on the geodesic from `p` to `q`:
/// `w_t = (1-t) v + t u`, `W_t = M_t V M_t` with `M_t = (1-t) I + t W`.
pub fn geodesic_point(p: &GaussianParams, q: &GaussianParams, t: f64) -> Result<GaussianParams> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("geodesic time {t} outside [0, 1]")));
    }
    geodesic_point_extended(p, q, t)
}

/// [`geodesic_point`] for any `t >= 0`: continues the geodesic past its
/// endpoint. Experimental; for `t > 1` the curve is only defined as the
/// continuation of the affine interpolation.
pub fn geodesic_point_extended(
    p: &GaussianParams,
    q: &GaussianParams,
    t: f64,
) -> Result<GaussianParams> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Domain(format!("geodesic time {t} must be >= 0")));
    }
    same_dim(p, q)?;
    let d = p.dim();
    let w = optimal_matrix(&p.cov, &q.cov)?;
    let m = DMatrix::identity(d, d) * (1.0 - t) + w * t;
    Ok(GaussianParams {
        mean: &p.mean * (1.0 - t) + &q.mean * t,
        cov: symmetrize(&m * &p.cov * &m),
    })
}

/// Tensor grid of `per_axis^d` points spanning `radii` Mahalanobis radii
/// around `mean` in the metric of `cov`.
pub fn mahalanobis_grid(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    per_axis: usize,
    radii: f64,
) -> Result<Vec<DVector<f64>>> {
    let d = mean.len();
    let root = spd_sqrt(cov)?;
    let axis: Vec<f64> = (0..per_axis)
        .map(|i| -radii + 2.0 * radii * i as f64 / (per_axis - 1).max(1) as f64)
        .collect();
    let total = per_axis.pow(d as u32);
    let mut out = Vec::with_capacity(total);
    for mut k in 0..total {
        let mut y = DVector::zeros(d);
        for j in 0..d {
            y[j] = axis[k % per_axis];
            k /= per_axis;
        }
        out.push(mean + &root * y);
    }
    Ok(out)
}

/// Maximum over `grid` of `|rho(x) - sigma(W x - W v + u) det W| / peak(rho)`,
/// where `rho`, `sigma` are the densities of `src`, `dst`.
pub fn pushforward_check(
    src: &FamilyPoint,
    dst: &FamilyPoint,
    map: &OptimalMap,
    grid: &[DVector<f64>],
) -> Result<f64> {
    if src.family() != FamilyTag::G || dst.family() != FamilyTag::G {
        return Err(Error::Input("pushforward check applies to the G family".into()));
    }
    if src.lx().spec() != dst.lx().spec() {
        return Err(Error::Input("source and target use different generators".into()));
    }
    let det_w = map.matrix.determinant();
    let peak = src.peak();
    let mut worst: f64 = 0.0;
    for x in grid {
        let rho = src.density(x.as_slice())?;
        let y = map.apply(x);
        let sigma = dst.density(y.as_slice())?;
        worst = worst.max((rho - sigma * det_w).abs() / peak);
    }
    Ok(worst)
}

/// JSON record for distance and geodesic outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeodesicRecord {
    pub v: Vec<f64>,
    #[serde(rename = "V")]
    pub v_cov: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    #[serde(rename = "U")]
    pub u_cov: Vec<Vec<f64>>,
    pub t: Option<f64>,
    #[serde(rename = "W2")]
    pub w2: f64,
    pub w_t: Option<Vec<f64>>,
    #[serde(rename = "W_t")]
    pub cov_t: Option<Vec<Vec<f64>>>,
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl GeodesicRecord {
    pub fn new(p: &GaussianParams, q: &GaussianParams, t: Option<f64>) -> Result<Self> {
        let w2 = w2_distance(p, q)?;
        let point = t.map(|t| geodesic_point(p, q, t)).transpose()?;
        Ok(Self {
            v: p.mean.iter().copied().collect(),
            v_cov: matrix_rows(&p.cov),
            u: q.mean.iter().copied().collect(),
            u_cov: matrix_rows(&q.cov),
            t,
            w2,
            w_t: point.as_ref().map(|g| g.mean.iter().copied().collect()),
            cov_t: point.as_ref().map(|g| matrix_rows(&g.cov)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    fn centered(cov: DMatrix<f64>) -> GaussianParams {
        let d = cov.nrows();
        GaussianParams::new(DVector::zeros(d), cov).unwrap()
    }

    #[test]
    fn sqrt_examples() {
        assert!((spd_sqrt(&DMatrix::identity(3, 3)).unwrap() - DMatrix::identity(3, 3)).amax() < 1e-15);
        assert!((spd_sqrt(&diag(&[4.0, 9.0])).unwrap() - diag(&[2.0, 3.0])).amax() < 1e-15);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(spd_sqrt(&asym), Err(Error::Input(_))));
        let neg = diag(&[1.0, -1.0]);
        assert!(spd_sqrt(&neg).is_err());
        // degenerate boundary is allowed
        assert!((spd_sqrt(&diag(&[0.0, 4.0])).unwrap() - diag(&[0.0, 2.0])).amax() < 1e-15);
    }

    #[test]
    fn optimal_matrix_examples() {
        let v = diag(&[1.0, 4.0]);
        assert!((optimal_matrix(&v, &v).unwrap() - DMatrix::identity(2, 2)).amax() < 1e-14);
        let w = optimal_matrix(&DMatrix::identity(2, 2), &(DMatrix::identity(2, 2) * 4.0)).unwrap();
        assert!((w - DMatrix::identity(2, 2) * 2.0).amax() < 1e-14);
        let w = optimal_matrix(&diag(&[1.0, 4.0]), &diag(&[9.0, 1.0])).unwrap();
        assert!((w - diag(&[3.0, 0.5])).amax() < 1e-14);
        assert!(matches!(optimal_matrix(&diag(&[0.0, 1.0]), &diag(&[1.0, 1.0])), Err(Error::Numeric { .. })));
    }

    #[test]
    fn distance_examples() {
        let i2 = DMatrix::identity(2, 2);
        let d = w2_distance(&centered(i2.clone()), &centered(&i2 * 4.0)).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-14);
        let p = GaussianParams::new(DVector::from_vec(vec![1.0, 2.0]), diag(&[1.0, 3.0])).unwrap();
        let q = GaussianParams::new(DVector::from_vec(vec![-2.0, 6.0]), diag(&[1.0, 3.0])).unwrap();
        assert!((w2_distance(&p, &q).unwrap() - 5.0).abs() < 1e-12);
        let u = diag(&[2.0, 3.0]);
        let dirac = GaussianParams::dirac(DVector::zeros(2));
        assert!((w2_distance(&dirac, &centered(u)).unwrap() - 5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn geodesic_examples() {
        let i2 = DMatrix::identity(2, 2);
        let p = centered(i2.clone());
        let q = centered(&i2 * 4.0);
        for t in [0.0, 0.3, 0.5, 1.0] {
            let g = geodesic_point(&p, &q, t).unwrap();
            assert!((g.cov - &i2 * (1.0 + t).powi(2)).amax() < 1e-13);
        }
        assert!(geodesic_point(&p, &q, 1.5).is_err());
        let g = geodesic_point_extended(&p, &q, 1.5).unwrap();
        assert!((g.cov - &i2 * 6.25).amax() < 1e-12);
    }

    #[test]
    fn record_serializes() {
        let i2 = DMatrix::identity(2, 2);
        let r = GeodesicRecord::new(&centered(i2.clone()), &centered(&i2 * 4.0), Some(0.5)).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["W_t"][0][0], 2.25);
        assert!(json["W2"].as_f64().unwrap() > 1.41);
    }
}
