//! Covariance ODE `dV/dt = 4 A V`, `A = c(V) V^{-1} - c_I I`, i.e.
//! `dV/dt = 4 (c(V) I - c_I V)`, and the mean `v_t = v_0 exp(-2 c_I t)`.

use std::cell::RefCell;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalization::{solve_for_det, solve_for_det_near, FamilyTag};
use crate::phi::DeformedLogExp;

/// Node spacing of the `c` table in `ln det V`.
const TABLE_STEP: f64 = 0.02;

/// Memoized `c_phi(V)` as a function of `ln det V`: solved on a uniform
/// grid on demand and interpolated by monotone cubic Hermite.
///
/// The node at `ln det V = 0` holds exactly `c_phi(I)`.
#[derive(Debug)]
pub struct ConstantTable {
    lx: DeformedLogExp,
    dim: usize,
    /// Node index -> `(lambda, c)`.
    nodes: RefCell<BTreeMap<i64, (f64, f64)>>,
}

impl ConstantTable {
    pub fn new(lx: &DeformedLogExp, dim: usize) -> Result<Self> {
        let k = solve_for_det(lx, dim, 1.0, FamilyTag::N)?;
        let mut nodes = BTreeMap::new();
        nodes.insert(0, (k.lambda, k.c));
        Ok(Self {
            lx: lx.clone(),
            dim,
            nodes: RefCell::new(nodes),
        })
    }

    pub fn c_identity(&self) -> f64 {
        self.nodes.borrow()[&0].1
    }

    pub fn solved_nodes(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn node(&self, k: i64) -> Result<f64> {
        if let Some(&(_, c)) = self.nodes.borrow().get(&k) {
            return Ok(c);
        }
        let hint = {
            let nodes = self.nodes.borrow();
            let below = nodes.range(..k).next_back();
            let above = nodes.range(k..).next();
            match (below, above) {
                (Some((&kb, v)), Some((&ka, w))) => if k - kb <= ka - k { v.0 } else { w.0 },
                (Some((_, v)), None) | (None, Some((_, v))) => v.0,
                (None, None) => unreachable!("table always holds the identity node"),
            }
        };
        let det = (k as f64 * TABLE_STEP).exp();
        let sol = solve_for_det_near(&self.lx, self.dim, det, hint)?;
        self.nodes.borrow_mut().insert(k, (sol.lambda, sol.c));
        Ok(sol.c)
    }

    /// `c_phi(V)` for any `V` with `ln det V = ln_det`.
    pub fn c_at(&self, ln_det: f64) -> Result<f64> {
        if !ln_det.is_finite() {
            return Err(Error::Domain(format!("ln det V = {ln_det}")));
        }
        let x = ln_det / TABLE_STEP;
        let k = x.floor() as i64;
        let s = x - k as f64;
        if s == 0.0 {
            return self.node(k);
        }
        let y = [self.node(k - 1)?, self.node(k)?, self.node(k + 1)?, self.node(k + 2)?];
        let secants = [y[1] - y[0], y[2] - y[1], y[3] - y[2]];
        let slope = |a: f64, b: f64| {
            if a * b <= 0.0 {
                0.0
            } else {
                2.0 * a * b / (a + b)
            }
        };
        let (m0, m1) = (slope(secants[0], secants[1]), slope(secants[1], secants[2]));
        let s2 = s * s;
        let s3 = s2 * s;
        Ok((2.0 * s3 - 3.0 * s2 + 1.0) * y[1]
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y[2]
            + (s3 - s2) * m1)
    }
}

/// Sampled solution of the moment equations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentTrajectory {
    pub times: Vec<f64>,
    pub covariances: Vec<DMatrix<f64>>,
    /// `A_t = c(V_t) V_t^{-1} - c_I I`.
    pub drifts: Vec<DMatrix<f64>>,
    pub means: Vec<DVector<f64>>,
    pub c_identity: f64,
}

/// Integrator for the moment equations of one generator and dimension.
#[derive(Debug)]
pub struct MomentOde {
    table: ConstantTable,
    pub rtol: f64,
    pub atol: f64,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `(ln det V, V^{-1})` from a symmetric eigendecomposition.
fn spectral_inverse(v: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(symmetrize(v));
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Degenerate("covariance left the SPD cone".into()));
    }
    let ln_det = eig.eigenvalues.iter().map(|l| l.ln()).sum();
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l)) * eig.eigenvectors.transpose();
    Ok((ln_det, symmetrize(&inv)))
}

// Dormand-Prince 5(4) tableau; the system is autonomous so the nodes are unused.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B_LOW: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

impl MomentOde {
    pub fn new(lx: &DeformedLogExp, dim: usize) -> Result<Self> {
        Ok(Self {
            table: ConstantTable::new(lx, dim)?,
            rtol: 1e-10,
            atol: 1e-12,
        })
    }

    pub fn table(&self) -> &ConstantTable {
        &self.table
    }

    /// `A = c(V) V^{-1} - c_I I`; exactly zero at `V = I`.
    pub fn drift(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (ln_det, inv) = spectral_inverse(v)?;
        let c = self.table.c_at(ln_det)?;
        let d = v.nrows();
        Ok(symmetrize(&(inv * c - DMatrix::identity(d, d) * self.table.c_identity())))
    }

    fn rate(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (ln_det, _) = spectral_inverse(v)?;
        let c = self.table.c_at(ln_det)?;
        let d = v.nrows();
        Ok((DMatrix::identity(d, d) * c - v * self.table.c_identity()) * 4.0)
    }

    /// Integrates from `(mean0, cov0)` at `t = 0`, sampling at `t = 0`, every
    /// output time in `(0, t_end]`, and `t_end`.
    pub fn evolve(
        &self,
        mean0: &DVector<f64>,
        cov0: &DMatrix<f64>,
        t_end: f64,
        output_times: &[f64],
    ) -> Result<MomentTrajectory> {
        let d = cov0.nrows();
        if d != self.table.dim || mean0.len() != d || !cov0.is_square() {
            return Err(Error::DimensionMismatch { expected: self.table.dim, got: d });
        }
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::Input(format!("t_end = {t_end} must be positive")));
        }
        let c_i = self.table.c_identity();
        let mut targets: Vec<f64> = output_times.iter().copied().filter(|&t| t > 0.0 && t <= t_end).collect();
        targets.push(t_end);
        targets.sort_by(f64::total_cmp);
        targets.dedup();

        let mut v = symmetrize(cov0);
        let mut traj = MomentTrajectory {
            times: vec![0.0],
            covariances: vec![v.clone()],
            drifts: vec![self.drift(&v)?],
            means: vec![mean0.clone()],
            c_identity: c_i,
        };
        let at = |time: f64, e: Error| Error::AtTime { time, source: Box::new(e) };
        let mut t = 0.0;
        let mut h = 1e-3_f64.min(t_end);
        let mut k: Vec<DMatrix<f64>> = Vec::with_capacity(7);
        for &target in &targets {
            while t < target {
                let step = h.min(target - t);
                k.clear();
                for i in 0..7 {
                    let mut y = v.clone();
                    for (j, kj) in k.iter().enumerate() {
                        if A[i][j] != 0.0 {
                            y += kj * (A[i][j] * step);
                        }
                    }
                    k.push(self.rate(&y).map_err(|e| at(t, e))?);
                }
                let mut high = v.clone();
                let mut err = DMatrix::zeros(d, d);
                for i in 0..7 {
                    high += &k[i] * (B[i] * step);
                    err += &k[i] * ((B[i] - B_LOW[i]) * step);
                }
                let scale = high.map(|x| self.atol + self.rtol * x.abs());
                let norm = err.zip_map(&scale, |e, s| (e / s).powi(2)).sum().sqrt() / d as f64;
                if norm <= 1.0 {
                    t = if step == target - t { target } else { t + step };
                    v = symmetrize(&high);
                }
                let factor = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
                h = step * factor;
                if h < 1e-14 * t_end {
                    return Err(at(t, Error::Stiffness { time: t, dt: h }));
                }
            }
            traj.times.push(target);
            traj.drifts.push(self.drift(&v).map_err(|e| at(target, e))?);
            traj.covariances.push(v.clone());
            traj.means.push(mean0 * (-2.0 * c_i * target).exp());
        }
        Ok(traj)
    }
}

/// Covariance trajectory of centered data from `cov0`.
pub fn moment_ode_evolve(
    lx: &DeformedLogExp,
    dim: usize,
    cov0: &DMatrix<f64>,
    t_end: f64,
    output_times: &[f64],
) -> Result<MomentTrajectory> {
    MomentOde::new(lx, dim)?.evolve(&DVector::zeros(dim), cov0, t_end, output_times)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phi::PhiSpec;

    fn lx(spec: PhiSpec) -> DeformedLogExp {
        DeformedLogExp::new(&spec).unwrap()
    }

    #[test]
    fn identity_is_a_fixed_point() {
        for spec in [PhiSpec::power(0.8).unwrap(), PhiSpec::perturbed_power(1.0, 0.2).unwrap()] {
            let ode = MomentOde::new(&lx(spec), 2).unwrap();
            let i2 = DMatrix::identity(2, 2);
            assert_eq!(ode.drift(&i2).unwrap(), DMatrix::zeros(2, 2));
            let traj = ode.evolve(&DVector::zeros(2), &i2, 2.0, &[1.0]).unwrap();
            for v in &traj.covariances {
                assert_eq!(v, &i2);
            }
        }
    }

    #[test]
    fn gaussian_covariance_relaxes_exponentially() {
        let traj = moment_ode_evolve(&lx(PhiSpec::power(1.0).unwrap()), 2, &(DMatrix::identity(2, 2) * 4.0), 2.0, &[0.5, 1.0]).unwrap();
        assert_eq!(traj.times, vec![0.0, 0.5, 1.0, 2.0]);
        for (t, v) in traj.times.iter().zip(&traj.covariances) {
            let exact = 1.0 + 3.0 * (-2.0 * t).exp();
            assert!((v[(0, 0)] - exact).abs() < 1e-8, "{t}: {}", v[(0, 0)]);
            assert!(v[(0, 1)].abs() < 1e-14);
        }
    }

    #[test]
    fn mean_decays() {
        let ode = MomentOde::new(&lx(PhiSpec::power(1.0).unwrap()), 2).unwrap();
        let traj = ode.evolve(&DVector::from_vec(vec![1.0, 0.0]), &DMatrix::identity(2, 2), 1.0, &[]).unwrap();
        assert!((traj.means[1][0] - (-1.0f64).exp()).abs() < 1e-12);
        let centered = ode.evolve(&DVector::zeros(2), &DMatrix::identity(2, 2), 1.0, &[]).unwrap();
        assert!(centered.means.iter().all(|m| m.amax() == 0.0));
    }

    #[test]
    fn table_interpolates_smoothly() {
        let l = lx(PhiSpec::power(1.2).unwrap());
        let table = ConstantTable::new(&l, 2).unwrap();
        let x = 0.5 * TABLE_STEP + 0.3;
        let direct = solve_for_det(&l, 2, x.exp(), FamilyTag::N).unwrap().c;
        assert!((table.c_at(x).unwrap() - direct).abs() < 1e-8 * direct);
    }
}
