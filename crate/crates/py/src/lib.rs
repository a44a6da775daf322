//! Python bindings: generators, normalization constants, family densities,
//! Wasserstein geometry and the flow solvers.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use phiexp::evolution::{initial_radial, moment_ode_evolve, pde_evolve, stability_diagnostic, FlowConfig};
use phiexp::family::{coincidence_gap_lx, verify_moments};
use phiexp::normalization::{f_integral as core_f, solve_constants as core_solve};
use phiexp::transport::{self, matrix_rows};
use phiexp::{DeformedLogExp, Error, FamilyTag, GaussianParams, PhiSpec, TableGenerator};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::Input(_) | Error::Generator(_) | Error::DimensionMismatch { .. } | Error::Metadata { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn tag(family: &str) -> PyResult<FamilyTag> {
    family.parse().map_err(py_err)
}

fn square(m: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = m.len();
    if n == 0 || m.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("expected a non-empty square matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| m[i][j]))
}

/// A generator together with its realized `ln_phi` / `exp_phi`.
#[pyclass(name = "Phi", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPhi {
    lx: DeformedLogExp,
}

impl PyPhi {
    fn from_spec(spec: PhiSpec) -> PyResult<Self> {
        Ok(Self {
            lx: DeformedLogExp::new(&spec).map_err(py_err)?,
        })
    }

    fn spec(&self) -> &PhiSpec {
        self.lx.spec()
    }
}

#[pymethods]
impl PyPhi {
    /// `phi(s) = s^q`.
    #[staticmethod]
    fn power(q: f64) -> PyResult<Self> {
        Self::from_spec(PhiSpec::power(q).map_err(py_err)?)
    }

    /// `phi(s) = s^q (1 + s)^eps`.
    #[staticmethod]
    fn perturbed_power(q: f64, eps: f64) -> PyResult<Self> {
        Self::from_spec(PhiSpec::perturbed_power(q, eps).map_err(py_err)?)
    }

    /// Tabulated generator, log-log interpolated, with declared exponents.
    #[staticmethod]
    #[pyo3(signature = (s, phi, delta_zero=None, delta_inf=None))]
    fn table(s: Vec<f64>, phi: Vec<f64>, delta_zero: Option<f64>, delta_inf: Option<f64>) -> PyResult<Self> {
        let table = TableGenerator::new(&s, &phi).map_err(py_err)?;
        let mut spec = PhiSpec::table(table).map_err(py_err)?;
        if let (Some(z), Some(i)) = (delta_zero, delta_inf) {
            spec = spec.with_exponents(z, i);
        }
        Self::from_spec(spec)
    }

    /// `alpha * phi`.
    fn scaled(&self, alpha: f64) -> PyResult<Self> {
        Self::from_spec(self.spec().scaled(alpha).map_err(py_err)?)
    }

    #[getter]
    fn label(&self) -> String {
        self.spec().label().to_string()
    }

    fn eval(&self, s: f64) -> f64 {
        self.spec().eval(s)
    }

    fn ln(&self, t: f64) -> PyResult<f64> {
        self.lx.ln(t).map_err(py_err)
    }

    fn exp(&self, tau: f64) -> PyResult<f64> {
        Ok(self.lx.exp(tau).map_err(py_err)?.to_f64())
    }

    /// `(l_phi, L_phi)` with infinities as floats.
    fn bounds(&self) -> (f64, f64) {
        let (lo, hi) = self.lx.log_bounds();
        (lo.to_f64(), hi.to_f64())
    }

    fn p_phi(&self) -> f64 {
        self.spec().p_phi().to_f64()
    }

    fn admissible(&self, dim: usize) -> bool {
        self.spec().admissible_for(dim)
    }

    fn __repr__(&self) -> String {
        format!("Phi({})", self.spec())
    }
}

/// `f_phi(p, lambda) = int_0^inf t^p exp_phi(lambda - t) dt`.
#[pyfunction]
fn f_integral(phi: &PyPhi, p: f64, lam: f64) -> PyResult<f64> {
    core_f(&phi.lx, p, lam).map_err(py_err)
}

/// Normalization pair for covariance `cov`, as a dict.
#[pyfunction]
#[pyo3(signature = (phi, cov, family="N"))]
fn solve_constants<'py>(py: Python<'py>, phi: &PyPhi, cov: Vec<Vec<f64>>, family: &str) -> PyResult<Bound<'py, PyDict>> {
    let v = square(&cov)?;
    let k = core_solve(&phi.lx, v.nrows(), &v, tag(family)?).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("lambda", k.lambda)?;
    d.set_item("c", k.c)?;
    d.set_item("residual", k.residual)?;
    d.set_item("crossings", k.crossings)?;
    d.set_item("det_v", k.det_v)?;
    Ok(d)
}

/// A member `N_phi(v, V)` or `G_phi(v, V)`.
#[pyclass(name = "FamilyPoint", frozen)]
struct PyFamilyPoint {
    inner: phiexp::FamilyPoint,
}

#[pymethods]
impl PyFamilyPoint {
    #[new]
    #[pyo3(signature = (phi, mean, cov, family="N"))]
    fn new(phi: &PyPhi, mean: Vec<f64>, cov: Vec<Vec<f64>>, family: &str) -> PyResult<Self> {
        let inner = phiexp::FamilyPoint::new(&phi.lx, tag(family)?, DVector::from_vec(mean), square(&cov)?)
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    fn density(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.density(&x).map_err(py_err)
    }

    fn peak(&self) -> f64 {
        self.inner.peak()
    }

    /// Mahalanobis support radius (`inf` for unbounded support).
    fn support_radius(&self) -> f64 {
        self.inner.support_radius().to_f64()
    }

    #[getter]
    fn constants(&self) -> (f64, f64) {
        (self.inner.constants().lambda, self.inner.constants().c)
    }

    /// Quadrature mass/mean/covariance deviations, as a dict.
    #[pyo3(signature = (tol=1e-6))]
    fn verify_moments<'py>(&self, py: Python<'py>, tol: f64) -> PyResult<Bound<'py, PyDict>> {
        let r = verify_moments(&self.inner, tol).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("mass", r.mass)?;
        d.set_item("mean", r.mean)?;
        d.set_item("cov", r.cov)?;
        d.set_item("mass_deviation", r.mass_deviation)?;
        d.set_item("mean_deviation", r.mean_deviation)?;
        d.set_item("cov_deviation", r.cov_deviation)?;
        d.set_item("passed", r.passed)?;
        Ok(d)
    }
}

/// Peak-normalized sup gap between `G_phi(0, a^2 I)` and `N_psi(0, a^2 I)`.
#[pyfunction]
fn coincidence_gap(phi: &PyPhi, psi: &PyPhi, dim: usize, a: f64) -> PyResult<f64> {
    coincidence_gap_lx(&phi.lx, &psi.lx, dim, a).map_err(py_err)
}

fn params(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> PyResult<GaussianParams> {
    GaussianParams::new(DVector::from_vec(mean), square(&cov)?).map_err(py_err)
}

#[pyfunction]
fn w2_distance(v: Vec<f64>, cov_v: Vec<Vec<f64>>, u: Vec<f64>, cov_u: Vec<Vec<f64>>) -> PyResult<f64> {
    transport::w2_distance(&params(v, cov_v)?, &params(u, cov_u)?).map_err(py_err)
}

#[pyfunction]
fn optimal_matrix(cov_v: Vec<Vec<f64>>, cov_u: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(matrix_rows(&transport::optimal_matrix(&square(&cov_v)?, &square(&cov_u)?).map_err(py_err)?))
}

/// `(w_t, W_t)` on the geodesic from `(v, V)` to `(u, U)`.
#[pyfunction]
fn geodesic_point(
    v: Vec<f64>,
    cov_v: Vec<Vec<f64>>,
    u: Vec<f64>,
    cov_u: Vec<Vec<f64>>,
    t: f64,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let g = transport::geodesic_point(&params(v, cov_v)?, &params(u, cov_u)?, t).map_err(py_err)?;
    Ok((g.mean.iter().copied().collect(), matrix_rows(&g.cov)))
}

/// Covariance ODE from `cov0`; returns `(times, covariances)`.
#[pyfunction]
fn moment_ode(phi: &PyPhi, cov0: Vec<Vec<f64>>, t_end: f64, output_times: Vec<f64>) -> PyResult<(Vec<f64>, Vec<Vec<Vec<f64>>>)> {
    let v = square(&cov0)?;
    let traj = moment_ode_evolve(&phi.lx, v.nrows(), &v, t_end, &output_times).map_err(py_err)?;
    Ok((traj.times, traj.covariances.iter().map(matrix_rows).collect()))
}

/// Radial flow run from `N_phi(0, a2 I)`; returns a dict with times,
/// masses, per-axis variances and `N`-family residuals.
#[pyfunction]
#[pyo3(signature = (phi, dim, a2, t_end, output_times, cells=512))]
fn evolve_radial<'py>(
    py: Python<'py>,
    phi: &PyPhi,
    dim: usize,
    a2: f64,
    t_end: f64,
    output_times: Vec<f64>,
    cells: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let p = phiexp::FamilyPoint::new(&phi.lx, FamilyTag::N, DVector::zeros(dim), DMatrix::identity(dim, dim) * a2)
        .map_err(py_err)?;
    let grid = initial_radial(&p, cells).map_err(py_err)?;
    let cfg = FlowConfig::new(phi.spec().clone(), dim, t_end, output_times).map_err(py_err)?;
    let traj = py.detach(|| pde_evolve(&grid, &cfg)).map_err(py_err)?;
    let series = stability_diagnostic(&traj, phi.spec(), FamilyTag::N).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("times", traj.times.clone())?;
    d.set_item("masses", traj.masses.clone())?;
    d.set_item("variances", traj.grids.iter().map(|g| g.covariance()[(0, 0)]).collect::<Vec<_>>())?;
    d.set_item("residuals", series.iter().map(|s| s.l1_residual).collect::<Vec<_>>())?;
    Ok(d)
}

#[pymodule]
fn phiexp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPhi>()?;
    m.add_class::<PyFamilyPoint>()?;
    m.add_function(wrap_pyfunction!(f_integral, m)?)?;
    m.add_function(wrap_pyfunction!(solve_constants, m)?)?;
    m.add_function(wrap_pyfunction!(coincidence_gap, m)?)?;
    m.add_function(wrap_pyfunction!(w2_distance, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(geodesic_point, m)?)?;
    m.add_function(wrap_pyfunction!(moment_ode, m)?)?;
    m.add_function(wrap_pyfunction!(evolve_radial, m)?)?;
    Ok(())
}
