//! The nonlinear flow `d rho/dt = div(rho grad(ln_phi rho + c_I |x|^2))`
//! with `c_I = c_phi(I_d)`, its covariance ODE, and family-stability
//! diagnostics.
//!
//! The flow is discretized by a conservative finite-volume scheme on a
//! radial or planar grid: velocities `u = -grad xi` with
//! `xi = ln_phi(max(rho, floor)) + c_I |x|^2` live on faces, densities are
//! upwinded from minmod reconstructions, and time is advanced by SSP-RK2.

mod mesh;
mod moments;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{fit_family, FamilyPoint};
use crate::grid::DensityGrid;
use crate::normalization::{solve_for_det, FamilyTag};
use crate::phi::{DeformedLogExp, PhiSpec};

use mesh::{Mesh, Operator};
pub use moments::{moment_ode_evolve, ConstantTable, MomentOde, MomentTrajectory};

/// Initial grids span this many Mahalanobis radii.
pub const DOMAIN_RADII: f64 = 8.0;
/// Step halvings allowed when a stage goes negative.
const MAX_HALVINGS: usize = 40;

/// Parameters of a flow run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowConfig {
    pub phi: PhiSpec,
    pub dim: usize,
    /// `c_phi(I_d)`; the potential is `potential_coefficient * |x|^2`.
    pub potential_coefficient: f64,
    pub cfl: f64,
    pub t_end: f64,
    pub output_times: Vec<f64>,
    /// Floor for `ln_phi` evaluation, relative to the initial peak density.
    pub density_floor: f64,
    /// Switches the confining potential off (pure diffusion test mode).
    pub potential: bool,
    /// Steps below this abort the run.
    pub dt_min: f64,
}

impl FlowConfig {
    /// Solves `c_phi(I_d)` and fills defaults: `cfl = 0.8`, floor `1e-14`.
    pub fn new(phi: PhiSpec, dim: usize, t_end: f64, output_times: Vec<f64>) -> Result<Self> {
        let lx = DeformedLogExp::new(&phi)?;
        let c = solve_for_det(&lx, dim, 1.0, FamilyTag::G)?.c;
        let cfg = Self {
            phi,
            dim,
            potential_coefficient: c,
            cfl: 0.8,
            t_end,
            output_times,
            density_floor: DENSITY_FLOOR,
            potential: true,
            dt_min: 1e-12,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.potential_coefficient > 0.0) {
            return Err(Error::Input("potential coefficient must be positive".into()));
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(Error::Input(format!("cfl = {} outside (0, 1)", self.cfl)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Input(format!("t_end = {} must be positive", self.t_end)));
        }
        if let Some(t) = self.output_times.iter().find(|t| !(**t >= 0.0 && **t <= self.t_end)) {
            return Err(Error::Input(format!("output time {t} outside [0, t_end]")));
        }
        if !(self.density_floor >= 0.0) || !(self.dt_min > 0.0) {
            return Err(Error::Input("density floor and dt_min must be nonnegative/positive".into()));
        }
        Ok(())
    }
}

/// Densities at the requested output times, with run statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowTrajectory {
    pub times: Vec<f64>,
    pub grids: Vec<DensityGrid>,
    pub masses: Vec<f64>,
    pub steps: usize,
    pub rejected_steps: usize,
    pub max_mass_drift: f64,
    /// Largest flux the closed outer boundary held back. Values above
    /// `1e-12` mean the domain was too small for the run.
    pub max_boundary_flux: f64,
    pub floor: f64,
}

impl FlowTrajectory {
    pub fn boundary_warning(&self) -> bool {
        self.max_boundary_flux > 1e-12
    }
}

/// Default `ln_phi` floor relative to the peak density.
pub const DENSITY_FLOOR: f64 = 1e-14;
/// Cap on the domain radius, in Mahalanobis radii.
const MAX_REACH: f64 = 1e3;

/// Mahalanobis radius the initial grid must cover: the support edge for
/// compact supports, otherwise where the density falls to
/// [`DENSITY_FLOOR`] times its peak; at least [`DOMAIN_RADII`].
pub fn domain_reach(point: &FamilyPoint) -> f64 {
    if let Some(r) = point.support_radius().finite() {
        return (1.05 * r).max(DOMAIN_RADII);
    }
    let level = DENSITY_FLOOR * point.peak();
    if point.profile(DOMAIN_RADII * DOMAIN_RADII) <= level {
        return DOMAIN_RADII;
    }
    let (mut lo, mut hi) = (DOMAIN_RADII, 2.0 * DOMAIN_RADII);
    while hi < MAX_REACH && point.profile(hi * hi) > level {
        lo = hi;
        hi *= 2.0;
    }
    if hi >= MAX_REACH {
        return MAX_REACH;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if point.profile(mid * mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Isotropic, centered `point` averaged onto `cells` radial shells covering
/// [`domain_reach`], with the mass renormalized to 1. Beyond
/// [`DOMAIN_RADII`] the shells widen geometrically, so algebraic tails are
/// resolved down to the floor without shrinking the time step.
pub fn initial_radial(point: &FamilyPoint, cells: usize) -> Result<DensityGrid> {
    let a = isotropic_scale(point)?;
    let reach = domain_reach(point);
    let mut grid = if reach > 1.5 * DOMAIN_RADII {
        DensityGrid::radial_stretched(point.dim(), cells, DOMAIN_RADII * a, reach * a)?
    } else {
        DensityGrid::radial(point.dim(), cells, reach * a)?
    };
    grid.fill(|x| point.density(x).unwrap_or(f64::NAN))?;
    grid.normalize()?;
    Ok(grid)
}

pub fn initial_radial_with_radius(point: &FamilyPoint, cells: usize, radius: f64) -> Result<DensityGrid> {
    isotropic_scale(point)?;
    let mut grid = DensityGrid::radial(point.dim(), cells, radius)?;
    grid.fill(|x| point.density(x).unwrap_or(f64::NAN))?;
    grid.normalize()?;
    Ok(grid)
}

fn isotropic_scale(point: &FamilyPoint) -> Result<f64> {
    let d = point.dim();
    let a2 = point.cov()[(0, 0)];
    let off = (point.cov() - DMatrix::identity(d, d) * a2).amax();
    if point.mean().amax() != 0.0 || off > 1e-12 * a2 {
        return Err(Error::Input(
            "radial grids need a centered isotropic covariance; use the Cartesian path".into(),
        ));
    }
    Ok(a2.sqrt())
}

/// Planar `point` averaged onto `n x n` cells spanning [`DOMAIN_RADII`]
/// standard deviations around the mean on each axis.
pub fn initial_cartesian(point: &FamilyPoint, n: usize) -> Result<DensityGrid> {
    if point.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: point.dim() });
    }
    let reach = domain_reach(point).min(4.0 * DOMAIN_RADII);
    let (m, c) = (point.mean(), point.cov());
    let (sx, sy) = (c[(0, 0)].sqrt() * reach, c[(1, 1)].sqrt() * reach);
    let mut grid = DensityGrid::cartesian([m[0] - sx, m[1] - sy], [m[0] + sx, m[1] + sy], n, n)?;
    grid.fill(|x| point.density(x).unwrap_or(f64::NAN))?;
    grid.normalize()?;
    Ok(grid)
}

/// Integrates the flow from `init` to `cfg.t_end`, recording the density
/// at `t = 0` and at every output time.
pub fn pde_evolve(init: &DensityGrid, cfg: &FlowConfig) -> Result<FlowTrajectory> {
    cfg.validate()?;
    if !cfg.phi.vanishes_at_zero() {
        return Err(Error::Domain(format!("{} does not vanish at 0", cfg.phi)));
    }
    cfg.phi.check_admissible(cfg.dim)?;
    if init.dim() != cfg.dim {
        return Err(Error::DimensionMismatch { expected: cfg.dim, got: init.dim() });
    }
    let mass0 = init.mass();
    if (mass0 - 1.0).abs() > 1e-6 {
        return Err(Error::Input(format!("initial mass {mass0} is not within 1e-6 of 1")));
    }
    let lx = DeformedLogExp::new(&cfg.phi)?;
    let mesh = Mesh::new(init)?;
    let floor = cfg.density_floor * init.max_value();
    let potential = if cfg.potential { cfg.potential_coefficient } else { 0.0 };
    let mut op = Operator::new(&mesh, &lx, potential, floor.max(f64::MIN_POSITIVE));

    let mut targets: Vec<f64> = cfg.output_times.iter().copied().filter(|&t| t > 0.0).collect();
    targets.push(cfg.t_end);
    targets.sort_by(f64::total_cmp);
    targets.dedup();

    let n = init.len();
    let mut rho = init.values().to_vec();
    let (mut k1, mut k2) = (vec![0.0; n], vec![0.0; n]);
    let (mut stage, mut next) = (vec![0.0; n], vec![0.0; n]);
    let mut traj = FlowTrajectory {
        times: vec![0.0],
        grids: vec![init.clone()],
        masses: vec![mass0],
        steps: 0,
        rejected_steps: 0,
        max_mass_drift: 0.0,
        max_boundary_flux: 0.0,
        floor,
    };
    let volumes = init.volumes();
    let mass_of = |v: &[f64]| v.iter().zip(volumes).map(|(a, b)| a * b).sum::<f64>();

    let mut t = 0.0;
    for &target in &targets {
        while t < target {
            let info = op.apply(&rho, &mut k1);
            traj.max_boundary_flux = traj.max_boundary_flux.max(info.boundary_flux);
            let limit = info
                .positivity_limit
                .min(mesh.diffusive_limit(&rho, floor, |r| r / lx.phi(r)));
            let mut dt = cfg.cfl * limit;
            if dt < cfg.dt_min {
                return Err(Error::Stiffness { time: t, dt });
            }
            let last = dt >= target - t;
            if last {
                dt = target - t;
            }
            let mut halvings = 0;
            loop {
                let bad = ssp_rk2(&mut op, &rho, &k1, &mut k2, &mut stage, &mut next, dt);
                match bad {
                    None => break,
                    Some((cell, value)) => {
                        traj.rejected_steps += 1;
                        halvings += 1;
                        dt *= 0.5;
                        if halvings > MAX_HALVINGS || !value.is_finite() {
                            return Err(Error::Scheme { time: t, cell, value });
                        }
                    }
                }
            }
            std::mem::swap(&mut rho, &mut next);
            traj.steps += 1;
            t = if last && halvings == 0 { target } else { t + dt };
        }
        let mass = mass_of(&rho);
        traj.max_mass_drift = traj.max_mass_drift.max((mass - mass0).abs());
        if cfg.output_times.iter().any(|&o| o == target) || target == cfg.t_end {
            let mut grid = init.clone();
            grid.values_mut().copy_from_slice(&rho);
            traj.times.push(target);
            traj.grids.push(grid);
            traj.masses.push(mass);
        }
    }
    Ok(traj)
}

/// One SSP-RK2 step into `next`. Returns the first negative or non-finite
/// cell if either stage fails.
fn ssp_rk2(
    op: &mut Operator<'_>,
    rho: &[f64],
    k1: &[f64],
    k2: &mut [f64],
    stage: &mut [f64],
    next: &mut [f64],
    dt: f64,
) -> Option<(usize, f64)> {
    for i in 0..rho.len() {
        stage[i] = rho[i] + dt * k1[i];
    }
    if let Some(bad) = first_invalid(stage) {
        return Some(bad);
    }
    op.apply(stage, k2);
    for i in 0..rho.len() {
        next[i] = 0.5 * rho[i] + 0.5 * (stage[i] + dt * k2[i]);
    }
    first_invalid(next)
}

fn first_invalid(v: &[f64]) -> Option<(usize, f64)> {
    v.iter()
        .position(|x| !(*x >= 0.0 && x.is_finite()))
        .map(|i| (i, v[i]))
}

/// Family residual at one output time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub t: f64,
    pub l1_residual: Option<f64>,
    pub fitted_cov: Option<DMatrix<f64>>,
    pub fitted_mean: Option<DVector<f64>>,
    /// Why the fit is missing, if it is.
    pub note: Option<String>,
}

/// Fits each density of `traj` against `family` and reports the L1
/// residuals. Failed fits are recorded as missing points.
pub fn stability_diagnostic(
    traj: &FlowTrajectory,
    phi: &PhiSpec,
    family: FamilyTag,
) -> Result<Vec<StabilityPoint>> {
    let lx = DeformedLogExp::new(phi)?;
    Ok(traj
        .times
        .iter()
        .zip(&traj.grids)
        .map(|(&t, grid)| match fit_family(grid, &lx, family) {
            Ok(fit) => StabilityPoint {
                t,
                l1_residual: Some(fit.l1_residual),
                fitted_cov: Some(fit.fitted_cov),
                fitted_mean: Some(fit.fitted_mean),
                note: None,
            },
            Err(e) => StabilityPoint {
                t,
                l1_residual: None,
                fitted_cov: None,
                fitted_mean: None,
                note: Some(e.to_string()),
            },
        })
        .collect())
}
