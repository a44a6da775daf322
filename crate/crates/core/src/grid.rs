//! Discretized densities on radial or planar Cartesian cell grids.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// Quadrature points per cell (per axis) when sampling cell averages.
const CELL_POINTS: usize = 4;

/// Surface measure of the unit sphere in `R^d`.
pub fn sphere_area(dim: usize) -> f64 {
    let h = 0.5 * dim as f64;
    2.0 * (h * std::f64::consts::PI.ln() - ln_gamma(h)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    /// Spherical shells `[r_i, r_{i+1})` in `R^d`; values are radial profiles.
    Radial { dim: usize, edges: Vec<f64> },
    /// Rectangular cells in the plane, row-major with `x` fastest.
    Cartesian { x_edges: Vec<f64>, y_edges: Vec<f64> },
}

/// Piecewise-constant density: one value per cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityGrid {
    geometry: Geometry,
    volumes: Vec<f64>,
    values: Vec<f64>,
}

fn uniform_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) || !edges.iter().all(|e| e.is_finite()) {
        return Err(Error::Input("cell edges must be finite and strictly increasing".into()));
    }
    Ok(())
}

impl DensityGrid {
    /// `cells` equal shells covering the ball of radius `radius` in `R^dim`.
    pub fn radial(dim: usize, cells: usize, radius: f64) -> Result<Self> {
        if cells == 0 || !(radius > 0.0) {
            return Err(Error::Input("radial grid needs cells > 0 and radius > 0".into()));
        }
        Self::radial_with_edges(dim, uniform_edges(0.0, radius, cells))
    }

    /// `cells` shells: three quarters uniform on `[0, core]`, the rest
    /// geometrically stretched out to `radius`, continuing the core width.
    pub fn radial_stretched(dim: usize, cells: usize, core: f64, radius: f64) -> Result<Self> {
        if !(radius > core && core > 0.0) || cells < 4 {
            return Err(Error::Input("stretched grid needs 0 < core < radius and >= 4 cells".into()));
        }
        let n_core = 3 * cells / 4;
        let n_outer = cells - n_core;
        let h = core / n_core as f64;
        let span = radius - core;
        if span <= h * n_outer as f64 {
            return Self::radial(dim, cells, radius);
        }
        // Growth ratio g with h * (g + g^2 + ... + g^m) = span.
        let cover = |g: f64| h * g * (g.powi(n_outer as i32) - 1.0) / (g - 1.0);
        let (mut lo, mut hi) = (1.0 + 1e-12, 2.0);
        while cover(hi) < span {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cover(mid) < span {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let g = 0.5 * (lo + hi);
        let mut edges = uniform_edges(0.0, core, n_core);
        let mut w = h;
        for _ in 0..n_outer {
            w *= g;
            let next = edges.last().unwrap() + w;
            edges.push(next);
        }
        *edges.last_mut().unwrap() = radius;
        Self::radial_with_edges(dim, edges)
    }

    pub fn radial_with_edges(dim: usize, edges: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("dimension must be positive".into()));
        }
        check_edges(&edges)?;
        if edges[0] != 0.0 {
            return Err(Error::Input("radial grid must start at r = 0".into()));
        }
        let s = sphere_area(dim) / dim as f64;
        let d = dim as i32;
        let volumes = edges.windows(2).map(|w| s * (w[1].powi(d) - w[0].powi(d))).collect::<Vec<_>>();
        let n = volumes.len();
        Ok(Self {
            geometry: Geometry::Radial { dim, edges },
            volumes,
            values: vec![0.0; n],
        })
    }

    /// `nx * ny` equal rectangles covering `[lower, upper]`.
    pub fn cartesian(lower: [f64; 2], upper: [f64; 2], nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Input("cartesian grid needs nx, ny > 0".into()));
        }
        let x_edges = uniform_edges(lower[0], upper[0], nx);
        let y_edges = uniform_edges(lower[1], upper[1], ny);
        check_edges(&x_edges)?;
        check_edges(&y_edges)?;
        let mut volumes = Vec::with_capacity(nx * ny);
        for wy in y_edges.windows(2) {
            for wx in x_edges.windows(2) {
                volumes.push((wx[1] - wx[0]) * (wy[1] - wy[0]));
            }
        }
        Ok(Self {
            geometry: Geometry::Cartesian { x_edges, y_edges },
            values: vec![0.0; volumes.len()],
            volumes,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    /// Dimension of the underlying space.
    pub fn dim(&self) -> usize {
        match &self.geometry {
            Geometry::Radial { dim, .. } => *dim,
            Geometry::Cartesian { .. } => 2,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn radial_edges(&self) -> Option<&[f64]> {
        match &self.geometry {
            Geometry::Radial { edges, .. } => Some(edges),
            _ => None,
        }
    }

    /// Cell center. Radial cells report the shell midpoint on the first axis.
    pub fn node(&self, i: usize) -> Vec<f64> {
        match &self.geometry {
            Geometry::Radial { dim, edges } => {
                let mut x = vec![0.0; *dim];
                x[0] = 0.5 * (edges[i] + edges[i + 1]);
                x
            }
            Geometry::Cartesian { x_edges, y_edges } => {
                let nx = x_edges.len() - 1;
                let (ix, iy) = (i % nx, i / nx);
                vec![
                    0.5 * (x_edges[ix] + x_edges[ix + 1]),
                    0.5 * (y_edges[iy] + y_edges[iy + 1]),
                ]
            }
        }
    }

    /// Average of `f` over cell `i` by tensor Gauss-Legendre quadrature
    /// (radial cells weighted by `r^{d-1}`).
    pub fn cell_average(&self, i: usize, f: &mut impl FnMut(&[f64]) -> f64) -> f64 {
        let (nodes, weights) = gauss_legendre(CELL_POINTS);
        match &self.geometry {
            Geometry::Radial { dim, edges } => {
                let (a, b) = (edges[i], edges[i + 1]);
                let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
                let mut x = vec![0.0; *dim];
                let (mut num, mut den) = (0.0, 0.0);
                for (t, w) in nodes.iter().zip(&weights) {
                    let r = mid + half * t;
                    let jac = w * r.powi(*dim as i32 - 1);
                    x[0] = r;
                    num += jac * f(&x);
                    den += jac;
                }
                num / den
            }
            Geometry::Cartesian { x_edges, y_edges } => {
                let nx = x_edges.len() - 1;
                let (ix, iy) = (i % nx, i / nx);
                let (mx, hx) = (0.5 * (x_edges[ix] + x_edges[ix + 1]), 0.5 * (x_edges[ix + 1] - x_edges[ix]));
                let (my, hy) = (0.5 * (y_edges[iy] + y_edges[iy + 1]), 0.5 * (y_edges[iy + 1] - y_edges[iy]));
                let mut acc = 0.0;
                for (ty, wy) in nodes.iter().zip(&weights) {
                    for (tx, wx) in nodes.iter().zip(&weights) {
                        acc += wx * wy * f(&[mx + hx * tx, my + hy * ty]);
                    }
                }
                acc / 4.0
            }
        }
    }

    /// Sets every cell to the cell average of `f`.
    pub fn fill(&mut self, mut f: impl FnMut(&[f64]) -> f64) -> Result<()> {
        for i in 0..self.len() {
            let v = self.cell_average(i, &mut f);
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Input(format!("density value {v} at cell {i}")));
            }
            self.values[i] = v;
        }
        Ok(())
    }

    /// `sum |rho_i - avg_i f| vol_i`.
    pub fn l1_distance(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        (0..self.len())
            .map(|i| (self.values[i] - self.cell_average(i, &mut f)).abs() * self.volumes[i])
            .sum()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().zip(&self.volumes).map(|(v, w)| v * w).sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Rescales to unit mass.
    pub fn normalize(&mut self) -> Result<()> {
        let m = self.mass();
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::Degenerate(format!("grid mass {m}")));
        }
        self.values.iter_mut().for_each(|v| *v /= m);
        Ok(())
    }

    /// `int_cell r^2 dx` for each radial shell.
    pub fn radial_second_moments(&self) -> Option<Vec<f64>> {
        let Geometry::Radial { dim, edges } = &self.geometry else {
            return None;
        };
        let s = sphere_area(*dim) / (*dim + 2) as f64;
        let k = *dim as i32 + 2;
        Some(edges.windows(2).map(|w| s * (w[1].powi(k) - w[0].powi(k))).collect())
    }

    /// Empirical mean, normalized by the grid mass.
    pub fn mean(&self) -> DVector<f64> {
        let d = self.dim();
        if matches!(self.geometry, Geometry::Radial { .. }) {
            return DVector::zeros(d);
        }
        let mut m = DVector::zeros(d);
        for i in 0..self.len() {
            let w = self.values[i] * self.volumes[i];
            m += DVector::from_vec(self.node(i)) * w;
        }
        m / self.mass()
    }

    /// Empirical covariance, normalized by the grid mass.
    ///
    /// Values are cell averages, i.e. samples of the density smoothed by the
    /// cell box; the `O(h^2)` variance this smoothing adds is subtracted.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mass = self.mass();
        match &self.geometry {
            Geometry::Radial { .. } => {
                let m2 = self.radial_second_moments().unwrap_or_default();
                let edges = self.radial_edges().unwrap_or_default();
                let mut total = 0.0;
                let mut bias = 0.0;
                for i in 0..self.len() {
                    let h = edges[i + 1] - edges[i];
                    total += self.values[i] * m2[i];
                    bias += self.values[i] * self.volumes[i] * h * h / 6.0;
                }
                DMatrix::identity(d, d) * ((total / d as f64 - bias) / mass)
            }
            Geometry::Cartesian { x_edges, y_edges } => {
                let mean = self.mean();
                let nx = x_edges.len() - 1;
                let mut c = DMatrix::zeros(2, 2);
                for i in 0..self.len() {
                    let w = self.values[i] * self.volumes[i];
                    let y = DVector::from_vec(self.node(i)) - &mean;
                    c += &y * y.transpose() * w;
                    let hx = x_edges[i % nx + 1] - x_edges[i % nx];
                    let hy = y_edges[i / nx + 1] - y_edges[i / nx];
                    c[(0, 0)] -= w * hx * hx / 12.0;
                    c[(1, 1)] -= w * hy * hy / 12.0;
                }
                c / mass
            }
        }
    }
}
