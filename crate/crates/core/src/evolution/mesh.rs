//! Face-based finite-volume operator shared by the radial and planar grids.

use crate::error::{Error, Result};
use crate::grid::{sphere_area, DensityGrid, Geometry};
use crate::phi::DeformedLogExp;

#[derive(Debug, Clone)]
struct Face {
    left: usize,
    right: usize,
    /// Neighbor of `left` on the far side, for its slope.
    back: Option<usize>,
    /// Neighbor of `right` on the far side.
    front: Option<usize>,
    area: f64,
    /// Distance between the centers of `left` and `right`.
    dist: f64,
    /// Center distances `back -> left` and `right -> front`.
    back_dist: f64,
    front_dist: f64,
    /// Distances from the `left` and `right` centers to the face.
    left_half: f64,
    right_half: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Mesh {
    faces: Vec<Face>,
    volumes: Vec<f64>,
    /// `|x|^2` at cell centers.
    r2: Vec<f64>,
    /// Cell widths (smallest width for planar cells).
    widths: Vec<f64>,
    /// Spatial dimension used in the diffusive step limit.
    dims: usize,
    /// Wall faces as `(cell, interior neighbor, area, center distance)`;
    /// used only to monitor the flux the closed boundary holds back.
    boundary: Vec<(usize, usize, f64, f64)>,
}

impl Mesh {
    pub(crate) fn new(grid: &DensityGrid) -> Result<Self> {
        let n = grid.len();
        let too_small = match grid.geometry() {
            Geometry::Radial { .. } => n < 3,
            Geometry::Cartesian { x_edges, y_edges } => x_edges.len() < 4 || y_edges.len() < 4,
        };
        if too_small {
            return Err(Error::Input("flow grids need at least 3 cells per axis".into()));
        }
        let mut faces = Vec::new();
        let mut boundary = Vec::new();
        let (r2, widths, dims);
        match grid.geometry() {
            Geometry::Radial { dim, edges } => {
                let s = sphere_area(*dim);
                let centers: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
                for i in 0..n.saturating_sub(1) {
                    faces.push(Face {
                        left: i,
                        right: i + 1,
                        back: i.checked_sub(1),
                        front: (i + 2 < n).then_some(i + 2),
                        area: s * edges[i + 1].powi(*dim as i32 - 1),
                        dist: centers[i + 1] - centers[i],
                        back_dist: if i > 0 { centers[i] - centers[i - 1] } else { 1.0 },
                        front_dist: if i + 2 < n { centers[i + 2] - centers[i + 1] } else { 1.0 },
                        left_half: edges[i + 1] - centers[i],
                        right_half: centers[i + 1] - edges[i + 1],
                    });
                }
                boundary.push((n - 1, n - 2, s * edges[n].powi(*dim as i32 - 1), centers[n - 1] - centers[n - 2]));
                r2 = centers.iter().map(|r| r * r).collect();
                widths = edges.windows(2).map(|w| w[1] - w[0]).collect();
                dims = 1;
            }
            Geometry::Cartesian { x_edges, y_edges } => {
                let (nx, ny) = (x_edges.len() - 1, y_edges.len() - 1);
                let cx: Vec<f64> = x_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
                let cy: Vec<f64> = y_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
                let id = |ix: usize, iy: usize| iy * nx + ix;
                for iy in 0..ny {
                    let hy = y_edges[iy + 1] - y_edges[iy];
                    for ix in 0..nx.saturating_sub(1) {
                        faces.push(Face {
                            left: id(ix, iy),
                            right: id(ix + 1, iy),
                            back: ix.checked_sub(1).map(|j| id(j, iy)),
                            front: (ix + 2 < nx).then(|| id(ix + 2, iy)),
                            area: hy,
                            dist: cx[ix + 1] - cx[ix],
                            back_dist: if ix > 0 { cx[ix] - cx[ix - 1] } else { 1.0 },
                            front_dist: if ix + 2 < nx { cx[ix + 2] - cx[ix + 1] } else { 1.0 },
                            left_half: x_edges[ix + 1] - cx[ix],
                            right_half: cx[ix + 1] - x_edges[ix + 1],
                        });
                    }
                    boundary.push((id(0, iy), id(1, iy), hy, cx[1] - cx[0]));
                    boundary.push((id(nx - 1, iy), id(nx - 2, iy), hy, cx[nx - 1] - cx[nx - 2]));
                }
                for ix in 0..nx {
                    let hx = x_edges[ix + 1] - x_edges[ix];
                    for iy in 0..ny.saturating_sub(1) {
                        faces.push(Face {
                            left: id(ix, iy),
                            right: id(ix, iy + 1),
                            back: iy.checked_sub(1).map(|j| id(ix, j)),
                            front: (iy + 2 < ny).then(|| id(ix, iy + 2)),
                            area: hx,
                            dist: cy[iy + 1] - cy[iy],
                            back_dist: if iy > 0 { cy[iy] - cy[iy - 1] } else { 1.0 },
                            front_dist: if iy + 2 < ny { cy[iy + 2] - cy[iy + 1] } else { 1.0 },
                            left_half: y_edges[iy + 1] - cy[iy],
                            right_half: cy[iy + 1] - y_edges[iy + 1],
                        });
                    }
                    boundary.push((id(ix, 0), id(ix, 1), hx, cy[1] - cy[0]));
                    boundary.push((id(ix, ny - 1), id(ix, ny - 2), hx, cy[ny - 1] - cy[ny - 2]));
                }
                r2 = (0..n).map(|i| cx[i % nx].powi(2) + cy[i / nx].powi(2)).collect();
                widths = (0..n)
                    .map(|i| {
                        let (ix, iy) = (i % nx, i / nx);
                        (x_edges[ix + 1] - x_edges[ix]).min(y_edges[iy + 1] - y_edges[iy])
                    })
                    .collect();
                dims = 2;
            }
        }
        Ok(Self {
            faces,
            volumes: grid.volumes().to_vec(),
            r2,
            widths,
            dims,
            boundary,
        })
    }

    /// Diffusive step limit `min_i h_i^2 / (2 k D(rho_i))` over `k` axes,
    /// taken over cells above `floor`.
    pub(crate) fn diffusive_limit(&self, rho: &[f64], floor: f64, diffusivity: impl Fn(f64) -> f64) -> f64 {
        let k = 2.0 * self.dims as f64;
        rho.iter()
            .zip(&self.widths)
            .filter(|(r, _)| **r > floor)
            .map(|(&r, &h)| h * h / (k * diffusivity(r)))
            .fold(f64::INFINITY, f64::min)
    }
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Workspace for one evaluation of the flux divergence.
pub(crate) struct Operator<'a> {
    pub(crate) mesh: &'a Mesh,
    pub(crate) lx: &'a DeformedLogExp,
    /// Coefficient of `|x|^2` in the potential (0 disables the drift).
    pub(crate) potential: f64,
    pub(crate) floor: f64,
    xi: Vec<f64>,
    outflow: Vec<f64>,
}

/// Quantities gathered while evaluating the operator, for step control.
pub(crate) struct RateInfo {
    /// `min_i vol_i / (2 sum_faces area |u|)`.
    pub(crate) positivity_limit: f64,
    /// Flux the closed boundary would let out under the same upwinding.
    pub(crate) boundary_flux: f64,
}

impl<'a> Operator<'a> {
    pub(crate) fn new(mesh: &'a Mesh, lx: &'a DeformedLogExp, potential: f64, floor: f64) -> Self {
        let n = mesh.volumes.len();
        Self {
            mesh,
            lx,
            potential,
            floor,
            xi: vec![0.0; n],
            outflow: vec![0.0; n],
        }
    }

    /// `out = div(rho grad(ln_phi rho + potential |x|^2))` cell by cell, with
    /// upwinded minmod face values and no flux through the outer boundary.
    pub(crate) fn apply(&mut self, rho: &[f64], out: &mut [f64]) -> RateInfo {
        let mesh = self.mesh;
        for (i, x) in self.xi.iter_mut().enumerate() {
            *x = self.lx.ln_unchecked(rho[i].max(self.floor)) + self.potential * mesh.r2[i];
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        self.outflow.iter_mut().for_each(|o| *o = 0.0);
        for f in &mesh.faces {
            let (l, r) = (f.left, f.right);
            let u = -(self.xi[r] - self.xi[l]) / f.dist;
            let centered = (rho[r] - rho[l]) / f.dist;
            let value = if u > 0.0 {
                let back = f.back.map_or(0.0, |b| (rho[l] - rho[b]) / f.back_dist);
                rho[l] + f.left_half * minmod(centered, back)
            } else {
                let front = f.front.map_or(0.0, |k| (rho[k] - rho[r]) / f.front_dist);
                rho[r] - f.right_half * minmod(front, centered)
            };
            let flux = f.area * u * value;
            out[l] -= flux;
            out[r] += flux;
            let speed = f.area * u.abs();
            self.outflow[l] += speed;
            self.outflow[r] += speed;
        }
        let mut positivity_limit = f64::INFINITY;
        for i in 0..out.len() {
            out[i] /= mesh.volumes[i];
            if self.outflow[i] > 0.0 {
                positivity_limit = positivity_limit.min(mesh.volumes[i] / (2.0 * self.outflow[i]));
            }
        }
        let mut boundary_flux: f64 = 0.0;
        for &(cell, inner, area, dist) in &mesh.boundary {
            // Outward velocity extrapolated from the last interior face.
            let u = (self.xi[inner] - self.xi[cell]) / dist;
            if u > 0.0 {
                boundary_flux += area * u * rho[cell];
            }
        }
        RateInfo {
            positivity_limit,
            boundary_flux,
        }
    }
}
