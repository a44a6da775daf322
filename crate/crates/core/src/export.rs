//! CSV and JSON writers for densities, trajectories and run records.
//!
//! Floats are written in their shortest round-trip form, so identical
//! inputs give byte-identical files. Every CSV starts with a
//! `# config_hash=<hex>` line.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::family::FamilyPoint;
use crate::grid::{DensityGrid, Geometry};
use crate::transport::matrix_rows;

/// Parameters written next to an exported density.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensitySidecar {
    pub phi: String,
    pub family: String,
    pub d: usize,
    pub v: Vec<f64>,
    #[serde(rename = "V")]
    pub cov: Vec<Vec<f64>>,
    pub lambda: f64,
    pub c: f64,
    pub config_hash: String,
}

impl DensitySidecar {
    pub fn new(point: &FamilyPoint, config_hash: &str) -> Self {
        Self {
            phi: point.lx().spec().label().to_string(),
            family: point.family().to_string(),
            d: point.dim(),
            v: point.mean().iter().copied().collect(),
            cov: matrix_rows(point.cov()),
            lambda: point.constants().lambda,
            c: point.constants().c,
            config_hash: config_hash.to_string(),
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

fn csv_writer(path: &Path, config_hash: &str) -> Result<csv::Writer<fs::File>> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "# config_hash={config_hash}")?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes arbitrary rows of floats under `header`.
pub fn write_rows(path: &Path, config_hash: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path, config_hash)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// `(r, rho)` rows for radial grids, `(x_1, x_2, rho)` for planar ones.
pub fn write_grid(path: &Path, grid: &DensityGrid, config_hash: &str) -> Result<()> {
    let radial = matches!(grid.geometry(), Geometry::Radial { .. });
    let rows: Vec<Vec<f64>> = (0..grid.len())
        .map(|i| {
            let x = grid.node(i);
            let mut row = if radial { vec![x[0]] } else { x };
            row.push(grid.values()[i]);
            row
        })
        .collect();
    let header: &[&str] = if radial { &["r", "rho"] } else { &["x_1", "x_2", "rho"] };
    write_rows(path, config_hash, header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_csv_has_hash_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = DensityGrid::radial(2, 3, 1.5).unwrap();
        g.values_mut().copy_from_slice(&[0.25, 0.125, 0.1]);
        let path = dir.path().join("g.csv");
        write_grid(&path, &g, "abc").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "# config_hash=abc\nr,rho\n0.25,0.25\n0.75,0.125\n1.25,0.1\n");
    }

    #[test]
    fn json_round_trips_floats() {
        let x = vec![0.1 + 0.2, 1.0 / 3.0, 1e-300];
        let s = to_json(&x).unwrap();
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, x);
    }
}
