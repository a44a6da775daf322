//! Experiment configuration: TOML input, validation, and the hash that tags
//! every output.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use phiexp::{FamilyTag, PhiSpec, TableGenerator};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Power,
    PerturbedPower,
    Table,
}

/// `[generator]` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    pub q: Option<f64>,
    pub eps: Option<f64>,
    pub table_path: Option<PathBuf>,
    /// Declared exponents for tables, `[delta_zero, delta_inf]`.
    pub exponents: Option<[f64; 2]>,
    pub scale: Option<f64>,
}

impl GeneratorConfig {
    pub fn build(&self, base: &Path) -> Result<PhiSpec, CliError> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| CliError::Config(format!("generator.{name} is required for {:?}", self.kind)))
        };
        let spec = match self.kind {
            GeneratorKind::Power => PhiSpec::power(need(self.q, "q")?)?,
            GeneratorKind::PerturbedPower => {
                PhiSpec::perturbed_power(need(self.q, "q")?, need(self.eps, "eps")?)?
            }
            GeneratorKind::Table => {
                let path = self
                    .table_path
                    .as_ref()
                    .ok_or_else(|| CliError::Config("generator.table_path is required for tables".into()))?;
                let table = TableGenerator::from_csv(&base.join(path))?;
                let spec = PhiSpec::table(table)?;
                match self.exponents {
                    Some([z, i]) => spec.with_exponents(z, i),
                    None => spec,
                }
            }
        };
        match self.scale {
            Some(a) => Ok(spec.scaled(a)?),
            None => Ok(spec),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizeConfig {
    #[serde(rename = "V")]
    pub cov: Option<Vec<Vec<f64>>>,
    pub family: Option<FamilyTag>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub v: Option<Vec<f64>>,
    #[serde(rename = "V")]
    pub cov: Option<Vec<Vec<f64>>>,
    pub family: Option<FamilyTag>,
    /// Explicit evaluation points; otherwise a radial profile is written.
    pub points: Option<Vec<Vec<f64>>>,
    /// Radial profile extent in Mahalanobis radii.
    pub radius: Option<f64>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    pub v: Option<Vec<f64>>,
    #[serde(rename = "V")]
    pub cov: Option<Vec<Vec<f64>>>,
    pub family: Option<FamilyTag>,
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoincidenceConfig {
    /// Generator of the `N` family; defaults to `[generator]`.
    pub psi: Option<GeneratorConfig>,
    pub a: Vec<f64>,
    /// Pass when every gap is below this.
    pub threshold: Option<f64>,
    /// With `--expect-gap`: pass when the largest gap exceeds this.
    pub expect_gap_threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub v: Option<Vec<f64>>,
    #[serde(rename = "V")]
    pub cov: Option<Vec<Vec<f64>>>,
    pub u: Option<Vec<f64>>,
    #[serde(rename = "U")]
    pub target_cov: Vec<Vec<f64>>,
    /// Geodesic times.
    pub t: Option<Vec<f64>>,
    /// Allow `t > 1` (experimental continuation).
    pub extended: Option<bool>,
    /// Residual threshold for the pushforward check along the geodesic.
    pub pushforward_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Radial,
    Cartesian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    /// Initial covariance; the initial density is the `N` member with it.
    #[serde(rename = "V0")]
    pub cov0: Vec<Vec<f64>>,
    /// `gaussian` starts from the Gaussian with `V0` instead.
    pub init: Option<String>,
    pub t_end: f64,
    pub output_times: Vec<f64>,
    pub cells: Option<usize>,
    pub geometry: Option<GeometryKind>,
    pub cfl: Option<f64>,
    pub potential: Option<bool>,
    pub family: Option<FamilyTag>,
    /// Relative tolerance for PDE vs moment-ODE covariances (evolve).
    pub ode_tolerance: Option<f64>,
    /// Pass when every residual is below this (stability).
    pub threshold: Option<f64>,
    /// With `--expect-gap`: pass when some residual exceeds
    /// `gap_factor * baseline`.
    pub baseline: Option<f64>,
    pub gap_factor: Option<f64>,
}

/// Whole config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub generator: GeneratorConfig,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub normalize: Option<NormalizeConfig>,
    pub density: Option<DensityConfig>,
    pub moments: Option<MomentsConfig>,
    pub coincidence: Option<CoincidenceConfig>,
    pub w2: Option<PairConfig>,
    pub geodesic: Option<PairConfig>,
    pub evolve: Option<FlowSection>,
    pub stability: Option<FlowSection>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if !(2..=3).contains(&cfg.dim) {
            return Err(CliError::Config(format!("dim = {} (supported: 2, 3)", cfg.dim)));
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    s.as_ref().ok_or_else(|| CliError::Config(format!("missing [{name}] table")))
}

pub fn vector(v: &Option<Vec<f64>>, dim: usize, name: &str) -> Result<DVector<f64>, CliError> {
    match v {
        None => Ok(DVector::zeros(dim)),
        Some(v) if v.len() == dim => Ok(DVector::from_column_slice(v)),
        Some(v) => Err(CliError::Config(format!("{name} has length {}, expected {dim}", v.len()))),
    }
}

pub fn matrix(m: &[Vec<f64>], dim: usize, name: &str) -> Result<DMatrix<f64>, CliError> {
    if m.len() != dim || m.iter().any(|r| r.len() != dim) {
        return Err(CliError::Config(format!("{name} must be {dim}x{dim}")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| m[i][j]))
}

pub fn matrix_or_identity(m: &Option<Vec<Vec<f64>>>, dim: usize, name: &str) -> Result<DMatrix<f64>, CliError> {
    match m {
        None => Ok(DMatrix::identity(dim, dim)),
        Some(m) => matrix(m, dim, name),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
dim = 2
[generator]
kind = "power"
q = 1.2
[normalize]
V = [[1.0, 0.0], [0.0, 1.0]]
"#;

    #[test]
    fn parses_and_hashes_stably() {
        let a = ExperimentConfig::parse(BASIC).unwrap();
        let b = ExperimentConfig::parse(&BASIC.replace("1.2", "1.20")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::parse(&BASIC.replace("1.2", "1.3")).unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_shapes() {
        assert!(matches!(ExperimentConfig::parse(&format!("{BASIC}\nbogus = 1\n")), Err(CliError::Config(_))));
        assert!(matches!(ExperimentConfig::parse(&BASIC.replace("dim = 2", "dim = 7")), Err(CliError::Config(_))));
        assert!(matrix(&[vec![1.0]], 2, "V").is_err());
        assert!(vector(&Some(vec![1.0]), 2, "v").is_err());
    }

    #[test]
    fn generator_requires_parameters() {
        let g = GeneratorConfig {
            kind: GeneratorKind::PerturbedPower,
            q: Some(1.0),
            eps: None,
            table_path: None,
            exponents: None,
            scale: None,
        };
        assert!(matches!(g.build(Path::new(".")), Err(CliError::Config(_))));
    }
}
