//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use phiexp::evolution::{
    initial_cartesian, initial_radial, moment_ode_evolve, pde_evolve, stability_diagnostic, FlowConfig,
    FlowTrajectory, StabilityPoint,
};
use phiexp::export::{self, DensitySidecar};
use phiexp::family::{coincidence_gap_lx, verify_moments};
use phiexp::normalization::{solve_constants, solve_for_det};
use phiexp::transport::{
    geodesic_point, geodesic_point_extended, mahalanobis_grid, matrix_rows, pushforward_check, GeodesicRecord,
};
use phiexp::{DeformedLogExp, FamilyPoint, FamilyTag, GaussianParams, OptimalMap, PhiSpec};

use crate::config::{
    matrix, matrix_or_identity, section, vector, ExperimentConfig, FlowSection, GeometryKind, PairConfig,
};
use crate::error::CliError;
use crate::Common;

/// Resolved inputs shared by every subcommand.
struct Ctx {
    cfg: ExperimentConfig,
    base: PathBuf,
    out: PathBuf,
    hash: String,
    expect_gap: bool,
    spec: PhiSpec,
    lx: DeformedLogExp,
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    command: &'a str,
    config_hash: &'a str,
    config: &'a ExperimentConfig,
    expect_gap: bool,
    pass: bool,
    warnings: Vec<String>,
    result: T,
}

impl Ctx {
    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn write<T: Serialize>(&self, command: &str, pass: bool, warnings: Vec<String>, result: T) -> Result<bool, CliError> {
        let manifest = Manifest {
            command,
            config_hash: &self.hash,
            config: &self.cfg,
            expect_gap: self.expect_gap,
            pass,
            warnings,
            result,
        };
        export::write_json(&self.out.join(format!("{command}.json")), &manifest)?;
        Ok(pass)
    }

    fn csv(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, common: &Common) {
    if let Some(n) = common.resolution {
        if let Some(d) = cfg.density.as_mut() {
            d.samples = Some(n);
        }
        for f in [cfg.evolve.as_mut(), cfg.stability.as_mut()].into_iter().flatten() {
            f.cells = Some(n);
        }
    }
    if let Some(tag) = common.family {
        if let Some(s) = cfg.normalize.as_mut() {
            s.family = Some(tag);
        }
        if let Some(s) = cfg.density.as_mut() {
            s.family = Some(tag);
        }
        if let Some(s) = cfg.moments.as_mut() {
            s.family = Some(tag);
        }
        for f in [cfg.evolve.as_mut(), cfg.stability.as_mut()].into_iter().flatten() {
            f.family = Some(tag);
        }
    }
}

pub fn run(name: &str, common: &Common) -> Result<bool, CliError> {
    let text = fs::read_to_string(&common.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    apply_overrides(&mut cfg, common);
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    // The output location does not change results, so it stays out of the hash.
    cfg.out = None;
    let base = common.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let spec = cfg.generator.build(&base)?;
    let lx = DeformedLogExp::new(&spec)?;
    fs::create_dir_all(&out)?;
    let ctx = Ctx {
        hash: cfg.hash(),
        cfg,
        base,
        out,
        expect_gap: common.expect_gap,
        spec,
        lx,
    };
    match name {
        "normalize" => normalize(&ctx),
        "density" => density(&ctx),
        "moments" => moments(&ctx),
        "coincidence" => coincidence(&ctx),
        "w2" => w2(&ctx),
        "geodesic" => geodesic(&ctx),
        "evolve" => evolve(&ctx),
        "stability" => stability(&ctx),
        other => Err(CliError::Config(format!("unknown command {other}"))),
    }
}

/// Acceptance level for the normalization residual `|F/target - 1|`.
const NORMALIZE_PASS: f64 = 1e-10;

fn normalize(ctx: &Ctx) -> Result<bool, CliError> {
    let d = ctx.dim();
    let (cov, family) = match &ctx.cfg.normalize {
        Some(s) => (matrix_or_identity(&s.cov, d, "normalize.V")?, s.family.unwrap_or(FamilyTag::N)),
        None => (DMatrix::identity(d, d), FamilyTag::N),
    };
    ctx.spec.check_admissible(d)?;
    let k = solve_constants(&ctx.lx, d, &cov, family)?;
    let mut warnings = Vec::new();
    if k.multiple_crossings() {
        warnings.push(format!("{} sign changes in the lambda scan; the first was taken", k.crossings));
    }
    let pass = k.residual < NORMALIZE_PASS;
    println!("lambda = {}, c = {}, residual = {:e}", k.lambda, k.c, k.residual);
    ctx.write("normalize", pass, warnings, &k)
}

fn point(ctx: &Ctx, v: &Option<Vec<f64>>, cov: &Option<Vec<Vec<f64>>>, family: Option<FamilyTag>, name: &str) -> Result<FamilyPoint, CliError> {
    let d = ctx.dim();
    let mean = vector(v, d, &format!("{name}.v"))?;
    let cov = matrix_or_identity(cov, d, &format!("{name}.V"))?;
    Ok(FamilyPoint::new(&ctx.lx, family.unwrap_or(FamilyTag::N), mean, cov)?)
}

fn density(ctx: &Ctx) -> Result<bool, CliError> {
    let s = section(&ctx.cfg.density, "density")?;
    let p = point(ctx, &s.v, &s.cov, s.family, "density")?;
    let d = ctx.dim();
    match &s.points {
        Some(points) => {
            let mut rows = Vec::with_capacity(points.len());
            for x in points {
                let mut row = x.clone();
                row.push(p.density(x)?);
                rows.push(row);
            }
            let mut header: Vec<String> = (1..=d).map(|i| format!("x_{i}")).collect();
            header.push("rho".into());
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            export::write_rows(&ctx.csv("density.csv"), &ctx.hash, &header, &rows)?;
        }
        None => {
            let reach = s
                .radius
                .unwrap_or_else(|| p.support_radius().finite().map_or(8.0, |r| (1.05 * r).min(8.0).max(r)));
            let n = s.samples.unwrap_or(401).max(2);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let r = reach * i as f64 / (n - 1) as f64;
                    vec![r, p.profile(r * r)]
                })
                .collect();
            export::write_rows(&ctx.csv("density.csv"), &ctx.hash, &["r", "rho"], &rows)?;
        }
    }
    ctx.write("density", true, Vec::new(), DensitySidecar::new(&p, &ctx.hash))
}

fn moments(ctx: &Ctx) -> Result<bool, CliError> {
    let s = section(&ctx.cfg.moments, "moments")?;
    let p = point(ctx, &s.v, &s.cov, s.family, "moments")?;
    let report = verify_moments(&p, s.tol.unwrap_or(1e-6))?;
    println!(
        "mass dev {:e}, mean dev {:e}, cov dev {:e}",
        report.mass_deviation, report.mean_deviation, report.cov_deviation
    );
    ctx.write("moments", report.passed, Vec::new(), &report)
}

#[derive(Serialize)]
struct GapRow {
    a: f64,
    gap: f64,
}

#[derive(Serialize)]
struct CoincidenceResult {
    phi: String,
    psi: String,
    gaps: Vec<GapRow>,
    max_gap: f64,
    threshold: f64,
}

fn coincidence(ctx: &Ctx) -> Result<bool, CliError> {
    let s = section(&ctx.cfg.coincidence, "coincidence")?;
    let psi_spec = match &s.psi {
        Some(g) => g.build(&ctx.base)?,
        None => ctx.spec.clone(),
    };
    let lpsi = DeformedLogExp::new(&psi_spec)?;
    let mut gaps = Vec::with_capacity(s.a.len());
    for &a in &s.a {
        let gap = coincidence_gap_lx(&ctx.lx, &lpsi, ctx.dim(), a)?;
        println!("a = {a}: gap = {gap:e}");
        gaps.push(GapRow { a, gap });
    }
    let max_gap = gaps.iter().map(|g| g.gap).fold(0.0, f64::max);
    let (threshold, pass) = if ctx.expect_gap {
        let t = s.expect_gap_threshold.unwrap_or(1e-4);
        (t, max_gap > t)
    } else {
        let t = s.threshold.unwrap_or(1e-6);
        (t, max_gap < t)
    };
    let rows: Vec<Vec<f64>> = gaps.iter().map(|g| vec![g.a, g.gap]).collect();
    export::write_rows(&ctx.csv("coincidence.csv"), &ctx.hash, &["a", "gap"], &rows)?;
    let result = CoincidenceResult {
        phi: ctx.spec.label().into(),
        psi: psi_spec.label().into(),
        gaps,
        max_gap,
        threshold,
    };
    ctx.write("coincidence", pass, Vec::new(), result)
}

fn pair(ctx: &Ctx, s: &PairConfig, name: &str) -> Result<(GaussianParams, GaussianParams), CliError> {
    let d = ctx.dim();
    let p = GaussianParams::new(vector(&s.v, d, &format!("{name}.v"))?, matrix_or_identity(&s.cov, d, &format!("{name}.V"))?)?;
    let q = GaussianParams::new(vector(&s.u, d, &format!("{name}.u"))?, matrix(&s.target_cov, d, &format!("{name}.U"))?)?;
    Ok((p, q))
}

fn w2(ctx: &Ctx) -> Result<bool, CliError> {
    let s = section(&ctx.cfg.w2, "w2")?;
    let (p, q) = pair(ctx, s, "w2")?;
    let record = GeodesicRecord::new(&p, &q, None)?;
    println!("W2 = {}", record.w2);
    ctx.write("w2", true, Vec::new(), record)
}

#[derive(Serialize)]
struct GeodesicResult {
    records: Vec<GeodesicRecord>,
    pushforward_residuals: Option<Vec<f64>>,
}

fn geodesic(ctx: &Ctx) -> Result<bool, CliError> {
    let s = section(&ctx.cfg.geodesic, "geodesic")?;
    let (p, q) = pair(ctx, s, "geodesic")?;
    let times = s.t.clone().unwrap_or_else(|| vec![0.5]);
    let extended = s.extended.unwrap_or(false);
    let mut records = Vec::with_capacity(times.len());
    let mut points = Vec::with_capacity(times.len());
    for &t in &times {
        let g = if extended { geodesic_point_extended(&p, &q, t)? } else { geodesic_point(&p, &q, t)? };
        let mut record = GeodesicRecord::new(&p, &q, None)?;
        record.t = Some(t);
        record.w_t = Some(g.mean.iter().copied().collect());
        record.cov_t = Some(matrix_rows(&g.cov));
        records.push(record);
        points.push(g);
    }
    let mut pass = true;
    let pushforward_residuals = match s.pushforward_threshold {
        None => None,
        Some(threshold) => {
            let d = ctx.dim();
            let constants = solve_for_det(&ctx.lx, d, 1.0, FamilyTag::G)?;
            let src = FamilyPoint::with_constants(&ctx.lx, FamilyTag::G, p.mean.clone(), p.cov.clone(), constants.clone())?;
            let grid = mahalanobis_grid(&p.mean, &p.cov, 41, 5.0)?;
            let mut res = Vec::with_capacity(points.len());
            for g in &points {
                let dst = FamilyPoint::with_constants(&ctx.lx, FamilyTag::G, g.mean.clone(), g.cov.clone(), constants.clone())?;
                let map = OptimalMap::between(&p, g)?;
                let r = pushforward_check(&src, &dst, &map, &grid)?;
                pass &= r < threshold;
                res.push(r);
            }
            Some(res)
        }
    };
    ctx.write("geodesic", pass, Vec::new(), GeodesicResult { records, pushforward_residuals })
}

/// Default radial cell count for flow runs.
const DEFAULT_CELLS: usize = 512;

fn run_flow(ctx: &Ctx, s: &FlowSection) -> Result<(FlowConfig, FlowTrajectory, DMatrix<f64>), CliError> {
    let d = ctx.dim();
    let cov0 = matrix(&s.cov0, d, "V0")?;
    let init_lx = match s.init.as_deref() {
        None | Some("family") => ctx.lx.clone(),
        Some("gaussian") => DeformedLogExp::new(&PhiSpec::power(1.0)?)?,
        Some(other) => return Err(CliError::Config(format!("unknown init {other:?} (family | gaussian)"))),
    };
    let p = FamilyPoint::new(&init_lx, FamilyTag::N, DVector::zeros(d), cov0.clone())?;
    let cells = s.cells.unwrap_or(DEFAULT_CELLS);
    let grid = match s.geometry.clone().unwrap_or(GeometryKind::Radial) {
        GeometryKind::Radial => initial_radial(&p, cells)?,
        GeometryKind::Cartesian => initial_cartesian(&p, cells)?,
    };
    let mut flow = FlowConfig::new(ctx.spec.clone(), d, s.t_end, s.output_times.clone())?;
    if let Some(cfl) = s.cfl {
        flow.cfl = cfl;
    }
    if let Some(on) = s.potential {
        flow.potential = on;
    }
    let traj = pde_evolve(&grid, &flow)?;
    Ok((flow, traj, cov0))
}

fn flow_warnings(traj: &FlowTrajectory) -> Vec<String> {
    let mut w = Vec::new();
    if traj.boundary_warning() {
        w.push(format!(
            "outer boundary held back a flux of {:e}; enlarge the domain",
            traj.max_boundary_flux
        ));
    }
    w
}

fn write_trajectory(ctx: &Ctx, traj: &FlowTrajectory) -> Result<(), CliError> {
    for (k, grid) in traj.grids.iter().enumerate() {
        export::write_grid(&ctx.csv(&format!("trajectory_{k:03}.csv")), grid, &ctx.hash)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvolveResult {
    potential_coefficient: f64,
    times: Vec<f64>,
    masses: Vec<f64>,
    max_mass_drift: f64,
    steps: usize,
    rejected_steps: usize,
    max_boundary_flux: f64,
    pde_covariances: Vec<Vec<Vec<f64>>>,
    ode_covariances: Option<Vec<Vec<Vec<f64>>>>,
    relative_differences: Option<Vec<f64>>,
    tolerance: f64,
}

/// Mass drift above which a run fails regardless of other thresholds.
const MASS_DRIFT_LIMIT: f64 = 1e-8;

fn evolve(ctx: &Ctx) -> Result<bool, CliError> {
    let s = section(&ctx.cfg.evolve, "evolve")?;
    let (flow, traj, cov0) = run_flow(ctx, s)?;
    write_trajectory(ctx, &traj)?;
    let pde: Vec<DMatrix<f64>> = traj.grids.iter().map(|g| g.covariance()).collect();
    let tolerance = s.ode_tolerance.unwrap_or(0.02);
    let mut pass = traj.max_mass_drift < MASS_DRIFT_LIMIT;
    let (ode_covs, diffs) = if flow.potential {
        let ode = moment_ode_evolve(&ctx.lx, ctx.dim(), &cov0, s.t_end, &s.output_times)?;
        let diffs: Vec<f64> = pde
            .iter()
            .zip(&ode.covariances)
            .map(|(a, b)| (a - b).amax() / b.amax())
            .collect();
        pass &= diffs.iter().all(|&d| d < tolerance);
        for (t, dv) in traj.times.iter().zip(&diffs) {
            println!("t = {t}: PDE vs ODE covariance {dv:e}");
        }
        (Some(ode.covariances.iter().map(matrix_rows).collect()), Some(diffs))
    } else {
        (None, None)
    };
    let result = EvolveResult {
        potential_coefficient: flow.potential_coefficient,
        times: traj.times.clone(),
        masses: traj.masses.clone(),
        max_mass_drift: traj.max_mass_drift,
        steps: traj.steps,
        rejected_steps: traj.rejected_steps,
        max_boundary_flux: traj.max_boundary_flux,
        pde_covariances: pde.iter().map(matrix_rows).collect(),
        ode_covariances: ode_covs,
        relative_differences: diffs,
        tolerance,
    };
    ctx.write("evolve", pass, flow_warnings(&traj), result)
}

#[derive(Serialize)]
struct StabilityResult {
    family: FamilyTag,
    series: Vec<StabilityPoint>,
    max_residual: f64,
    threshold: f64,
    max_mass_drift: f64,
}

fn stability(ctx: &Ctx) -> Result<bool, CliError> {
    let s = section(&ctx.cfg.stability, "stability")?;
    let family = s.family.unwrap_or(FamilyTag::N);
    let (_, traj, _) = run_flow(ctx, s)?;
    write_trajectory(ctx, &traj)?;
    let series = stability_diagnostic(&traj, &ctx.spec, family)?;
    let max_residual = series.iter().filter_map(|p| p.l1_residual).fold(0.0, f64::max);
    let (threshold, mut pass) = if ctx.expect_gap {
        let baseline = s
            .baseline
            .ok_or_else(|| CliError::Config("stability.baseline is required with --expect-gap".into()))?;
        let t = s.gap_factor.unwrap_or(5.0) * baseline;
        (t, max_residual > t)
    } else {
        let t = s.threshold.unwrap_or(5e-3);
        (t, max_residual < t)
    };
    pass &= traj.max_mass_drift < MASS_DRIFT_LIMIT;
    let d = ctx.dim();
    let rows: Vec<Vec<f64>> = series
        .iter()
        .map(|p| {
            let mut row = vec![p.t, p.l1_residual.unwrap_or(f64::NAN)];
            match &p.fitted_cov {
                Some(c) => row.extend((0..d).map(|i| c[(i, i)])),
                None => row.extend(std::iter::repeat(f64::NAN).take(d)),
            }
            row
        })
        .collect();
    let mut header = vec!["t".to_string(), "l1_residual".to_string()];
    header.extend((1..=d).map(|i| format!("V_{i}{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    export::write_rows(&ctx.csv("stability.csv"), &ctx.hash, &header, &rows)?;
    for p in &series {
        match p.l1_residual {
            Some(r) => println!("t = {}: residual {r:e}", p.t),
            None => println!("t = {}: no fit ({})", p.t, p.note.as_deref().unwrap_or("")),
        }
    }
    let result = StabilityResult {
        family,
        series,
        max_residual,
        threshold,
        max_mass_drift: traj.max_mass_drift,
    };
    ctx.write("stability", pass, flow_warnings(&traj), result)
}
