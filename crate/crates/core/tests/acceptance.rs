//! Acceptance suite: one check per criterion, each printed as a pass/fail
//! line. All criteria run even when an earlier one fails.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::gamma;

use common::{builtin_generators, isotropic, lx, phi_property_report, rel};
use phiexp::evolution::{initial_radial, moment_ode_evolve, pde_evolve, stability_diagnostic, FlowConfig, FlowTrajectory};
use phiexp::family::{coincidence_gap, verify_moments};
use phiexp::normalization::{f_integral, solve_constants, solve_for_det};
use phiexp::transport::{geodesic_point, mahalanobis_grid, pushforward_check, w2_distance};
use phiexp::{FamilyPoint, FamilyTag, GaussianParams, OptimalMap, PhiSpec};

/// Largest coincidence gap of `s (1+s)^0.2` over a in {0.5, 2, 4}, recorded
/// on the first run.
const PERTURBED_GAP_BASELINE: f64 = 0.0182852693549446;

/// Largest family residual of the `s^1.2` flow over t in [0, 2] at
/// `FLOW_CELLS`, recorded on the first run.
const POWER_FLOW_BASELINE: f64 = 3.5603118965337274e-5;

const FLOW_CELLS: usize = 1024;
const GAUSSIAN_FLOW_CELLS: usize = 2048;
const ODE_FLOW_CELLS: usize = 512;

struct Outcome {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: usize, title: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, title, pass, detail }
}

fn ident(d: usize) -> DMatrix<f64> {
    DMatrix::identity(d, d)
}

fn gaussian_normalization() -> Outcome {
    let g = lx(&PhiSpec::power(1.0).unwrap());
    let mut worst: f64 = 0.0;
    let mut slowest = Duration::ZERO;
    for (d, lambda) in [(2, -(2.0 * PI).ln()), (3, -1.5 * (2.0 * PI).ln())] {
        let start = Instant::now();
        let k = solve_constants(&g, d, &ident(d), FamilyTag::N).unwrap();
        slowest = slowest.max(start.elapsed());
        worst = worst.max((k.lambda - lambda).abs()).max((k.c - 0.5).abs());
    }
    let pass = worst < 1e-8 && slowest < Duration::from_secs(1);
    outcome(1, "Gaussian normalization", pass, format!("max error {worst:.2e}, slowest {slowest:.2?}"))
}

fn gamma_integral() -> Outcome {
    let g = lx(&PhiSpec::power(1.0).unwrap());
    let mut worst: f64 = 0.0;
    for p in [-0.5, 0.0, 0.5, 1.0, 1.5] {
        for lambda in [-1.0, 0.0, 1.0] {
            let exact = f64::exp(lambda) * gamma(p + 1.0);
            worst = worst.max(rel(f_integral(&g, p, lambda).unwrap(), exact, 0.0));
        }
    }
    outcome(2, "f-integral vs Gamma", worst < 1e-8, format!("max relative error {worst:.2e}"))
}

fn moment_contract() -> Outcome {
    let start = Instant::now();
    let mean = DVector::from_vec(vec![1.0, -2.0]);
    let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
    let mut worst: f64 = 0.0;
    let mut all = true;
    for q in [0.8, 1.0, 1.2, 1.4] {
        let g = lx(&PhiSpec::power(q).unwrap());
        let p = FamilyPoint::new(&g, FamilyTag::N, mean.clone(), cov.clone()).unwrap();
        let r = verify_moments(&p, 1e-6).unwrap();
        all &= r.passed;
        worst = worst.max(r.mass_deviation).max(r.mean_deviation).max(r.cov_deviation);
    }
    let elapsed = start.elapsed();
    let pass = all && worst < 1e-6 && elapsed < Duration::from_secs(10);
    outcome(3, "moment contract", pass, format!("max deviation {worst:.2e}, {elapsed:.2?}"))
}

fn coincidence_dichotomy() -> Outcome {
    let a_values = [0.5, 2.0, 4.0];
    let power = PhiSpec::power(1.2).unwrap();
    let perturbed = PhiSpec::perturbed_power(1.0, 0.2).unwrap();
    let power_gap = a_values
        .iter()
        .map(|&a| coincidence_gap(&power, &power, 2, a).unwrap())
        .fold(0.0, f64::max);
    let perturbed_gap = a_values
        .iter()
        .map(|&a| coincidence_gap(&perturbed, &perturbed, 2, a).unwrap())
        .fold(0.0, f64::max);
    let regression = rel(perturbed_gap, PERTURBED_GAP_BASELINE, 0.0);
    let pass = power_gap < 1e-6 && perturbed_gap > 1e-4 && regression < 1e-6;
    outcome(
        4,
        "G/N coincidence dichotomy",
        pass,
        format!("power gap {power_gap:.2e}, perturbed gap {perturbed_gap:.6e} (baseline drift {regression:.1e})"),
    )
}

fn transport_closed_forms() -> Outcome {
    let d = 2;
    let p0 = GaussianParams::new(DVector::zeros(d), ident(d)).unwrap();
    let p4 = GaussianParams::new(DVector::zeros(d), ident(d) * 4.0).unwrap();
    let scale_err = (w2_distance(&p0, &p4).unwrap() - 2f64.sqrt()).abs();

    let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
    let v = DVector::from_vec(vec![1.0, -1.0]);
    let u = DVector::from_vec(vec![-2.0, 3.0]);
    let shifted = w2_distance(
        &GaussianParams::new(v.clone(), cov.clone()).unwrap(),
        &GaussianParams::new(u.clone(), cov).unwrap(),
    )
    .unwrap();
    let shift_err = (shifted - (&v - &u).norm()).abs();

    let g = lx(&PhiSpec::power(1.2).unwrap());
    let k = solve_for_det(&g, d, 1.0, FamilyTag::G).unwrap();
    let src = FamilyPoint::with_constants(&g, FamilyTag::G, p0.mean.clone(), p0.cov.clone(), k.clone()).unwrap();
    let dst = FamilyPoint::with_constants(&g, FamilyTag::G, p4.mean.clone(), p4.cov.clone(), k).unwrap();
    let grid = mahalanobis_grid(&p0.mean, &p0.cov, 41, 5.0).unwrap();
    let push = pushforward_check(&src, &dst, &OptimalMap::between(&p0, &p4).unwrap(), &grid).unwrap();

    let a = GaussianParams::new(v, DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.7])).unwrap();
    let b = GaussianParams::new(u, DMatrix::from_row_slice(2, 2, &[3.0, -1.0, -1.0, 2.0])).unwrap();
    let total = w2_distance(&a, &b).unwrap();
    let mut speed_err: f64 = 0.0;
    for t in [0.25, 0.5, 0.75] {
        let mid = geodesic_point(&a, &b, t).unwrap();
        speed_err = speed_err
            .max((w2_distance(&a, &mid).unwrap() - t * total).abs())
            .max((w2_distance(&mid, &b).unwrap() - (1.0 - t) * total).abs());
    }

    let pass = scale_err < 1e-12 && shift_err < 1e-12 && push < 1e-8 && speed_err < 1e-10;
    outcome(
        5,
        "transport closed forms",
        pass,
        format!("scale {scale_err:.1e}, shift {shift_err:.1e}, pushforward {push:.1e}, speed {speed_err:.1e}"),
    )
}

fn scaling_suite() -> Outcome {
    let mut worst: f64 = 0.0;
    for base in [PhiSpec::power(1.2).unwrap(), PhiSpec::perturbed_power(1.0, 0.2).unwrap()] {
        let g = lx(&base);
        for alpha in [0.5, 3.0] {
            let s = lx(&base.scaled(alpha).unwrap());
            for t in [1e-3, 0.5, 2.0, 50.0] {
                let l = g.ln(t).unwrap();
                worst = worst.max(rel(s.ln(t).unwrap(), l / alpha, 0.0));
            }
            for p in [0.0, 1.0, 2.0] {
                for lambda in [-1.5, -0.5] {
                    let scaled = f_integral(&s, p, lambda).unwrap();
                    let expected = alpha.powf(-(p + 1.0)) * f_integral(&g, p, alpha * lambda).unwrap();
                    worst = worst.max(rel(scaled, expected, 0.0));
                }
            }
            let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
            let kb = solve_constants(&g, 2, &cov, FamilyTag::N).unwrap();
            let ks = solve_constants(&s, 2, &cov, FamilyTag::N).unwrap();
            worst = worst
                .max(rel(ks.lambda, kb.lambda / alpha, 0.0))
                .max(rel(ks.c, kb.c / alpha, 0.0));
        }
    }
    outcome(6, "scaling relations", worst < 1e-8, format!("max relative error {worst:.2e}"))
}

fn flow(spec: &PhiSpec, cells: usize, outputs: &[f64]) -> (FlowTrajectory, Duration) {
    let init = initial_radial(&isotropic(spec, FamilyTag::N, 2, 4.0), cells).unwrap();
    let cfg = FlowConfig::new(spec.clone(), 2, 2.0, outputs.to_vec()).unwrap();
    let start = Instant::now();
    let traj = pde_evolve(&init, &cfg).unwrap();
    (traj, start.elapsed())
}

fn quarter_times() -> Vec<f64> {
    (1..=8).map(|k| 0.25 * k as f64).collect()
}

fn gaussian_flow() -> Outcome {
    let spec = PhiSpec::power(1.0).unwrap();
    let (traj, elapsed) = flow(&spec, GAUSSIAN_FLOW_CELLS, &[0.5, 1.0, 2.0]);
    let mut worst: f64 = 0.0;
    for (t, grid) in traj.times.iter().zip(&traj.grids).skip(1) {
        let exact = 1.0 + 3.0 * (-2.0 * t).exp();
        let cov = grid.covariance();
        for i in 0..2 {
            worst = worst.max(rel(cov[(i, i)], exact, 0.0));
        }
    }
    let drift = traj.max_mass_drift;
    let pass = worst < 0.01 && drift < 1e-8 && elapsed < Duration::from_secs(120);
    outcome(
        7,
        "Gaussian flow oracle",
        pass,
        format!("max moment error {:.3}%, mass drift {drift:.1e}, {elapsed:.1?}", 100.0 * worst),
    )
}

fn max_residual(traj: &FlowTrajectory, spec: &PhiSpec) -> f64 {
    stability_diagnostic(traj, spec, FamilyTag::N)
        .unwrap()
        .iter()
        .map(|s| s.l1_residual.unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max)
}

fn relative_cov_gap(traj: &FlowTrajectory, spec: &PhiSpec, outputs: &[f64]) -> f64 {
    let ode = moment_ode_evolve(&lx(spec), 2, &(ident(2) * 4.0), 2.0, outputs).unwrap();
    let mut worst: f64 = 0.0;
    for (grid, cov) in traj.grids.iter().zip(&ode.covariances) {
        worst = worst.max((grid.covariance() - cov).norm() / cov.norm());
    }
    worst
}

/// Criteria 8 and 9 share the `s^1.2` run.
fn family_flows() -> (Outcome, Outcome) {
    let outputs = quarter_times();
    let power = PhiSpec::power(1.2).unwrap();
    let perturbed = PhiSpec::perturbed_power(1.0, 0.2).unwrap();
    let low = PhiSpec::power(0.8).unwrap();

    let (power_traj, _) = flow(&power, FLOW_CELLS, &outputs);
    let (perturbed_traj, _) = flow(&perturbed, FLOW_CELLS, &outputs);
    let power_res = max_residual(&power_traj, &power);
    let perturbed_res = max_residual(&perturbed_traj, &perturbed);
    let regression = rel(power_res, POWER_FLOW_BASELINE, 0.0);
    let stability = outcome(
        8,
        "flow stability dichotomy",
        power_res < 5e-3 && perturbed_res > 5.0 * POWER_FLOW_BASELINE && regression < 1e-3,
        format!(
            "power residual {power_res:.3e}, perturbed {perturbed_res:.3e} = {:.1}x baseline",
            perturbed_res / POWER_FLOW_BASELINE
        ),
    );

    let (low_traj, _) = flow(&low, ODE_FLOW_CELLS, &outputs);
    let gap_high = relative_cov_gap(&power_traj, &power, &outputs);
    let gap_low = relative_cov_gap(&low_traj, &low, &outputs);
    let consistency = outcome(
        9,
        "moment ODE vs PDE",
        gap_high.max(gap_low) < 0.02,
        format!("q=0.8 {:.3}%, q=1.2 {:.3}%", 100.0 * gap_low, 100.0 * gap_high),
    );
    (stability, consistency)
}

fn phi_properties() -> Outcome {
    let mut failures = Vec::new();
    let mut count = 0;
    for spec in builtin_generators() {
        for (name, worst, limit) in phi_property_report(&spec) {
            count += 1;
            if !(worst <= limit) {
                failures.push(format!("{spec} {name} {worst:.1e}"));
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("{count} checks")
    } else {
        failures.join("; ")
    };
    outcome(10, "generator property suites", failures.is_empty(), detail)
}

#[test]
fn acceptance() {
    let mut outcomes = vec![
        gaussian_normalization(),
        gamma_integral(),
        moment_contract(),
        coincidence_dichotomy(),
        transport_closed_forms(),
        scaling_suite(),
        gaussian_flow(),
    ];
    let (eight, nine) = family_flows();
    outcomes.push(eight);
    outcomes.push(nine);
    outcomes.push(phi_properties());

    // Written past the test harness capture so the summary always shows.
    let mut report = String::from("\n");
    for o in &outcomes {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        report += &format!("criterion {:>2} {verdict}  {:<28} {}\n", o.id, o.title, o.detail);
    }
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(report.as_bytes()).unwrap();
    stdout.flush().unwrap();
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
