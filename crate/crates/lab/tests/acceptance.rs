//! Acceptance criteria. Each test writes one `criterion N: PASS|FAIL` line straight to
//! stdout (outside the test harness capture) and then asserts.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_8, PI};
use std::io::Write;
use std::time::{Duration, Instant};

use slag_core::geometry::hessian_field;
use slag_core::lewy::{
    degenerate_projection_volume, reconstruct_hat_potential, RadialTransportSolution,
};
use slag_core::perturb::perturbation_family;
use slag_core::solvers::{solve_family, BoundaryData, SolverConfig};
use slag_core::{GridDomain, VectorFieldGrid};
use slag_lab::scenarios::{
    run_counterexample_annulus, run_example_sec6, run_maximality_test, run_property_sweeps,
    run_solve, Expectation, Guess, MaximalityParams, PlanarBox, Potential, Sec6Params, SolveParams,
};
use slag_lab::{ExperimentReport, SolveKind, Suite};

fn verdict(n: usize, ok: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let timely = elapsed <= limit;
    let line = format!(
        "criterion {n}: {} ({detail}; {:.2} s of {} s)\n",
        if ok && timely { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(ok, "{}", line.trim());
    assert!(timely, "{}", line.trim());
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn failures(r: &ExperimentReport) -> Vec<String> {
    r.failed_checks()
        .map(|c| format!("{}={:e}", c.name, c.value))
        .collect()
}

fn sweep(n: usize, suite: Suite, trials: usize, limit: u64) {
    let start = Instant::now();
    let r = run_property_sweeps(suite, trials, 20_261_016, 6).unwrap();
    let detail = format!(
        "{} trials, {} failures, extreme value {:e}",
        trials,
        r.quantities["failures"],
        r.quantities["largest_value"].as_f64().unwrap_or(f64::NAN)
    );
    verdict(n, r.passed, start.elapsed(), secs(limit), &detail);
}

#[test]
fn criterion_01_symmetric_part_determinant() {
    sweep(1, Suite::Lemma31, 100_000, 30);
}

#[test]
fn criterion_02_calibration_inequality() {
    sweep(2, Suite::Calibration, 100_000, 30);
}

#[test]
fn criterion_03_annulus_counterexample() {
    let start = Instant::now();
    let r = run_counterexample_annulus(0.01, 0.01, 257).unwrap();
    let detail = format!(
        "Vol(Gamma) = {:.5} vs {:.5}, Vol(Sigma) = {:.5} vs {:.5}",
        r.quantities["vol_gamma"].as_f64().unwrap(),
        0.01 * PI,
        r.quantities["vol_sigma"].as_f64().unwrap(),
        2.0 * PI + 0.01 * PI
    );
    let ok = r.find("vol_gamma").unwrap().passed && r.find("vol_sigma").unwrap().passed;
    verdict(3, ok, start.elapsed(), secs(60), &detail);
}

#[test]
fn criterion_04_explicit_potential() {
    let start = Instant::now();
    let params = Sec6Params {
        t: 0.5f64.atan(),
        k: 50.0,
        domain: PlanarBox {
            x1: [0.1, 3.0],
            x2: [0.0, 2.0 * PI],
            resolution: 65,
        },
        expect: Expectation::Collision,
    };
    let r = run_example_sec6(&params).unwrap();
    let order = |k: &str| r.find(k).unwrap().value;
    let detail =
        format!(
        "orders laplacian {:.3}, eigenvalues {:.3}, mean curvature {:.3}; witness {}; failed [{}]",
        order("laplacian_order"),
        order("eigenvalues_order"),
        order("mean_curvature_order"),
        if r.find("collision_witness").unwrap().passed { "found" } else { "not found" },
        failures(&r).join(", ")
    );
    verdict(4, r.passed, start.elapsed(), secs(120), &detail);
}

fn hat_determinant_error(res: usize) -> f64 {
    let exact = RadialTransportSolution::new(FRAC_PI_8, 1.0, 0.3).unwrap();
    let m = exact.constants;
    let d = GridDomain::cube(2, 0.4, 1.2, res).unwrap();
    let bc = BoundaryData::from_fn(&d, "radial", |x| exact.value(x).unwrap()).unwrap();
    let sol = solve_family(&d, m.t, exact.rhs(), &bc, &SolverConfig::default()).unwrap();
    let hat = reconstruct_hat_potential(&sol.u, m.t).unwrap();
    let target = m.sigma_over_tau().powi(2) * exact.rhs().exp();
    hessian_field(&hat.u_hat)
        .unwrap()
        .values
        .iter()
        .map(|h| (h.determinant() - target).abs())
        .fold(0.0, f64::max)
}

#[test]
fn criterion_05_eigenvalue_transport() {
    let start = Instant::now();
    let coarse = hat_determinant_error(33);
    let fine = hat_determinant_error(65);
    let order = (coarse / fine).log2();
    let detail =
        format!("|det D^2 u_hat - (sigma/tau)^2 e^c| {coarse:.3e} -> {fine:.3e}, order {order:.3}");
    verdict(
        5,
        fine < coarse && order >= 1.5,
        start.elapsed(),
        secs(120),
        &detail,
    );
}

#[test]
fn criterion_06_arctan_identity() {
    sweep(6, Suite::CtIdentity, 10_000, 5);
}

#[test]
fn criterion_07_maximality() {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for res in [129, 257] {
        let r = run_maximality_test(&MaximalityParams::quadratic(1.0, res, 100, 7)).unwrap();
        ok &= r.passed;
        parts.push(format!(
            "{}^2: max gap {:.2e} (tol {:.1e}), calibration spread {:.1e}",
            res - 1,
            r.quantities["max_gap"].as_f64().unwrap(),
            r.quantities["gap_tolerance"].as_f64().unwrap(),
            r.quantities["calibration_spread"].as_f64().unwrap()
        ));
    }
    verdict(7, ok, start.elapsed(), secs(120), &parts.join("; "));
}

#[test]
fn criterion_08_degenerate_boundary_volume() {
    let start = Instant::now();
    let d = GridDomain::cube(2, 0.0, 1.0, 65).unwrap();
    let base = VectorFieldGrid::from_fn(d.clone(), |x| {
        vec![x[0] + 0.2 * x[1] * x[1], x[1] + 0.1 * x[0]]
    })
    .unwrap();
    let fields: Vec<VectorFieldGrid> = perturbation_family(&d, 2, 0.2..0.4, 3)
        .into_iter()
        .map(|(_, v)| base.add(&v).unwrap())
        .collect();
    let distinct = fields[0]
        .values
        .iter()
        .zip(&fields[1].values)
        .any(|(a, b)| (a - b).abs() > 1e-3);
    let one = degenerate_projection_volume(&fields[0]).unwrap();
    let two = degenerate_projection_volume(&fields[1]).unwrap();
    let max_xn = (0..d.len())
        .map(|i| d.node_coord(i)[1].abs())
        .fold(0.0, f64::max);
    let bound = 5.0 * d.h() * d.perimeter() * max_xn;
    let db = (one.boundary - two.boundary).abs();
    let dd = (one.direct - two.direct).abs();
    let detail =
        format!("boundary difference {db:.2e}, direct difference {dd:.2e} (bound {bound:.3})");
    verdict(
        8,
        distinct && db <= 1e-8 && dd <= bound,
        start.elapsed(),
        secs(60),
        &detail,
    );
}

#[test]
fn criterion_09_solver_certificates() {
    let start = Instant::now();
    let quadratic = Potential::Quadratic {
        l1: 1.5,
        l2: 0.8,
        l12: 0.2,
    };
    let square = PlanarBox::square(0.0, 1.0, 33);
    let mut cases: Vec<(String, SolveKind, f64)> = vec![
        ("poisson".into(), SolveKind::Poisson, 0.0),
        ("ma (t = 0)".into(), SolveKind::Ma, 0.0),
    ];
    for (name, t) in [
        ("pi/8", FRAC_PI_8),
        ("pi/4", FRAC_PI_4),
        ("3pi/8", 3.0 * FRAC_PI_8),
        ("pi/2", FRAC_PI_2),
    ] {
        cases.push((format!("family t = {name}"), SolveKind::Family, t));
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, kind, t) in cases {
        let p = SolveParams {
            t,
            ..SolveParams::new(quadratic.clone(), square)
        };
        let r = run_solve(kind, &p).unwrap();
        let err = r
            .quantities
            .get("sup_error")
            .and_then(|v| v.as_f64())
            .unwrap_or(f64::NAN);
        ok &= r.passed && err <= 1e-9;
        parts.push(format!("{name} {err:.1e}"));
    }
    let p = SolveParams {
        rhs: Some(1.0),
        tolerance: 1e-8,
        max_iterations: 25,
        guess: Guess::Boundary,
        ..SolveParams::new(
            Potential::Perturbed { amp: 0.05 },
            PlanarBox::square(0.0, 1.0, 65),
        )
    };
    let r = run_solve(SolveKind::Ma, &p).unwrap();
    ok &= r.passed;
    parts.push(format!(
        "perturbed ma 64^2: residual {:.1e} after {} iterations",
        r.quantities["residual"].as_f64().unwrap(),
        r.quantities["iterations"]
    ));
    verdict(9, ok, start.elapsed(), secs(180), &parts.join(", "));
}

#[test]
fn criterion_10_gradient_oracle() {
    sweep(10, Suite::Gradient, 10_000, 10);
}
