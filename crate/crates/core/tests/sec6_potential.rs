//! The potential `u = -(a/2)|x|^2 + k e^{x1} cos x2`, whose Hessian eigenvalues are
//! `-a -+ k e^{x1}`, run through the geometry, rotation and projection code.

use slag_core::equation::eigenvalue_transform;
use slag_core::geometry::{hessian_eigenvalue_field, mean_curvature_residual, operator_field};
use slag_core::lewy::{
    apply_phi_t, injectivity_check, projection_p, InjectivityCertificate, InjectivityVerdict,
};
use slag_core::solvers::{poisson_residual, solve_poisson, BoundaryData};
use slag_core::{GridDomain, MetricConstants, ScalarFieldGrid};

fn angle() -> f64 {
    0.5f64.atan()
}

fn potential(a: f64, k: f64) -> impl Fn(&[f64]) -> f64 + Copy {
    move |x| -0.5 * a * (x[0] * x[0] + x[1] * x[1]) + k * x[0].exp() * x[1].cos()
}

fn orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn box_domain(x1: [f64; 2], x2: [f64; 2], res: usize) -> GridDomain {
    GridDomain::new(vec![x1, x2], vec![res, res]).unwrap()
}

#[test]
fn constants_at_the_example_angle() {
    let m = MetricConstants::new(angle()).unwrap();
    assert!((m.a - 2.0).abs() < 1e-12);
    assert!((m.b - 3f64.sqrt()).abs() < 1e-12);
    assert!((m.sigma - m.tau * m.a - m.tau * m.b).abs() < 1e-12);
}

#[test]
fn discrete_laplacian_converges_at_second_order() {
    let a = 2.0;
    let errors: Vec<f64> = [17, 33, 65, 129]
        .iter()
        .map(|&r| {
            let u =
                ScalarFieldGrid::from_fn(box_domain([0.1, 1.0], [0.0, 1.0], r), potential(a, 3.0))
                    .unwrap();
            poisson_residual(&u, a)
        })
        .collect();
    for p in orders(&errors) {
        assert!(p >= 1.9, "{errors:?}");
    }
}

#[test]
fn hessian_eigenvalues_converge() {
    let (a, k) = (2.0, 3.0);
    let errors: Vec<f64> = [17, 33, 65]
        .iter()
        .map(|&r| {
            let u =
                ScalarFieldGrid::from_fn(box_domain([0.1, 1.0], [0.0, 1.0], r), potential(a, k))
                    .unwrap();
            let field = hessian_eigenvalue_field(&u).unwrap();
            field
                .node_indices()
                .iter()
                .zip(&field.values)
                .map(|(m, l)| {
                    let e = k * u.domain.coord(m)[0].exp();
                    (l[0] - (-a - e)).abs().max((l[1] - (-a + e)).abs())
                })
                .fold(0.0, f64::max)
        })
        .collect();
    for p in orders(&errors) {
        assert!(p >= 1.9, "{errors:?}");
    }
}

#[test]
fn operator_vanishes_and_graph_is_extremal() {
    let t = angle();
    let m = MetricConstants::new(t).unwrap();
    let k = 1.5 * m.b;
    let mut curvature = Vec::new();
    for r in [33, 65, 129] {
        let u = ScalarFieldGrid::from_fn(box_domain([0.1, 0.6], [0.0, 0.5], r), potential(m.a, k))
            .unwrap();
        assert!(operator_field(&u, t).unwrap().max_abs() < 1e-2);
        curvature.push(mean_curvature_residual(&u, t).unwrap().max_abs());
    }
    for p in orders(&curvature) {
        assert!(p >= 1.9, "{curvature:?}");
    }
}

#[test]
fn rotated_tangents_carry_transformed_eigenvalues() {
    let t = angle();
    let m = MetricConstants::new(t).unwrap();
    let k = 2.0 * m.b;
    let errors: Vec<f64> = [17, 33]
        .iter()
        .map(|&r| {
            let u =
                ScalarFieldGrid::from_fn(box_domain([0.1, 0.6], [0.0, 0.5], r), potential(m.a, k))
                    .unwrap();
            let g = apply_phi_t(&u, t).unwrap();
            let nodes = slag_core::grid::interior_indices(&u.domain, 1);
            nodes
                .iter()
                .zip(&g.tangents)
                .map(|(node, q)| {
                    let q = q.as_ref().unwrap();
                    let mut got: Vec<f64> = ((q + q.transpose()) * 0.5)
                        .symmetric_eigenvalues()
                        .iter()
                        .copied()
                        .collect();
                    got.sort_by(f64::total_cmp);
                    let e = k * u.domain.coord(node)[0].exp();
                    let mut want = [
                        eigenvalue_transform(-m.a - e, &m).unwrap(),
                        eigenvalue_transform(-m.a + e, &m).unwrap(),
                    ];
                    want.sort_by(f64::total_cmp);
                    (got[0] - want[0]).abs().max((got[1] - want[1]).abs())
                })
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(errors[1] < 1e-3);
    assert!(orders(&errors)[0] >= 1.8, "{errors:?}");
}

#[test]
fn large_k_makes_dp_indefinite() {
    let t = angle();
    let m = MetricConstants::new(t).unwrap();
    let u = ScalarFieldGrid::from_fn(box_domain([0.1, 3.0], [0.0, 6.0], 41), potential(m.a, 50.0))
        .unwrap();
    let r = projection_p(&u, t).unwrap();
    assert!(r.min_sym_eigenvalue < 0.0);
    assert!(!r.uniformly_positive);
}

#[test]
fn strip_longer_than_a_period_folds_the_projection() {
    let t = angle();
    let m = MetricConstants::new(t).unwrap();
    let d = GridDomain::new(
        vec![[0.1, 3.0], [0.0, 2.5 * std::f64::consts::PI]],
        vec![129, 129],
    )
    .unwrap();
    let u = ScalarFieldGrid::from_fn(d, potential(m.a, 50.0)).unwrap();
    let r = projection_p(&u, t).unwrap();
    match injectivity_check(&r.p) {
        InjectivityVerdict::Collision {
            x1,
            x2,
            source_separation,
            ..
        } => {
            assert!(source_separation > 0.1);
            assert!(x1.iter().chain(&x2).all(|v| v.is_finite()));
        }
        v => panic!("expected a collision, got {v:?}"),
    }
}

#[test]
fn one_period_strip_has_no_collision() {
    let t = angle();
    let m = MetricConstants::new(t).unwrap();
    let d = GridDomain::new(
        vec![[0.1, 3.0], [0.0, 2.0 * std::f64::consts::PI]],
        vec![129, 129],
    )
    .unwrap();
    let u = ScalarFieldGrid::from_fn(d, potential(m.a, 50.0)).unwrap();
    let r = projection_p(&u, t).unwrap();
    assert!(injectivity_check(&r.p).is_injective());
}

#[test]
fn small_k_on_a_small_square_is_injective_without_a_certificate() {
    let t = angle();
    let m = MetricConstants::new(t).unwrap();
    let u = ScalarFieldGrid::from_fn(
        box_domain([0.1, 0.5], [0.1, 0.5], 65),
        potential(m.a, 1.2 * m.b),
    )
    .unwrap();
    let r = projection_p(&u, t).unwrap();
    assert!(!r.uniformly_positive);
    match injectivity_check(&r.p) {
        InjectivityVerdict::Injective {
            certificate: InjectivityCertificate::NoCollisionFound { .. },
        } => {}
        v => panic!("unexpected verdict {v:?}"),
    }
}

#[test]
fn poisson_solve_converges_to_the_potential() {
    let (a, k) = (2.0, 3.0);
    let f = potential(a, k);
    let errors: Vec<f64> = [17, 33, 65]
        .iter()
        .map(|&r| {
            let d = box_domain([0.1, 1.0], [0.0, 1.0], r);
            let bc = BoundaryData::from_fn(&d, "potential", f).unwrap();
            let sol = solve_poisson(&d, a, &bc).unwrap();
            (0..d.len())
                .map(|i| (sol.u.values[i] - f(&d.node_coord(i))).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    for p in orders(&errors) {
        assert!(p >= 1.9, "{errors:?}");
    }
}
