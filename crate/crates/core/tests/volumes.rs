//! Volume comparisons between a gradient graph and its boundary-fixing competitors.

use slag_core::geometry::{calibration_integral, graph_volume, null_lagrangian_integral};
use slag_core::lewy::degenerate_projection_volume;
use slag_core::perturb::{perturbation_family, random_perturbation, PerturbationKind};
use slag_core::{GridDomain, MetricSpec, VectorFieldGrid};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn identity(d: &GridDomain) -> VectorFieldGrid {
    VectorFieldGrid::from_fn(d.clone(), |x| x.to_vec()).unwrap()
}

#[test]
fn competitors_never_beat_the_calibrated_graph() {
    let d = GridDomain::cube(2, -1.0, 1.0, 65).unwrap();
    let base = identity(&d);
    let vol = graph_volume(&base, MetricSpec::DxDy).unwrap();
    let cal = calibration_integral(&base, 1.0).unwrap();
    assert!((vol - 4.0).abs() < 1e-12 && (cal - 4.0).abs() < 1e-12);
    for (kind, v) in perturbation_family(&d, 20, 0.05..0.5, 42) {
        let f = base.add(&v).unwrap();
        let gap = graph_volume(&f, MetricSpec::DxDy).unwrap() - vol;
        assert!(gap <= 1e-12, "{kind:?}: {gap}");
        assert!((calibration_integral(&f, 1.0).unwrap() - cal).abs() < 1e-12);
    }
}

#[test]
fn non_gradient_competitor_loses_volume_strictly() {
    let d = GridDomain::cube(2, -1.0, 1.0, 65).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = random_perturbation(&d, PerturbationKind::NonGradient, 0.4, &mut rng);
    let base = identity(&d);
    let f = base.add(&v).unwrap();
    let gap = graph_volume(&f, MetricSpec::DxDy).unwrap()
        - graph_volume(&base, MetricSpec::DxDy).unwrap();
    assert!(gap < -1e-4, "{gap}");
}

#[test]
fn boundary_integral_sees_only_boundary_values() {
    let d = GridDomain::cube(2, 0.0, 1.0, 65).unwrap();
    let base = VectorFieldGrid::from_fn(d.clone(), |x| {
        vec![x[0] + 0.2 * x[1] * x[1], x[1] + 0.1 * x[0]]
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let one = base
        .add(&random_perturbation(
            &d,
            PerturbationKind::NonGradient,
            0.3,
            &mut rng,
        ))
        .unwrap();
    let two = base
        .add(&random_perturbation(
            &d,
            PerturbationKind::Gradient,
            0.3,
            &mut rng,
        ))
        .unwrap();
    let (a, b) = (
        degenerate_projection_volume(&one).unwrap(),
        degenerate_projection_volume(&two).unwrap(),
    );
    assert!((a.boundary - b.boundary).abs() < 1e-12);
    let bound = 5.0 * d.h() * d.perimeter() * 1.2;
    assert!((a.direct - b.direct).abs() < bound);
    assert!((a.direct - a.boundary).abs() < bound);
}

#[test]
fn degenerate_volumes_in_three_dimensions() {
    let d = GridDomain::cube(3, 0.0, 1.0, 17).unwrap();
    let f = VectorFieldGrid::from_fn(d.clone(), |x| {
        vec![x[0] + 0.1 * x[1] * x[2], x[1] + 0.05 * x[0] * x[0], x[2]]
    })
    .unwrap();
    let v = degenerate_projection_volume(&f).unwrap();
    assert!((v.direct - v.boundary).abs() < 5.0 * d.h() * d.perimeter());
    // the null Lagrangian of P o F equals the boundary integral exactly for smooth fields
    let image = VectorFieldGrid::from_fn(d.clone(), |x| {
        let fx = [x[0] + 0.1 * x[1] * x[2], x[1] + 0.05 * x[0] * x[0], x[2]];
        (0..3).map(|k| 0.5 * (x[k] + fx[k])).collect()
    })
    .unwrap();
    assert!((null_lagrangian_integral(&image) - v.boundary).abs() < 1e-3);
}
