mod common;

use common::{random_velocity, rng, triangle};
use polyshape::fem::*;
use polyshape::geometry::*;
use polyshape::maps::BoundaryBasis;
use polyshape::mesh::*;
use polyshape::verify::*;

const STEPS: [f64; 3] = [4e-3, 2e-3, 1e-3];

fn setup(k: f64, h: f64) -> StudySetup {
    StudySetup::new(
        DomainSpec::unit_square(),
        triangle(),
        ConductivitySpec::new(k).unwrap(),
        BoundaryData::trig(BoundaryKind::Dirichlet, 1, TrigPhase::Cos),
        BoundaryData::trig(BoundaryKind::Dirichlet, 1, TrigPhase::Sin),
        GradingSpec::new(h),
    )
}

fn outward_velocity() -> VelocityField {
    let c = triangle().centroid();
    VelocityField::new(triangle().vertices().iter().map(|&p| (p - c) * 0.5 + Vec2::new(0.1, -0.05)).collect()).unwrap()
}

#[test]
fn power_law_fit_recovers_exponent_and_prefactor() {
    let samples: Vec<(f64, f64)> = geometric_t_list(0.1, 1e-3, 7).into_iter().map(|t| (t, 0.4 * t.powf(1.3))).collect();
    let fit = fit_power_law(&samples).unwrap();
    assert!((fit.slope - 1.3).abs() <= 1e-6);
    assert!((fit.intercept - 0.4f64.ln()).abs() <= 1e-6);
    assert!(fit.residual <= 1e-10);
    assert!(fit_power_law(&samples[..1]).is_err());
}

#[test]
fn symmetric_difference_is_first_order() {
    let mut r = rng(3);
    for _ in 0..5 {
        let v = random_velocity(3, &mut r);
        let fit = symmetric_difference_study(&triangle(), &v, &geometric_t_list(0.05, 1e-4, 8)).unwrap();
        assert!((fit.slope - 1.0).abs() <= 0.05, "slope {}", fit.slope);
    }
}

#[test]
fn every_rate_study_is_degenerate_at_unit_contrast() {
    let s = setup(1.0, 0.2);
    let mut sn = setup(1.0, 0.2);
    sn.f = BoundaryData::trig(BoundaryKind::Neumann, 1, TrigPhase::Cos);
    sn.g = BoundaryData::trig(BoundaryKind::Neumann, 1, TrigPhase::Sin);
    let v = outward_velocity();
    let t = default_t_list();
    for study in [
        derivative_rate_study(&s, &v, &t).unwrap(),
        energy_rate_study(&s, &v, &t).unwrap(),
        boundary_rate_study(&sn, &v, &t).unwrap(),
    ] {
        assert!(matches!(study.status, RateStatus::Degenerate(_)), "{}", study.name);
        assert_eq!(study.n_used(), 0);
        assert!(study.slope().is_none());
    }
}

#[test]
fn operator_derivative_is_symmetric_and_vanishes_at_unit_contrast() {
    let basis = BoundaryBasis::trig(3, false, false);
    let v = outward_velocity();
    let s = setup(3.0, 0.06);
    let m = s.reference_mesh().unwrap();
    let l = operator_derivative(&m, &s, &basis, &v).unwrap();
    assert!(l.matrix.max_abs() > 0.0);
    assert!(l.asymmetry() <= 1e-12);
    let s1 = setup(1.0, 0.06);
    let l1 = operator_derivative(&m, &s1, &basis, &v).unwrap();
    assert_eq!(l1.matrix.max_abs(), 0.0);
}

#[test]
fn volume_increment_identity_holds_and_degenerates_correctly() {
    let mut s = setup(3.0, 0.05);
    s.cg.rtol = 1e-12;
    let same = alessandrini_check(&s, &triangle()).unwrap();
    assert_eq!(same.increment, 0.0);
    assert!(same.pairing_difference.abs() <= 1e-12);
    let pt = perturb(&triangle(), &outward_velocity(), 0.05).unwrap();
    let moved = alessandrini_check(&s, &pt).unwrap();
    assert!(moved.increment.abs() > 0.0);
    assert!(moved.relative_error() <= 1e-6, "{moved:?}");
    let mut s1 = setup(1.0, 0.05);
    s1.cg.rtol = 1e-12;
    let unit = alessandrini_check(&s1, &pt).unwrap();
    assert_eq!(unit.increment, 0.0);
    assert!(unit.pairing_difference.abs() <= 1e-10);
}

#[test]
fn formula_converges_to_finite_differences() {
    let coarse = derivative_check(&setup(2.0, 0.04), &outward_velocity(), STEPS).unwrap();
    let fine = derivative_check(&setup(2.0, 0.02), &outward_velocity(), STEPS).unwrap();
    assert!(fine.relative_error() <= 0.025, "formula {:e} fd {:e}", fine.formula, fine.fd.extrapolated);
    assert!(fine.relative_error() <= 0.5 * coarse.relative_error());
}

#[test]
fn neumann_derivative_is_minus_the_dirichlet_one_on_matched_data() {
    let c = neumann_consistency(&setup(2.0, 0.02), &outward_velocity(), STEPS).unwrap();
    assert!((c.neumann + c.dirichlet).abs() <= 1e-6 * c.dirichlet.abs(), "{c:?}");
    let fd = c.neumann_fd.extrapolated;
    assert!((c.neumann - fd).abs() <= 0.025 * fd.abs(), "{c:?}");
}

#[test]
fn singularity_fit_reports_the_resolution_shortfall() {
    let s = setup(5.0, 0.2);
    let m = s.reference_mesh().unwrap();
    let u = solve_dirichlet(&m, &s.conductivity, &s.f, &s.cg).unwrap();
    let radii = default_annuli(&triangle(), 0);
    assert!(matches!(singularity_study(&u, 0, &radii), Err(VerifyError::Resolution { .. })));
}
