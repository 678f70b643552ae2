mod common;

use common::{clipped_area, random_velocity, rng, triangle};
use polyshape::geometry::*;
use proptest::prelude::*;
use rand::Rng;

fn arb_triangle() -> impl Strategy<Value = Polygon> {
    (
        (-0.7f64..-0.1, -0.7f64..-0.1),
        (-0.2f64..0.2, 0.2f64..0.7),
        (0.1f64..0.7, -0.7f64..0.0),
    )
        .prop_map(|(a, b, c)| Polygon::new(vec![Vec2::new(a.0, a.1), Vec2::new(b.0, b.1), Vec2::new(c.0, c.1)]).unwrap())
}

fn arb_velocity(n: usize) -> impl Strategy<Value = VelocityField> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n)
        .prop_map(|v| VelocityField::new(v.into_iter().map(|(x, y)| Vec2::new(x, y)).collect()).unwrap())
}

#[test]
fn perturb_moves_only_the_driven_vertex() {
    let p = Polygon::new(vec![Vec2::new(0.0, 0.0), Vec2::new(0.0, 0.5), Vec2::new(0.5, 0.0)]).unwrap();
    let v = VelocityField::unit(3, 0, 0);
    let q = perturb(&p, &v, 0.1).unwrap();
    assert_eq!(q.vertex(0), Vec2::new(0.1, 0.0));
    assert_eq!(q.vertex(1), p.vertex(1));
    assert_eq!(perturb(&p, &v, 0.0).unwrap(), p);
}

#[test]
fn rigid_translation_keeps_distances() {
    let p = triangle();
    let v = VelocityField::new(vec![Vec2::new(0.3, -0.2); 3]).unwrap();
    let q = perturb(&p, &v, 0.4).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let d0 = p.vertex(i).distance(p.vertex(j));
            assert!((q.vertex(i).distance(q.vertex(j)) - d0).abs() < 1e-15);
        }
    }
}

#[test]
fn edge_frames_of_the_reference_triangle() {
    let p = Polygon::new(vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, -1.0)]).unwrap();
    let f0 = p.edge_frame(0).unwrap();
    assert_eq!((f0.tangent, f0.normal), (Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)));
    let f2 = p.edge_frame(2).unwrap();
    assert!((f2.tangent - Vec2::new(0.0, 1.0)).norm() < 1e-15);
    assert!((f2.normal - Vec2::new(-1.0, 0.0)).norm() < 1e-15);
}

#[test]
fn constraint_examples() {
    let dom = DomainSpec::unit_square();
    let params = ConstraintParams::new(std::f64::consts::PI / 6.0, 0.1, 0.1).unwrap();
    let s = 0.5;
    let eq = Polygon::new(vec![
        Vec2::new(-s / 2.0, -s * 3f64.sqrt() / 6.0),
        Vec2::new(0.0, s * 3f64.sqrt() / 3.0),
        Vec2::new(s / 2.0, -s * 3f64.sqrt() / 6.0),
    ])
    .unwrap();
    assert!(validate_constraints(&eq, &params, &dom).unwrap().is_admissible());

    let close = Polygon::new(vec![Vec2::new(0.0, 0.0), Vec2::new(0.05, 0.0), Vec2::new(0.02, -0.4)]).unwrap();
    let r = validate_constraints(&close, &params, &dom).unwrap();
    assert!(!r.check(ConstraintKind::SideLength).unwrap().passed);

    let edge = Polygon::new(vec![Vec2::new(0.98, 0.0), Vec2::new(0.5, 0.3), Vec2::new(0.5, -0.3)]).unwrap();
    let r = validate_constraints(&edge, &params, &dom).unwrap();
    assert!(!r.check(ConstraintKind::BoundaryMargin).unwrap().passed);
}

#[test]
fn interface_velocity_examples() {
    let p = triangle();
    let v = VelocityField::new(vec![Vec2::new(1.0, 0.0), Vec2::ZERO, Vec2::ZERO]).unwrap();
    assert_eq!(interface_velocity(&p, &v, 0, p.vertex(0)).unwrap(), Vec2::new(1.0, 0.0));
    let mid = p.vertex(0).lerp(p.vertex(1), 0.5);
    assert!((interface_velocity(&p, &v, 0, mid).unwrap() - Vec2::new(0.5, 0.0)).norm() < 1e-15);
    let w = VelocityField::new(vec![Vec2::new(0.2, -0.7); 3]).unwrap();
    for e in 0..3 {
        let q = p.vertex(e).lerp(p.vertex(e + 1), 0.3);
        assert!((interface_velocity(&p, &w, e, q).unwrap() - Vec2::new(0.2, -0.7)).norm() < 1e-15);
    }
}

#[test]
fn symmetric_difference_matches_monte_carlo() {
    let mut r = rng(7);
    let a = triangle();
    let v = random_velocity(3, &mut r);
    let b = perturb(&a, &v, 0.08).unwrap();
    let n = 1_000_000;
    let (lo, hi) = (Vec2::new(-0.5, -0.5), Vec2::new(0.5, 0.5));
    let mut hits = 0usize;
    for _ in 0..n {
        let p = Vec2::new(r.random_range(lo.x..hi.x), r.random_range(lo.y..hi.y));
        if a.contains(p) != b.contains(p) {
            hits += 1;
        }
    }
    let estimate = hits as f64 / n as f64 * (hi.x - lo.x) * (hi.y - lo.y);
    let exact = symmetric_difference_area(&a, &b);
    assert!((exact - estimate).abs() <= 0.01 * exact, "exact {exact}, sampled {estimate}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn perturb_then_reverse_restores_vertices(p in arb_triangle(), v in arb_velocity(3), t in 0.0f64..0.05) {
        let back = perturb(&perturb(&p, &v, t).unwrap(), &v, -t).unwrap();
        for i in 0..3 {
            prop_assert!((back.vertex(i) - p.vertex(i)).norm() < 1e-15);
        }
    }

    #[test]
    fn interface_velocity_is_linear(p in arb_triangle(), v in arb_velocity(3), w in arb_velocity(3),
                                    a in -2.0f64..2.0, b in -2.0f64..2.0, edge in 0usize..3, s in 0.0f64..1.0) {
        let q = p.vertex(edge).lerp(p.vertex(edge + 1), s);
        let combo = VelocityField::new(v.as_slice().iter().zip(w.as_slice()).map(|(x, y)| *x * a + *y * b).collect()).unwrap();
        let lhs = interface_velocity(&p, &combo, edge, q).unwrap();
        let rhs = interface_velocity(&p, &v, edge, q).unwrap() * a + interface_velocity(&p, &w, edge, q).unwrap() * b;
        prop_assert!((lhs - rhs).norm() < 1e-13);
    }

    #[test]
    fn every_vertex_lies_behind_each_outward_normal(p in arb_triangle()) {
        for e in 0..p.len() {
            let f = p.edge_frame(e).unwrap();
            for i in 0..p.len() {
                prop_assert!(f.normal.dot(p.vertex(i) - f.start) <= 1e-14);
            }
            let mid = f.start.lerp(f.end, 0.5);
            prop_assert!(f.normal.dot(p.centroid() - mid) < 0.0);
        }
    }

    #[test]
    fn symmetric_difference_matches_independent_clipping(a in arb_triangle(), b in arb_triangle()) {
        let inter = clipped_area(a.vertices(), b.vertices());
        let expected = a.area() + b.area() - 2.0 * inter;
        prop_assert!((symmetric_difference_area(&a, &b) - expected).abs() < 1e-12);
    }
}
