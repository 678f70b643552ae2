mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use common::triangle;
use polyshape::fem::*;
use polyshape::geometry::*;
use polyshape::linalg::CgSettings;
use polyshape::mesh::*;

fn cg() -> CgSettings {
    CgSettings::default()
}

fn square_mesh(poly: Option<&Polygon>, h: f64) -> Arc<Mesh> {
    let polys: Vec<Polygon> = poly.into_iter().cloned().collect();
    Arc::new(generate_mesh(&DomainSpec::unit_square(), &polys, &GradingSpec::new(h)).unwrap())
}

fn regular_polygon(n: usize, radius: f64) -> Polygon {
    Polygon::new((0..n).map(|i| Vec2::new(radius, 0.0).rotated(2.0 * PI * i as f64 / n as f64)).collect()).unwrap()
}

fn affine(kind: BoundaryKind, gx: f64, gy: f64, c: f64) -> BoundaryData {
    BoundaryData {
        kind,
        mode: BoundaryMode::Affine {
            gradient: Vec2::new(gx, gy),
            offset: c,
        },
    }
}

fn dense(a: &polyshape::linalg::CsrMatrix, n: usize) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        for (j, v) in a.row(i) {
            row[j] += v;
        }
    }
    d
}

/// Relative L2 error against `exact` with the three-point edge-midpoint rule.
fn relative_l2_error(u: &Field, exact: impl Fn(Vec2) -> f64) -> f64 {
    let m = u.mesh();
    let (mut num, mut den) = (0.0, 0.0);
    for (t, tri) in m.triangles().iter().enumerate() {
        let area = m.geometry()[t].area;
        for i in 0..3 {
            let (a, b) = (tri[i], tri[(i + 1) % 3]);
            let x = (m.nodes()[a] + m.nodes()[b]) * 0.5;
            let uh = 0.5 * (u.values()[a] + u.values()[b]);
            let e = exact(x);
            num += area / 3.0 * (uh - e).powi(2);
            den += area / 3.0 * e * e;
        }
    }
    (num / den).sqrt()
}

/// Two-region closed form for `f = x` on the unit disk with a concentric
/// inclusion of radius `rho`: `u = A r cos` inside, `(B r + C / r) cos`
/// outside, from continuity of `u` and of `sigma du/dr` at `rho`.
fn disk_solution(k: f64, rho: f64) -> impl Fn(Vec2) -> f64 {
    let a = 2.0 / ((1.0 + k) + (1.0 - k) * rho * rho);
    let b = (1.0 + k) * a / 2.0;
    let c = 1.0 - b;
    move |x: Vec2| {
        let r = x.norm();
        if r <= rho {
            a * x.x
        } else {
            (b + c / (r * r)) * x.x
        }
    }
}

#[test]
fn right_triangle_stiffness_matches_the_cotangent_formula() {
    // Fan of three triangles around the arc-length origin (1, 0).
    let nodes = vec![
        Vec2::new(1.0, 0.0),
        Vec2::new(1.0, 1.0),
        Vec2::new(-1.0, 1.0),
        Vec2::new(-1.0, -1.0),
        Vec2::new(1.0, -1.0),
    ];
    let tris = vec![[0, 1, 2], [0, 2, 3], [0, 3, 4]];
    let m = Mesh::build(DomainSpec::unit_square(), nodes, tris, None).unwrap();
    let a = dense(&assemble(&m, &ConductivitySpec::new(1.0).unwrap()).matrix, 5);
    // Off-diagonal entry: minus half the sum of cotangents of the opposite angles.
    let cot = |p: Vec2, q: Vec2, r: Vec2| {
        let (u, v) = (q - p, r - p);
        u.dot(v) / (u.x * v.y - u.y * v.x).abs()
    };
    let n = m.nodes();
    let expected = |i: usize, j: usize, opposite: &[usize]| -> f64 {
        -0.5 * opposite.iter().map(|&o| cot(n[o], n[i], n[j])).sum::<f64>()
    };
    let checks = [
        (0, 1, vec![2]),
        (0, 2, vec![1, 3]),
        (0, 3, vec![2, 4]),
        (0, 4, vec![3]),
        (1, 2, vec![0]),
        (2, 3, vec![0]),
        (3, 4, vec![0]),
    ];
    for (i, j, opp) in checks {
        let e = expected(i, j, &opp);
        assert!((a[i][j] - e).abs() < 1e-14, "({i},{j}) {} vs {e}", a[i][j]);
        assert_eq!(a[i][j], a[j][i]);
    }
    assert_eq!(a[1][3], 0.0);
    // Angle at (1, 0) between (0, 1) and (-2, 1) has cotangent 1/2.
    assert!((a[1][2] + 0.25).abs() < 1e-15);
    for row in &a {
        assert!(row.iter().sum::<f64>().abs() < 1e-14);
    }
}

#[test]
fn stiffness_annihilates_constants_and_is_affine_in_k() {
    let m = square_mesh(Some(&triangle()), 0.2);
    let a = |k: f64| assemble(&m, &ConductivitySpec::new(k).unwrap()).matrix;
    let ones = vec![1.0; m.n_nodes()];
    assert!(a(3.0).mul_vec(&ones).iter().all(|r| r.abs() < 1e-12));
    let n = m.n_nodes();
    let (a1, a2, a4) = (dense(&a(1.0), n), dense(&a(2.0), n), dense(&a(4.0), n));
    for i in 0..n {
        for j in 0..n {
            assert!(((a4[i][j] - a2[i][j]) - 2.0 * (a2[i][j] - a1[i][j])).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_and_linear_dirichlet_data_are_reproduced() {
    let m = square_mesh(Some(&triangle()), 0.1);
    let u = solve_dirichlet(&m, &ConductivitySpec::new(3.0).unwrap(), &affine(BoundaryKind::Dirichlet, 0.0, 0.0, 0.7), &cg()).unwrap();
    assert!(u.values().iter().all(|v| (v - 0.7).abs() < 1e-8));
    let u = solve_dirichlet(&m, &ConductivitySpec::new(1.0).unwrap(), &affine(BoundaryKind::Dirichlet, 1.0, 0.0, 0.0), &cg()).unwrap();
    for (x, v) in m.nodes().iter().zip(u.values()) {
        assert!((v - x.x).abs() < 1e-8);
    }
}

#[test]
fn concentric_disk_error_drops_with_h() {
    let k = 2.0;
    let poly = regular_polygon(64, 0.5);
    let exact = disk_solution(k, 0.5);
    let err = |h: f64| {
        let m = Arc::new(generate_mesh(&DomainSpec::disk(256), std::slice::from_ref(&poly), &GradingSpec::uniform(h)).unwrap());
        let u = solve_dirichlet(&m, &ConductivitySpec::new(k).unwrap(), &affine(BoundaryKind::Dirichlet, 1.0, 0.0, 0.0), &cg()).unwrap();
        relative_l2_error(&u, &exact)
    };
    let (coarse, fine) = (err(0.1), err(0.05));
    assert!(coarse / fine >= 3.0, "errors {coarse:e} -> {fine:e}");
}

#[test]
fn neumann_cosine_on_the_disk_gives_the_linear_field() {
    let m = Arc::new(generate_mesh(&DomainSpec::disk(256), &[], &GradingSpec::uniform(0.02)).unwrap());
    let u = solve_neumann(&m, &ConductivitySpec::new(1.0).unwrap(), &BoundaryData::trig(BoundaryKind::Neumann, 1, TrigPhase::Cos), &cg()).unwrap();
    let err = relative_l2_error(&u, |x| x.x);
    assert!(err <= 0.01, "relative error {err}");
}

#[test]
fn solutions_satisfy_galerkin_orthogonality_reciprocity_and_energy() {
    let m = square_mesh(Some(&triangle()), 0.08);
    let c = ConductivitySpec::new(4.0).unwrap();
    let f = BoundaryData::trig(BoundaryKind::Dirichlet, 1, TrigPhase::Cos);
    let g = BoundaryData::trig(BoundaryKind::Dirichlet, 2, TrigPhase::Sin);
    let (uf, ug) = (solve_dirichlet(&m, &c, &f, &cg()).unwrap(), solve_dirichlet(&m, &c, &g, &cg()).unwrap());
    let r = residual_load(&uf);
    let scale = r.iter().map(|x| x.abs()).fold(0.0, f64::max);
    for v in 0..m.n_nodes() {
        if m.boundary_slot(v).is_none() {
            assert!(r[v].abs() <= 1e-8 * scale);
        }
    }
    let (fv, gv) = (f.values_on(&m).unwrap(), g.values_on(&m).unwrap());
    let (a, b) = (boundary_pairing(&uf, &gv).unwrap(), boundary_pairing(&ug, &fv).unwrap());
    let e = energy(&uf);
    assert!((a - b).abs() <= 1e-8 * (e * energy(&ug)).sqrt(), "{a:e} vs {b:e}");
    let p = boundary_pairing(&uf, &fv).unwrap();
    assert!((e - p).abs() <= 1e-9 * e);
    let ones = vec![1.0; fv.len()];
    assert!(boundary_pairing(&uf, &ones).unwrap().abs() <= 1e-9 * e);
}

#[test]
fn disk_pairings_match_the_steklov_spectrum() {
    let m = Arc::new(generate_mesh(&DomainSpec::disk(256), &[], &GradingSpec::uniform(0.02)).unwrap());
    let c = ConductivitySpec::new(1.0).unwrap();
    for n in 1..=4 {
        let f = BoundaryData::trig(BoundaryKind::Dirichlet, n, TrigPhase::Cos);
        let u = solve_dirichlet(&m, &c, &f, &cg()).unwrap();
        let p = boundary_pairing(&u, &f.values_on(&m).unwrap()).unwrap();
        let expected = n as f64 * PI;
        assert!((p - expected).abs() <= 0.02 * expected, "n = {n}: {p}");
    }
}

#[test]
fn traces_of_a_linear_field_are_exact() {
    let poly = triangle();
    let m = square_mesh(Some(&poly), 0.1);
    let c = ConductivitySpec::new(1.0).unwrap();
    let u = solve_dirichlet(&m, &c, &affine(BoundaryKind::Dirichlet, 1.0, 0.0, 0.0), &cg()).unwrap();
    let ring = interface_ring(&m).unwrap();
    for side in [Side::Interior, Side::Exterior] {
        for g in gradient_trace(&u, &ring, side) {
            assert!((g - Vec2::new(1.0, 0.0)).norm() < 1e-8);
        }
    }
    let corners: Vec<Vec2> = poly.vertices().to_vec();
    let rec = recovered_exterior_trace(&u, &ring).unwrap();
    for (e, g) in ring.edges.iter().zip(&rec) {
        let tangent = poly.edge_frame(e.poly_edge).unwrap().tangent;
        assert!((g.dot(tangent) - tangent.x).abs() < 1e-8);
        // At a corner node the lumped flux mixes both edge normals.
        if !corners.contains(&e.start) && !corners.contains(&e.end) {
            assert!((*g - Vec2::new(1.0, 0.0)).norm() < 1e-7, "{g:?}");
        }
    }
}

/// Length-weighted mean over the ring of `|a - b|`.
fn ring_mean(ring: &InterfaceRing, a: &[f64], b: &[f64]) -> f64 {
    let total = ring.total_length();
    ring.edges.iter().zip(a.iter().zip(b)).map(|(e, (x, y))| e.length() * (x - y).abs()).sum::<f64>() / total
}

#[test]
fn transmission_conditions_converge_at_first_order() {
    let poly = triangle();
    let k = 3.0;
    let mismatch = |h: f64| {
        let m = Arc::new(generate_mesh(&DomainSpec::unit_square(), std::slice::from_ref(&poly), &GradingSpec::uniform(h)).unwrap());
        let u = solve_dirichlet(&m, &ConductivitySpec::new(k).unwrap(), &BoundaryData::trig(BoundaryKind::Dirichlet, 1, TrigPhase::Cos), &cg()).unwrap();
        let ring = interface_ring(&m).unwrap();
        let (gi, ge) = (gradient_trace(&u, &ring, Side::Interior), gradient_trace(&u, &ring, Side::Exterior));
        let frames: Vec<EdgeFrame> = ring.edges.iter().map(|e| poly.edge_frame(e.poly_edge).unwrap()).collect();
        let tan = |g: &[Vec2]| -> Vec<f64> { g.iter().zip(&frames).map(|(g, f)| g.dot(f.tangent)).collect() };
        let nor = |g: &[Vec2], s: f64| -> Vec<f64> { g.iter().zip(&frames).map(|(g, f)| s * g.dot(f.normal)).collect() };
        (
            ring_mean(&ring, &tan(&gi), &tan(&ge)),
            ring_mean(&ring, &nor(&gi, k), &nor(&ge, 1.0)),
        )
    };
    let (t1, n1) = mismatch(0.08);
    let (t2, n2) = mismatch(0.04);
    // Tangential traces agree exactly: both elements share the edge.
    assert!(t1 < 1e-8 && t2 < 1e-8);
    let ratio = n1 / n2;
    assert!((1.5..=3.0).contains(&ratio), "flux mismatch {n1:e} -> {n2:e}");
}

#[test]
fn seminorm_and_boundary_differences() {
    let m = square_mesh(None, 0.2);
    let tag = FieldTag {
        kind: BoundaryKind::Dirichlet,
        conductivity: ConductivitySpec::new(1.0).unwrap(),
    };
    let u = Field::interpolate(Arc::clone(&m), tag, |x| x.x);
    let v = Field::interpolate(Arc::clone(&m), tag, |x| 2.0 * x.x);
    assert_eq!(h1_seminorm_diff(&u, &u).unwrap(), 0.0);
    assert!((h1_seminorm_diff(&u, &v).unwrap() - 2.0).abs() < 1e-12);
    let w = Field::interpolate(Arc::clone(&m), tag, |x| x.x + 1.0);
    assert!((boundary_l2_diff(&u, &w).unwrap() - 8f64.sqrt()).abs() < 1e-12);
    assert_eq!(boundary_l2_diff(&u, &u).unwrap(), 0.0);
}

#[test]
fn cross_mesh_seminorm_of_one_field_halves_with_h() {
    let f = |x: Vec2| (1.3 * x.x).sin() * (0.7 * x.y).cosh();
    let tag = FieldTag {
        kind: BoundaryKind::Dirichlet,
        conductivity: ConductivitySpec::new(1.0).unwrap(),
    };
    let d = |h: f64| {
        let a = Arc::new(generate_mesh(&DomainSpec::unit_square(), &[], &GradingSpec::uniform(h)).unwrap());
        let b = Arc::new(generate_mesh(&DomainSpec::unit_square(), &[triangle()], &GradingSpec::uniform(h)).unwrap());
        h1_seminorm_diff(&Field::interpolate(a, tag, f), &Field::interpolate(b, tag, f)).unwrap()
    };
    let ratio = d(0.1) / d(0.05);
    assert!((1.5..=3.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn boundary_difference_matches_dense_sampling() {
    let tag = FieldTag {
        kind: BoundaryKind::Dirichlet,
        conductivity: ConductivitySpec::new(1.0).unwrap(),
    };
    let a = Arc::new(generate_mesh(&DomainSpec::unit_square(), &[], &GradingSpec::uniform(0.1)).unwrap());
    let b = Arc::new(generate_mesh(&DomainSpec::unit_square(), &[triangle()], &GradingSpec::uniform(0.13)).unwrap());
    let u = Field::interpolate(a, tag, |x| (2.0 * x.x).sin() + x.y * x.y);
    let v = Field::interpolate(b, tag, |x| x.x * x.y);
    let exact = boundary_l2_diff(&u, &v).unwrap();
    let (su, sv) = (u.boundary_samples(), v.boundary_samples());
    let n = 10_000;
    let per = su.perimeter();
    let sum: f64 = (0..n)
        .map(|i| {
            let s = (i as f64 + 0.5) * per / n as f64;
            (su.eval(s) - sv.eval(s)).powi(2)
        })
        .sum();
    let sampled = (sum * per / n as f64).sqrt();
    assert!((exact - sampled).abs() <= 1e-3 * exact, "{exact} vs {sampled}");
}
