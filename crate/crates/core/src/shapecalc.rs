//! Shape derivatives with respect to vertex motions of the inclusion.
//!
//! For `P^t = P + t V` the Dirichlet functional `G(t) = <Lambda_t f, g>`
//! has derivative
//!
//! ```text
//! G'(0) = (k - 1) * int_{dT} (M0 grad u_e . grad v_e) (Phi_V . n) ds
//! ```
//!
//! with exterior traces `u_e`, `v_e` of the solutions for `f` and `g`,
//! `M0 = tau tau^T + (1/k) n n^T` in the edge frame and `Phi_V` the affine
//! interpolation of the vertex velocities along each edge. The integral is
//! evaluated with one midpoint per interface mesh edge.
//!
//! For the Neumann functional `G~(t) = <g, N_t f>` and for the misfit the
//! same integral appears with the opposite sign; see [`neumann_gradient`]
//! and [`misfit_gradient`].

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::fem::{
    boundary_inner, gradient_trace, recovered_exterior_trace, solve_neumann, BoundaryData, BoundaryMode, BoundarySamples, ConductivitySpec, FemError,
    Field, Side,
};
use crate::geometry::{interface_velocity, EdgeFrame, GeometryError, Polygon, Vec2, VelocityField};
use crate::linalg::CgSettings;
use crate::mesh::{InterfaceRing, Mesh, MeshError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("{got} traces given for an interface ring of {expected} edges")]
    TraceMismatch { expected: usize, got: usize },
    #[error("ring edge {ring_edge} refers to polygon edge {poly_edge}, the polygon has {n} edges")]
    PolygonMismatch { ring_edge: usize, poly_edge: usize, n: usize },
}

pub type Result<T> = std::result::Result<T, ShapeError>;

/// `M0` at a point of an inclusion edge: eigenvalue 1 along the tangent,
/// `1/k` along the normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct M0Matrix {
    pub tangent: Vec2,
    pub normal: Vec2,
    pub k: f64,
}

impl M0Matrix {
    pub fn new(frame: &EdgeFrame, k: f64) -> Self {
        M0Matrix {
            tangent: frame.tangent,
            normal: frame.normal,
            k,
        }
    }

    pub fn apply(&self, g: Vec2) -> Vec2 {
        self.tangent * g.dot(self.tangent) + self.normal * (g.dot(self.normal) / self.k)
    }
}

/// `(g . tau) tau + (1/k)(g . n) n`.
pub fn apply_m0(grad_e: Vec2, frame: &EdgeFrame, k: f64) -> Vec2 {
    M0Matrix::new(frame, k).apply(grad_e)
}

/// Gradient traces on every ring edge.
#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceTraces {
    /// Flux-recovered exterior trace; the input to the derivative formulas.
    pub exterior: Vec<Vec2>,
    /// One-sided element gradients, kept for cross-checks.
    pub element_exterior: Vec<Vec2>,
    pub element_interior: Vec<Vec2>,
}

pub fn traces(u: &Field, ring: &InterfaceRing) -> Result<InterfaceTraces> {
    Ok(InterfaceTraces {
        exterior: recovered_exterior_trace(u, ring)?,
        element_exterior: gradient_trace(u, ring, Side::Exterior),
        element_interior: gradient_trace(u, ring, Side::Interior),
    })
}

/// Per-vertex representation of a derivative that is linear in `V`:
/// the derivative in direction `V` is `sum_i g_i . V_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeGradient(pub Vec<Vec2>);

impl ShapeGradient {
    pub fn zeros(n: usize) -> Self {
        ShapeGradient(vec![Vec2::ZERO; n])
    }

    pub fn as_slice(&self) -> &[Vec2] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn pair(&self, v: &VelocityField) -> f64 {
        self.0.iter().zip(v.as_slice()).map(|(g, w)| g.dot(*w)).sum()
    }

    /// Euclidean norm over all `2N` components.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        ShapeGradient(self.0.iter().map(|g| *g * s).collect())
    }

    pub fn add_assign(&mut self, other: &ShapeGradient) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a = *a + *b;
        }
    }

    /// CSV with header `vertex_index,gx,gy`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("vertex_index,gx,gy\n");
        for (i, g) in self.0.iter().enumerate() {
            let _ = writeln!(s, "{i},{:.16e},{:.16e}", g.x, g.y);
        }
        s
    }
}

/// One quadrature point: `weight = (k-1) |e| (M0 grad u . grad v)` at the
/// midpoint with edge parameter `s` on polygon edge `poly_edge`.
struct EdgeTerm {
    poly_edge: usize,
    midpoint: Vec2,
    s: f64,
    normal: Vec2,
    weight: f64,
}

fn check_lengths(ring: &InterfaceRing, a: &[Vec2], b: &[Vec2]) -> Result<()> {
    for t in [a, b] {
        if t.len() != ring.len() {
            return Err(ShapeError::TraceMismatch {
                expected: ring.len(),
                got: t.len(),
            });
        }
    }
    Ok(())
}

fn edge_terms(
    poly: &Polygon,
    k: f64,
    ring: &InterfaceRing,
    u: &[Vec2],
    v: &[Vec2],
    integrand: impl Fn(&EdgeFrame, Vec2, Vec2) -> f64,
) -> Result<Vec<EdgeTerm>> {
    check_lengths(ring, u, v)?;
    let frames: Vec<EdgeFrame> = (0..poly.len()).map(|i| poly.edge_frame(i)).collect::<std::result::Result<_, _>>()?;
    ring.edges
        .iter()
        .enumerate()
        .map(|(r, e)| {
            let frame = frames.get(e.poly_edge).ok_or(ShapeError::PolygonMismatch {
                ring_edge: r,
                poly_edge: e.poly_edge,
                n: poly.len(),
            })?;
            let midpoint = e.midpoint();
            Ok(EdgeTerm {
                poly_edge: e.poly_edge,
                midpoint,
                s: frame.parameter(midpoint).clamp(0.0, 1.0),
                normal: frame.normal,
                weight: (k - 1.0) * e.length() * integrand(frame, u[r], v[r]),
            })
        })
        .collect()
}

fn contract(poly: &Polygon, terms: &[EdgeTerm], v: &VelocityField) -> Result<f64> {
    let mut acc = 0.0;
    for t in terms {
        let phi = interface_velocity(poly, v, t.poly_edge, t.midpoint)?;
        acc += t.weight * phi.dot(t.normal);
    }
    Ok(acc)
}

/// The Dirichlet-side derivative with exterior traces for both factors.
pub fn shape_derivative(
    poly: &Polygon,
    conductivity: &ConductivitySpec,
    ring: &InterfaceRing,
    u_exterior: &[Vec2],
    v_exterior: &[Vec2],
    velocity: &VelocityField,
) -> Result<f64> {
    let k = conductivity.k();
    let terms = edge_terms(poly, k, ring, u_exterior, v_exterior, |f, gu, gv| apply_m0(gu, f, k).dot(gv))?;
    contract(poly, &terms, velocity)
}

/// Same derivative written as `grad u_e . grad v_i`, which equals
/// `M0 grad u_e . grad v_e` when the transmission conditions hold. Fed with
/// one-sided element gradients it checks the transmission handling.
pub fn shape_derivative_mixed(
    poly: &Polygon,
    conductivity: &ConductivitySpec,
    ring: &InterfaceRing,
    u_exterior: &[Vec2],
    v_interior: &[Vec2],
    velocity: &VelocityField,
) -> Result<f64> {
    let terms = edge_terms(poly, conductivity.k(), ring, u_exterior, v_interior, |_, gu, gv| gu.dot(gv))?;
    contract(poly, &terms, velocity)
}

/// Splits each edge term between the two vertices of its polygon edge with
/// the hat weights `1 - s` and `s`, so that pairing with any `V` reproduces
/// [`shape_derivative`].
pub fn per_vertex_gradient(
    poly: &Polygon,
    conductivity: &ConductivitySpec,
    ring: &InterfaceRing,
    u_exterior: &[Vec2],
    v_exterior: &[Vec2],
) -> Result<ShapeGradient> {
    let k = conductivity.k();
    let terms = edge_terms(poly, k, ring, u_exterior, v_exterior, |f, gu, gv| apply_m0(gu, f, k).dot(gv))?;
    let n = poly.len();
    let mut g = ShapeGradient::zeros(n);
    for t in &terms {
        let a = t.poly_edge;
        let b = (a + 1) % n;
        g.0[a] = g.0[a] + t.normal * (t.weight * (1.0 - t.s));
        g.0[b] = g.0[b] + t.normal * (t.weight * t.s);
    }
    Ok(g)
}

/// Derivative of `G~(t) = <g, N_t f>` from the Neumann solutions for `f`
/// and `g`. Differentiating `N_t = Lambda_t^-1` flips the sign of the
/// Dirichlet-side integrand.
pub fn neumann_gradient(
    poly: &Polygon,
    conductivity: &ConductivitySpec,
    ring: &InterfaceRing,
    u_exterior: &[Vec2],
    v_exterior: &[Vec2],
) -> Result<ShapeGradient> {
    Ok(per_vertex_gradient(poly, conductivity, ring, u_exterior, v_exterior)?.scaled(-1.0))
}

/// Forward solution and misfit `J = 1/2 int (u - u_meas)^2` for one
/// Neumann excitation.
#[derive(Clone, Debug)]
pub struct MisfitState {
    pub value: f64,
    pub u: Field,
    /// `u - u_meas` on the boundary loop.
    pub residual: Vec<f64>,
}

/// Measured voltages interpolated to the boundary loop of `mesh`.
pub fn measured_on(mesh: &Mesh, u_meas: &BoundarySamples) -> Vec<f64> {
    let scale = u_meas.perimeter() / mesh.perimeter();
    mesh.boundary_arclength().iter().map(|&s| u_meas.eval(s * scale)).collect()
}

pub fn misfit(
    mesh: &Arc<Mesh>,
    conductivity: &ConductivitySpec,
    f: &BoundaryData,
    u_meas: &BoundarySamples,
    cg: &CgSettings,
) -> Result<MisfitState> {
    let u = solve_neumann(mesh, conductivity, f, cg)?;
    Ok(misfit_of(u, u_meas))
}

/// Misfit of an existing forward solution.
pub fn misfit_of(u: Field, u_meas: &BoundarySamples) -> MisfitState {
    let mesh = Arc::clone(u.mesh());
    let meas = measured_on(&mesh, u_meas);
    let residual: Vec<f64> = u.boundary_values().iter().zip(&meas).map(|(a, b)| a - b).collect();
    let value = 0.5 * boundary_inner(&mesh, &residual, &residual);
    MisfitState { value, u, residual }
}

/// Neumann solution with data `u0 - u_meas`, projected to zero weighted
/// mean.
pub fn adjoint_state(mesh: &Arc<Mesh>, conductivity: &ConductivitySpec, residual: &[f64], cg: &CgSettings) -> Result<Field> {
    let w = mesh.boundary_weights();
    let total: f64 = w.iter().sum();
    if residual.len() != w.len() {
        return Err(FemError::DataLength {
            expected: w.len(),
            got: residual.len(),
        }
        .into());
    }
    let mean = w.iter().zip(residual).map(|(a, b)| a * b).sum::<f64>() / total;
    let data: Vec<f64> = residual.iter().map(|r| r - mean).collect();
    Ok(solve_neumann(mesh, conductivity, &BoundaryData::neumann(BoundaryMode::Nodal(data)), cg)?)
}

/// `dJ[V] = sum_i g_i . V_i` from the forward and adjoint states: the
/// misfit derivative is the Neumann-side derivative with test function
/// `u0 - u_meas`.
pub fn misfit_gradient(
    poly: &Polygon,
    conductivity: &ConductivitySpec,
    ring: &InterfaceRing,
    u0_exterior: &[Vec2],
    w0_exterior: &[Vec2],
) -> Result<ShapeGradient> {
    neumann_gradient(poly, conductivity, ring, u0_exterior, w0_exterior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{solve_dirichlet, BoundaryKind, TrigPhase};
    use crate::geometry::DomainSpec;
    use crate::mesh::{generate_mesh, interface_ring, GradingSpec};

    fn tri() -> Polygon {
        Polygon::new(vec![Vec2::new(-0.3, -0.2), Vec2::new(0.05, 0.35), Vec2::new(0.35, -0.15)]).unwrap()
    }

    #[test]
    fn m0_acts_by_its_eigenvalues() {
        let frame = EdgeFrame {
            index: 0,
            start: Vec2::ZERO,
            end: Vec2::new(1.0, 0.0),
            tangent: Vec2::new(1.0, 0.0),
            normal: Vec2::new(0.0, 1.0),
        };
        assert_eq!(apply_m0(Vec2::new(3.0, 4.0), &frame, 2.0), Vec2::new(3.0, 2.0));
        assert_eq!(apply_m0(Vec2::new(3.0, 4.0), &frame, 1.0), Vec2::new(3.0, 4.0));
        let g = Vec2::new(-0.7, 1.3);
        let back = apply_m0(apply_m0(g, &frame, 3.0), &frame, 1.0 / 3.0);
        assert!((back - g).norm() < 1e-15);
    }

    #[test]
    fn gradient_reproduces_derivative_and_mixed_form_agrees() {
        let poly = tri();
        let m = Arc::new(generate_mesh(&DomainSpec::unit_square(), std::slice::from_ref(&poly), &GradingSpec::new(0.05)).unwrap());
        let c = ConductivitySpec::new(2.0).unwrap();
        let cg = CgSettings::default();
        let u = solve_dirichlet(&m, &c, &BoundaryData::trig(BoundaryKind::Dirichlet, 1, TrigPhase::Cos), &cg).unwrap();
        let v = solve_dirichlet(&m, &c, &BoundaryData::trig(BoundaryKind::Dirichlet, 1, TrigPhase::Sin), &cg).unwrap();
        let ring = interface_ring(&m).unwrap();
        let (tu, tv) = (traces(&u, &ring).unwrap(), traces(&v, &ring).unwrap());
        let vel = VelocityField::new(vec![Vec2::new(0.3, -0.1), Vec2::new(-0.2, 0.4), Vec2::new(0.1, 0.1)]).unwrap();
        let d = shape_derivative(&poly, &c, &ring, &tu.exterior, &tv.exterior, &vel).unwrap();
        let g = per_vertex_gradient(&poly, &c, &ring, &tu.exterior, &tv.exterior).unwrap();
        assert!((g.pair(&vel) - d).abs() <= 1e-12 * d.abs());
        let mixed = shape_derivative_mixed(&poly, &c, &ring, &tu.element_exterior, &tv.element_interior, &vel).unwrap();
        // Normal-flux continuity holds only weakly for one-sided P1 gradients.
        assert!((mixed - d).abs() < 0.25 * d.abs());
        let one = ConductivitySpec::new(1.0).unwrap();
        assert_eq!(shape_derivative(&poly, &one, &ring, &tu.exterior, &tv.exterior, &vel).unwrap(), 0.0);
        let short = &tu.exterior[1..];
        assert!(matches!(
            shape_derivative(&poly, &c, &ring, short, &tv.exterior, &vel),
            Err(ShapeError::TraceMismatch { .. })
        ));
    }

    #[test]
    fn adjoint_of_exact_data_vanishes_and_scales_linearly() {
        let poly = tri();
        let m = Arc::new(generate_mesh(&DomainSpec::unit_square(), &[poly], &GradingSpec::new(0.1)).unwrap());
        let c = ConductivitySpec::new(2.0).unwrap();
        let cg = CgSettings::default();
        let f = BoundaryData::trig(BoundaryKind::Neumann, 1, TrigPhase::Cos);
        let u = solve_neumann(&m, &c, &f, &cg).unwrap();
        let state = misfit(&m, &c, &f, &u.boundary_samples(), &cg).unwrap();
        assert!(state.value <= 1e-20);
        let w = adjoint_state(&m, &c, &state.residual, &cg).unwrap();
        assert!(w.values().iter().all(|x| x.abs() < 1e-12));
        let shifted = BoundarySamples::new(
            u.boundary_samples().arclength().to_vec(),
            u.boundary_values().iter().map(|x| x + 1.0).collect(),
            m.perimeter(),
        )
        .unwrap();
        let st = misfit(&m, &c, &f, &shifted, &cg).unwrap();
        assert!((st.value - 4.0).abs() < 1e-10);
        let r: Vec<f64> = (0..m.boundary_loop().len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let r3: Vec<f64> = r.iter().map(|x| 3.0 * x).collect();
        let w1 = adjoint_state(&m, &c, &r, &cg).unwrap();
        let w3 = adjoint_state(&m, &c, &r3, &cg).unwrap();
        for (a, b) in w1.values().iter().zip(w3.values()) {
            assert!((3.0 * a - b).abs() < 1e-7 * (1.0 + b.abs()));
        }
    }
}
