//! Plane vectors, the inclusion polygon, vertex velocity fields and the
//! admissibility constraints that every accepted polygon must satisfy.
//!
//! Polygons are stored clockwise. With that convention the unit tangent of
//! edge `i` points from vertex `i` to vertex `i + 1` and the outward normal is
//! the tangent rotated counterclockwise by a quarter turn.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use thiserror::Error;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Counterclockwise quarter turn.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, other: Vec2, s: f64) -> Vec2 {
        self + (other - self) * s
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, s: f64) -> Vec2 {
        Vec2::new(self.x / s, self.y / s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("vertex {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("edge {0} has zero length")]
    ZeroLengthEdge(usize),
    #[error("polygon is degenerate at vertex {vertex}: adjacent edges are collinear")]
    Degenerate { vertex: usize },
    #[error("polygon is not simple: edges {0} and {1} intersect")]
    SelfIntersection(usize, usize),
    #[error("polygon is not convex at vertex {0}")]
    NonConvex(usize),
    #[error("perturbation reverses the polygon orientation")]
    OrientationFlip,
    #[error("velocity field has {got} entries but the polygon has {expected} vertices")]
    VelocityLength { expected: usize, got: usize },
    #[error("edge index {index} out of range for a polygon with {count} edges")]
    EdgeIndex { index: usize, count: usize },
    #[error("point ({x}, {y}) lies {distance:e} away from edge {edge}")]
    OffEdge {
        edge: usize,
        x: f64,
        y: f64,
        distance: f64,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

pub fn signed_area(points: &[Vec2]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        acc += points[i].cross(points[(i + 1) % n]);
    }
    0.5 * acc
}

/// Distance from `p` to the closed segment `[a, b]`.
pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let len_sq = d.norm_sq();
    if len_sq == 0.0 {
        return p.distance(a);
    }
    let s = ((p - a).dot(d) / len_sq).clamp(0.0, 1.0);
    p.distance(a + d * s)
}

fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let o1 = (b - a).cross(c - a);
    let o2 = (b - a).cross(d - a);
    let o3 = (d - c).cross(a - c);
    let o4 = (d - c).cross(b - c);
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2, o: f64| {
        o == 0.0
            && r.x >= p.x.min(q.x)
            && r.x <= p.x.max(q.x)
            && r.y >= p.y.min(q.y)
            && r.y <= p.y.max(q.y)
    };
    on(a, b, c, o1) || on(a, b, d, o2) || on(c, d, a, o3) || on(c, d, b, o4)
}

/// A simple convex polygon with clockwise vertex order.
///
/// Triangles are accepted whenever they are non-degenerate; polygons with four
/// or more vertices must be convex. Counterclockwise input is reversed at
/// construction while keeping vertex 0 in place, and the fact is recorded in
/// [`Polygon::was_reoriented`].
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    vertices: Vec<Vec2>,
    reoriented: bool,
}

impl Polygon {
    pub fn new(vertices: Vec<Vec2>) -> Result<Self> {
        Self::build(vertices, true)
    }

    /// Like [`Polygon::new`] but rejects counterclockwise input instead of
    /// reversing it.
    pub fn clockwise(vertices: Vec<Vec2>) -> Result<Self> {
        Self::build(vertices, false)
    }

    fn build(mut vertices: Vec<Vec2>, allow_reorient: bool) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(GeometryError::TooFewVertices(n));
        }
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite(i));
        }
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(GeometryError::ZeroLengthEdge(i));
            }
        }
        let mut reoriented = false;
        if signed_area(&vertices) > 0.0 {
            if !allow_reorient {
                return Err(GeometryError::OrientationFlip);
            }
            vertices[1..].reverse();
            reoriented = true;
        }
        for i in 0..n {
            let prev = vertices[(i + n - 1) % n];
            let here = vertices[i];
            let next = vertices[(i + 1) % n];
            let e0 = here - prev;
            let e1 = next - here;
            if e0.cross(e1).abs() <= 1e-12 * e0.norm() * e1.norm() {
                return Err(GeometryError::Degenerate { vertex: i });
            }
        }
        if n >= 4 {
            for i in 0..n {
                for j in (i + 2)..n {
                    if i == 0 && j == n - 1 {
                        continue;
                    }
                    let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                    let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                    if segments_intersect(a, b, c, d) {
                        return Err(GeometryError::SelfIntersection(i, j));
                    }
                }
            }
            for i in 0..n {
                let prev = vertices[(i + n - 1) % n];
                let next = vertices[(i + 1) % n];
                if (vertices[i] - prev).cross(next - vertices[i]) > 0.0 {
                    return Err(GeometryError::NonConvex(i));
                }
            }
        }
        Ok(Polygon {
            vertices,
            reoriented,
        })
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    /// Always false; polygons have at least three vertices.
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex(&self, i: usize) -> Vec2 {
        self.vertices[i % self.vertices.len()]
    }

    pub fn was_reoriented(&self) -> bool {
        self.reoriented
    }

    /// Endpoints of edge `i`, from vertex `i` to vertex `i + 1`.
    pub fn edge(&self, i: usize) -> (Vec2, Vec2) {
        (self.vertex(i), self.vertex(i + 1))
    }

    pub fn edge_length(&self, i: usize) -> f64 {
        let (a, b) = self.edge(i);
        a.distance(b)
    }

    pub fn area(&self) -> f64 {
        -signed_area(&self.vertices)
    }

    pub fn perimeter(&self) -> f64 {
        (0..self.len()).map(|i| self.edge_length(i)).sum()
    }

    pub fn centroid(&self) -> Vec2 {
        let n = self.len();
        let mut c = Vec2::ZERO;
        let mut a2 = 0.0;
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let w = p.cross(q);
            a2 += w;
            c += (p + q) * w;
        }
        c / (3.0 * a2)
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, p) in self.vertices.iter().enumerate() {
            for q in &self.vertices[i + 1..] {
                d = d.max(p.distance(*q));
            }
        }
        d
    }

    /// Interior angle at vertex `i`, in `(0, pi)` for a convex polygon.
    pub fn interior_angle(&self, i: usize) -> f64 {
        let here = self.vertex(i);
        let a = self.vertex(i + self.len() - 1) - here;
        let b = self.vertex(i + 1) - here;
        a.cross(b).abs().atan2(a.dot(b))
    }

    pub fn min_vertex_distance(&self) -> f64 {
        let mut d = f64::INFINITY;
        for (i, p) in self.vertices.iter().enumerate() {
            for q in &self.vertices[i + 1..] {
                d = d.min(p.distance(*q));
            }
        }
        d
    }

    /// True for points in the closed polygon.
    pub fn contains(&self, p: Vec2) -> bool {
        (0..self.len()).all(|i| {
            let (a, b) = self.edge(i);
            (b - a).cross(p - a) <= 0.0
        })
    }

    pub fn distance_to_boundary(&self, p: Vec2) -> f64 {
        (0..self.len())
            .map(|i| {
                let (a, b) = self.edge(i);
                point_segment_distance(p, a, b)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn edge_frame(&self, i: usize) -> Result<EdgeFrame> {
        if i >= self.len() {
            return Err(GeometryError::EdgeIndex {
                index: i,
                count: self.len(),
            });
        }
        let (start, end) = self.edge(i);
        let d = end - start;
        let len = d.norm();
        let tangent = d / len;
        Ok(EdgeFrame {
            index: i,
            start,
            end,
            tangent,
            normal: tangent.perp(),
        })
    }

    pub fn translated(&self, shift: Vec2) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|v| *v + shift).collect(),
            reoriented: self.reoriented,
        }
    }

    /// Rotation about the origin. Orientation is preserved.
    pub fn rotated(&self, angle: f64) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|v| v.rotated(angle)).collect(),
            reoriented: self.reoriented,
        }
    }

    /// Same polygon with the vertex list cyclically shifted so that the old
    /// vertex `start` becomes vertex 0.
    pub fn relabeled(&self, start: usize) -> Polygon {
        let n = self.len();
        Polygon {
            vertices: (0..n).map(|i| self.vertex(start + i)).collect(),
            reoriented: self.reoriented,
        }
    }

    /// Convex clipping of `self` against `other`.
    pub fn intersection(&self, other: &Polygon) -> Vec<Vec2> {
        clip_convex(&self.vertices, &other.vertices)
    }
}

/// Sutherland-Hodgman clipping of `subject` by the clockwise convex `clip`.
/// Works for subjects of either orientation; output keeps the subject's.
pub(crate) fn clip_convex(subject: &[Vec2], clip: &[Vec2]) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % m];
        let e = b - a;
        let input = std::mem::take(&mut out);
        let k = input.len();
        for j in 0..k {
            let p = input[j];
            let q = input[(j + 1) % k];
            let sp = e.cross(p - a);
            let sq = e.cross(q - a);
            let p_in = sp <= 0.0;
            let q_in = sq <= 0.0;
            if p_in {
                out.push(p);
            }
            if p_in != q_in {
                let s = sp / (sp - sq);
                out.push(p + (q - p) * s);
            }
        }
    }
    out
}

/// Area of the symmetric difference of two convex polygons.
pub fn symmetric_difference_area(a: &Polygon, b: &Polygon) -> f64 {
    let common = a.intersection(b);
    let overlap = if common.len() >= 3 {
        signed_area(&common).abs()
    } else {
        0.0
    };
    (a.area() + b.area() - 2.0 * overlap).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DomainKind {
    /// The square `[-1, 1]^2`.
    UnitSquare,
    /// Regular polygon inscribed in a circle, with a vertex at `(radius, 0)`.
    RegularNgon { sides: usize, radius: f64 },
}

/// The background domain together with the size bound `diameter_bound` and
/// the inclusion-to-boundary margin `margin` used by admissibility checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub diameter_bound: f64,
    pub margin: f64,
}

impl DomainSpec {
    pub fn new(kind: DomainKind, diameter_bound: f64, margin: f64) -> Result<Self> {
        if let DomainKind::RegularNgon { sides, radius } = kind {
            if sides < 3 || !(radius > 0.0 && radius.is_finite()) {
                return Err(GeometryError::InvalidParameter(format!(
                    "regular polygon needs >= 3 sides and positive radius, got {sides} sides, radius {radius}"
                )));
            }
        }
        let spec = DomainSpec {
            kind,
            diameter_bound,
            margin,
        };
        if !(diameter_bound.is_finite() && spec.diameter() <= diameter_bound) {
            return Err(GeometryError::InvalidParameter(format!(
                "domain diameter {} exceeds the bound {diameter_bound}",
                spec.diameter()
            )));
        }
        if !(margin > 0.0 && margin < diameter_bound / 2.0) {
            return Err(GeometryError::InvalidParameter(format!(
                "margin {margin} must lie in (0, {})",
                diameter_bound / 2.0
            )));
        }
        Ok(spec)
    }

    /// `[-1, 1]^2` with diameter bound 3 and margin 0.1.
    pub fn unit_square() -> Self {
        DomainSpec {
            kind: DomainKind::UnitSquare,
            diameter_bound: 3.0,
            margin: 0.1,
        }
    }

    /// Regular `sides`-gon inscribed in the unit circle.
    pub fn disk(sides: usize) -> Self {
        DomainSpec {
            kind: DomainKind::RegularNgon { sides, radius: 1.0 },
            diameter_bound: 2.5,
            margin: 0.1,
        }
    }

    /// Counterclockwise boundary vertices. Vertex 0 is the arc-length origin
    /// used by boundary data; for the square it is the edge midpoint `(1, 0)`.
    pub fn boundary(&self) -> Vec<Vec2> {
        match self.kind {
            DomainKind::UnitSquare => vec![
                Vec2::new(1.0, 0.0),
                Vec2::new(1.0, 1.0),
                Vec2::new(-1.0, 1.0),
                Vec2::new(-1.0, -1.0),
                Vec2::new(1.0, -1.0),
            ],
            DomainKind::RegularNgon { sides, radius } => (0..sides)
                .map(|j| {
                    let a = 2.0 * PI * j as f64 / sides as f64;
                    Vec2::new(radius * a.cos(), radius * a.sin())
                })
                .collect(),
        }
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.boundary())
    }

    pub fn perimeter(&self) -> f64 {
        let b = self.boundary();
        (0..b.len()).map(|i| b[i].distance(b[(i + 1) % b.len()])).sum()
    }

    pub fn diameter(&self) -> f64 {
        match self.kind {
            DomainKind::UnitSquare => 8f64.sqrt(),
            DomainKind::RegularNgon { sides, radius } => {
                if sides % 2 == 0 {
                    2.0 * radius
                } else {
                    2.0 * radius * (PI / (2.0 * sides as f64)).cos()
                }
            }
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let b = self.boundary();
        (0..b.len()).all(|i| (b[(i + 1) % b.len()] - b[i]).cross(p - b[i]) >= 0.0)
    }

    pub fn distance_to_boundary(&self, p: Vec2) -> f64 {
        let b = self.boundary();
        (0..b.len())
            .map(|i| point_segment_distance(p, b[i], b[(i + 1) % b.len()]))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Shape constraints: interior angles in `[min_angle, pi - min_angle]`,
/// pairwise vertex distances at least `min_side`, and vertices at least
/// `margin` inside the domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintParams {
    pub min_angle: f64,
    pub min_side: f64,
    pub margin: f64,
}

impl ConstraintParams {
    pub fn new(min_angle: f64, min_side: f64, margin: f64) -> Result<Self> {
        if !(min_angle > 0.0 && min_angle < PI / 2.0) {
            return Err(GeometryError::InvalidParameter(format!(
                "min_angle {min_angle} must lie in (0, pi/2)"
            )));
        }
        if !(min_side > 0.0) || !(margin > 0.0) {
            return Err(GeometryError::InvalidParameter(
                "min_side and margin must be positive".into(),
            ));
        }
        Ok(ConstraintParams {
            min_angle,
            min_side,
            margin,
        })
    }
}

impl Default for ConstraintParams {
    fn default() -> Self {
        ConstraintParams {
            min_angle: PI / 12.0,
            min_side: 0.1,
            margin: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    SideLength,
    InteriorAngle,
    BoundaryMargin,
    Convexity,
}

/// One check with its signed slack; negative slack means violated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintCheck {
    pub kind: ConstraintKind,
    pub passed: bool,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibilityReport {
    pub checks: Vec<ConstraintCheck>,
}

impl AdmissibilityReport {
    pub fn is_admissible(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConstraintCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, kind: ConstraintKind) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.kind == kind)
    }
}

pub fn validate_constraints(
    poly: &Polygon,
    params: &ConstraintParams,
    domain: &DomainSpec,
) -> Result<AdmissibilityReport> {
    let n = poly.len();
    let mut angle_slack = f64::INFINITY;
    let mut straight_slack = f64::INFINITY;
    for i in 0..n {
        let theta = poly.interior_angle(i);
        if theta < 1e-12 || PI - theta < 1e-12 {
            return Err(GeometryError::Degenerate { vertex: i });
        }
        angle_slack = angle_slack.min((theta - params.min_angle).min(PI - params.min_angle - theta));
        straight_slack = straight_slack.min(PI - theta);
    }
    let side_slack = poly.min_vertex_distance() - params.min_side;
    let boundary_slack = poly
        .vertices()
        .iter()
        .map(|&v| {
            let d = domain.distance_to_boundary(v);
            if domain.contains(v) {
                d
            } else {
                -d
            }
        })
        .fold(f64::INFINITY, f64::min)
        - params.margin;
    let check = |kind, margin: f64| ConstraintCheck {
        kind,
        passed: margin >= 0.0,
        margin,
    };
    Ok(AdmissibilityReport {
        checks: vec![
            check(ConstraintKind::SideLength, side_slack),
            check(ConstraintKind::InteriorAngle, angle_slack),
            check(ConstraintKind::BoundaryMargin, boundary_slack),
            check(ConstraintKind::Convexity, straight_slack),
        ],
    })
}

/// Per-vertex velocities `V_i`, indexed like the polygon's vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField(Vec<Vec2>);

impl VelocityField {
    pub fn new(v: Vec<Vec2>) -> Result<Self> {
        if let Some(i) = v.iter().position(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite(i));
        }
        Ok(VelocityField(v))
    }

    pub fn zeros(n: usize) -> Self {
        VelocityField(vec![Vec2::ZERO; n])
    }

    /// Unit velocity on one coordinate of one vertex.
    pub fn unit(n: usize, vertex: usize, axis: usize) -> Self {
        let mut v = vec![Vec2::ZERO; n];
        if axis == 0 {
            v[vertex].x = 1.0;
        } else {
            v[vertex].y = 1.0;
        }
        VelocityField(v)
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

    pub fn max_norm(&self) -> f64 {
        self.0.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> VelocityField {
        VelocityField(self.0.iter().map(|v| *v * s).collect())
    }

    pub fn rotated(&self, angle: f64) -> VelocityField {
        VelocityField(self.0.iter().map(|v| v.rotated(angle)).collect())
    }

    pub fn relabeled(&self, start: usize) -> VelocityField {
        let n = self.0.len();
        VelocityField((0..n).map(|i| self.0[(start + i) % n]).collect())
    }

    fn check_len(&self, poly: &Polygon) -> Result<()> {
        if self.len() != poly.len() {
            return Err(GeometryError::VelocityLength {
                expected: poly.len(),
                got: self.len(),
            });
        }
        Ok(())
    }
}

/// Largest `|t|` keeping every vertex of `P + tV` within half the margin of
/// its original position.
pub fn admissible_step_bound(v: &VelocityField, margin: f64) -> f64 {
    let m = v.max_norm();
    if m == 0.0 {
        f64::INFINITY
    } else {
        margin / (2.0 * m)
    }
}

/// The polygon with vertices `P_i + t V_i`, same indexing and orientation.
pub fn perturb(poly: &Polygon, v: &VelocityField, t: f64) -> Result<Polygon> {
    v.check_len(poly)?;
    let moved = poly
        .vertices()
        .iter()
        .zip(v.as_slice())
        .map(|(p, dv)| *p + *dv * t)
        .collect();
    let mut out = Polygon::clockwise(moved)?;
    out.reoriented = poly.reoriented;
    Ok(out)
}

/// Unit tangent (clockwise traversal) and outward normal of one edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeFrame {
    pub index: usize,
    pub start: Vec2,
    pub end: Vec2,
    pub tangent: Vec2,
    pub normal: Vec2,
}

impl EdgeFrame {
    pub fn length(&self) -> f64 {
        self.start.distance(self.end)
    }

    /// Affine parameter of the projection of `q` onto the edge line.
    pub fn parameter(&self, q: Vec2) -> f64 {
        (q - self.start).dot(self.tangent) / self.length()
    }
}

/// The piecewise-affine interface velocity: on edge `i` it interpolates
/// `V_i` and `V_{i+1}` linearly in the edge parameter of `q`.
pub fn interface_velocity(poly: &Polygon, v: &VelocityField, edge: usize, q: Vec2) -> Result<Vec2> {
    v.check_len(poly)?;
    let frame = poly.edge_frame(edge)?;
    let len = frame.length();
    let distance = point_segment_distance(q, frame.start, frame.end);
    if distance > 1e-12 * len.max(1.0) {
        return Err(GeometryError::OffEdge {
            edge,
            x: q.x,
            y: q.y,
            distance,
        });
    }
    let s = frame.parameter(q).clamp(0.0, 1.0);
    let n = poly.len();
    let a = v.as_slice()[edge];
    let b = v.as_slice()[(edge + 1) % n];
    Ok(a + (b - a) * s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> Polygon {
        Polygon::new(vec![
            Vec2::new(-0.3, -0.2),
            Vec2::new(0.0, 0.35),
            Vec2::new(0.3, -0.2),
        ])
        .unwrap()
    }

    #[test]
    fn counterclockwise_input_is_reversed_and_flagged() {
        let p = Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
        ])
        .unwrap();
        assert!(p.was_reoriented());
        assert!(signed_area(p.vertices()) < 0.0);
        assert_eq!(p.vertex(0), Vec2::new(0.0, 0.0));
        assert!((p.area() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn clockwise_triangle_normals_point_outward() {
        let p = tri();
        assert!(!p.was_reoriented() || p.area() > 0.0);
        let c = p.centroid();
        for i in 0..3 {
            let f = p.edge_frame(i).unwrap();
            let mid = (f.start + f.end) * 0.5;
            assert!((mid - c).dot(f.normal) > 0.0);
            assert!((f.tangent.norm() - 1.0).abs() < 1e-15);
            assert!(f.tangent.dot(f.normal).abs() < 1e-15);
        }
    }

    #[test]
    fn collinear_vertices_are_rejected() {
        let err = Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(2.0, 0.0),
        ])
        .unwrap_err();
        assert!(matches!(err, GeometryError::Degenerate { .. }));
    }

    #[test]
    fn nonconvex_quadrilateral_is_rejected() {
        let err = Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(0.2, 0.3),
            Vec2::new(1.0, 0.0),
        ])
        .unwrap_err();
        assert!(matches!(err, GeometryError::NonConvex(_)));
    }

    #[test]
    fn bowtie_is_rejected_as_self_intersecting() {
        let err = Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
        ])
        .unwrap_err();
        assert!(matches!(err, GeometryError::SelfIntersection(_, _)));
    }

    #[test]
    fn interior_angles_of_a_triangle_sum_to_pi() {
        let p = tri();
        let s: f64 = (0..3).map(|i| p.interior_angle(i)).sum();
        assert!((s - PI).abs() < 1e-14);
    }

    #[test]
    fn admissible_triangle_passes_all_checks() {
        let r = validate_constraints(&tri(), &ConstraintParams::default(), &DomainSpec::unit_square())
            .unwrap();
        assert!(r.is_admissible(), "{r:?}");
    }

    #[test]
    fn vertex_too_close_to_boundary_fails_margin() {
        let p = Polygon::new(vec![
            Vec2::new(-0.3, -0.2),
            Vec2::new(0.0, 0.95),
            Vec2::new(0.3, -0.2),
        ])
        .unwrap();
        let r = validate_constraints(&p, &ConstraintParams::default(), &DomainSpec::unit_square())
            .unwrap();
        let c = r.check(ConstraintKind::BoundaryMargin).unwrap();
        assert!(!c.passed);
        assert!((c.margin - (0.05 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn interface_velocity_interpolates_and_rejects_off_edge_points() {
        let p = tri();
        let v = VelocityField::new(vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 2.0), Vec2::ZERO]).unwrap();
        let (a, b) = p.edge(0);
        let q = a.lerp(b, 0.25);
        let w = interface_velocity(&p, &v, 0, q).unwrap();
        assert!((w - Vec2::new(0.75, 0.5)).norm() < 1e-14);
        assert_eq!(interface_velocity(&p, &v, 0, a).unwrap(), v.as_slice()[0]);
        let off = q + Vec2::new(0.0, 1e-3);
        assert!(matches!(
            interface_velocity(&p, &v, 0, off),
            Err(GeometryError::OffEdge { .. })
        ));
    }

    #[test]
    fn perturb_keeps_indexing_and_detects_flips() {
        let p = tri();
        let v = VelocityField::new(vec![Vec2::new(0.1, 0.0); 3]).unwrap();
        let q = perturb(&p, &v, 0.5).unwrap();
        assert!((q.vertex(1) - p.vertex(1) - Vec2::new(0.05, 0.0)).norm() < 1e-15);
        let collapse = VelocityField::new(vec![Vec2::ZERO, Vec2::new(0.0, -1.1), Vec2::ZERO]).unwrap();
        assert!(perturb(&p, &collapse, 1.0).is_err());
    }

    #[test]
    fn symmetric_difference_of_shifted_square() {
        let sq = Polygon::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
        ])
        .unwrap();
        let shifted = sq.translated(Vec2::new(0.25, 0.0));
        assert!((symmetric_difference_area(&sq, &shifted) - 0.5).abs() < 1e-14);
        assert_eq!(symmetric_difference_area(&sq, &sq), 0.0);
    }

    #[test]
    fn domain_measures() {
        let sq = DomainSpec::unit_square();
        assert!((sq.area() - 4.0).abs() < 1e-15);
        assert!((sq.perimeter() - 8.0).abs() < 1e-15);
        let disk = DomainSpec::disk(256);
        assert!((disk.area() - PI).abs() < 1e-3);
        assert!(DomainSpec::new(DomainKind::UnitSquare, 2.0, 0.1).is_err());
        assert!(DomainSpec::new(DomainKind::UnitSquare, 3.0, 1.6).is_err());
    }
}
