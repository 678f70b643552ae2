//! Conforming triangulations of the domain with an embedded inclusion.
//!
//! Meshes are produced by [`generate_mesh`] (conforming Delaunay refinement
//! graded toward polygon corners) or derived from an existing mesh by
//! [`Mesh::morph`], which moves the interface nodes onto a perturbed polygon
//! and extends the displacement harmonically, keeping the connectivity.
//! All derived data (boundary loop, region labels, interface edges) is
//! recomputed geometrically by [`Mesh::build`], so every constructor goes
//! through the same validation.

mod delaunay;
pub mod io;
mod refine;

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{point_segment_distance, DomainSpec, GeometryError, Polygon, Vec2, VelocityField};
use crate::linalg::{conjugate_gradient, CgSettings, CsrMatrix, SolverError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("invalid grading: {0}")]
    Grading(String),
    #[error("polygon {poly} vertex {vertex} is not strictly inside the domain")]
    OutsideDomain { poly: usize, vertex: usize },
    #[error("at most two constraint polygons are supported, got {0}")]
    TooManyPolygons(usize),
    #[error("constraint-edge recovery failed: {0}")]
    Recovery(String),
    #[error("mesh would exceed {0} vertices")]
    TooManyVertices(usize),
    #[error("minimum angle {found_deg:.2} deg is below the quality floor {floor_deg:.2} deg")]
    QualityFloor { found_deg: f64, floor_deg: f64 },
    #[error("invalid mesh: {0}")]
    Invalid(String),
    #[error("mesh does not conform to the inclusion: {0}")]
    NonConforming(String),
    #[error("interface ring is not closed: {0}")]
    OpenRing(String),
    #[error("mesh has no inclusion polygon")]
    NoInclusion,
    #[error("morph target has {got} vertices but the mesh polygon has {expected}")]
    MorphMismatch { expected: usize, got: usize },
    #[error("morph inverts triangle {0}")]
    Inverted(usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, MeshError>;

/// Target element size `h`, floor `h_min`, grading strength `mu` and grading
/// radius `r_g`. Near a corner at distance `d < r_g` the size target is
/// `max(h_min, h * (d / r_g)^(1/mu))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradingSpec {
    pub h: f64,
    pub h_min: f64,
    pub mu: f64,
    pub r_g: f64,
}

impl GradingSpec {
    /// Defaults: `h_min = h / 64`, `mu = 2`, `r_g = 0.2`.
    pub fn new(h: f64) -> Self {
        GradingSpec {
            h,
            h_min: h / 64.0,
            mu: 2.0,
            r_g: 0.2,
        }
    }

    /// No grading: uniform target size `h`.
    pub fn uniform(h: f64) -> Self {
        GradingSpec {
            h,
            h_min: h,
            mu: 1.0,
            r_g: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(MeshError::Grading(format!("h = {} must be positive", self.h)));
        }
        if !(self.h_min > 0.0 && self.h_min <= self.h) {
            return Err(MeshError::Grading(format!(
                "h_min = {} must lie in (0, h]",
                self.h_min
            )));
        }
        if !(self.mu >= 1.0 && self.mu.is_finite()) {
            return Err(MeshError::Grading(format!("mu = {} must be >= 1", self.mu)));
        }
        if !(self.r_g > 0.0 && self.r_g.is_finite()) {
            return Err(MeshError::Grading(format!("r_g = {} must be positive", self.r_g)));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        GradingSpec {
            h: self.h * factor,
            h_min: self.h_min * factor,
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Outside,
    Inside,
}

/// Area and barycentric-coordinate gradients of one triangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangleGeometry {
    pub area: f64,
    pub grads: [Vec2; 3],
}

impl TriangleGeometry {
    pub fn new(p: [Vec2; 3]) -> Self {
        let area2 = (p[1] - p[0]).cross(p[2] - p[0]);
        let grads = [
            (p[2] - p[1]).perp() / area2,
            (p[0] - p[2]).perp() / area2,
            (p[1] - p[0]).perp() / area2,
        ];
        TriangleGeometry {
            area: 0.5 * area2,
            grads,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryEdge {
    /// Counterclockwise along the domain boundary.
    pub nodes: [usize; 2],
    /// Index of the domain side containing the edge.
    pub marker: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterfaceEdge {
    /// Ordered along the clockwise traversal of the polygon.
    pub nodes: [usize; 2],
    pub poly_edge: usize,
    pub tri_in: usize,
    pub tri_out: usize,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    domain: DomainSpec,
    nodes: Vec<Vec2>,
    triangles: Vec<[usize; 3]>,
    regions: Vec<Region>,
    neighbors: Vec<[Option<usize>; 3]>,
    geometry: Vec<TriangleGeometry>,
    boundary_edges: Vec<BoundaryEdge>,
    boundary_loop: Vec<usize>,
    boundary_arclength: Vec<f64>,
    boundary_weights: Vec<f64>,
    boundary_slot: Vec<Option<usize>>,
    perimeter: f64,
    inclusion: Option<Polygon>,
    interface_edges: Vec<InterfaceEdge>,
}

const ON_EDGE_TOL: f64 = 1e-10;

impl Mesh {
    /// Validates connectivity and derives the boundary loop, region labels
    /// and interface edges. Clockwise triangles are reoriented.
    pub fn build(
        domain: DomainSpec,
        nodes: Vec<Vec2>,
        mut triangles: Vec<[usize; 3]>,
        inclusion: Option<Polygon>,
    ) -> Result<Mesh> {
        let n = nodes.len();
        if triangles.is_empty() {
            return Err(MeshError::Invalid("no triangles".into()));
        }
        let mut geometry = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(MeshError::Invalid(format!("triangle {t} references a missing node")));
            }
            let mut p = [nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]];
            let area2 = (p[1] - p[0]).cross(p[2] - p[0]);
            if area2 == 0.0 || !area2.is_finite() {
                return Err(MeshError::Invalid(format!("triangle {t} is degenerate")));
            }
            if area2 < 0.0 {
                tri.swap(1, 2);
                p.swap(1, 2);
            }
            geometry.push(TriangleGeometry::new(p));
        }
        let mut edge_map: HashMap<(usize, usize), (usize, usize)> = HashMap::with_capacity(triangles.len() * 2);
        let mut neighbors = vec![[None; 3]; triangles.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for i in 0..3 {
                let a = tri[(i + 1) % 3];
                let b = tri[(i + 2) % 3];
                let key = (a.min(b), a.max(b));
                if let Some(&(u, j)) = edge_map.get(&key) {
                    if neighbors[u][j].is_some() {
                        return Err(MeshError::Invalid(format!("edge ({a}, {b}) shared by more than two triangles")));
                    }
                    neighbors[u][j] = Some(t);
                    neighbors[t][i] = Some(u);
                } else {
                    edge_map.insert(key, (t, i));
                }
            }
        }
        let mut mesh = Mesh {
            domain,
            nodes,
            triangles,
            regions: Vec::new(),
            neighbors,
            geometry,
            boundary_edges: Vec::new(),
            boundary_loop: Vec::new(),
            boundary_arclength: Vec::new(),
            boundary_weights: Vec::new(),
            boundary_slot: Vec::new(),
            perimeter: 0.0,
            inclusion: None,
            interface_edges: Vec::new(),
        };
        mesh.build_boundary()?;
        mesh.set_inclusion(inclusion)?;
        Ok(mesh)
    }

    fn build_boundary(&mut self) -> Result<()> {
        let mut next: HashMap<usize, usize> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for i in 0..3 {
                if self.neighbors[t][i].is_none() {
                    let a = tri[(i + 1) % 3];
                    let b = tri[(i + 2) % 3];
                    if next.insert(a, b).is_some() {
                        return Err(MeshError::Invalid(format!("boundary is not a simple loop at node {a}")));
                    }
                }
            }
        }
        let sides = self.domain.boundary();
        let origin = sides[0];
        let start = *next
            .keys()
            .min_by(|&&a, &&b| {
                self.nodes[a]
                    .distance(origin)
                    .total_cmp(&self.nodes[b].distance(origin))
                    .then(a.cmp(&b))
            })
            .ok_or_else(|| MeshError::Invalid("mesh has no boundary".into()))?;
        if self.nodes[start].distance(origin) > 1e-9 {
            return Err(MeshError::Invalid("no node at the boundary arc-length origin".into()));
        }
        let mut lp = vec![start];
        let mut cur = next[&start];
        while cur != start {
            if lp.len() > next.len() {
                return Err(MeshError::Invalid("boundary loop does not close".into()));
            }
            lp.push(cur);
            cur = *next
                .get(&cur)
                .ok_or_else(|| MeshError::Invalid(format!("boundary loop breaks at node {cur}")))?;
        }
        if lp.len() != next.len() {
            return Err(MeshError::Invalid("boundary has more than one component".into()));
        }
        let m = lp.len();
        let mut arc = Vec::with_capacity(m);
        let mut s = 0.0;
        let mut edges = Vec::with_capacity(m);
        for k in 0..m {
            arc.push(s);
            let a = lp[k];
            let b = lp[(k + 1) % m];
            let (pa, pb) = (self.nodes[a], self.nodes[b]);
            s += pa.distance(pb);
            let marker = (0..sides.len())
                .find(|&j| {
                    let (u, v) = (sides[j], sides[(j + 1) % sides.len()]);
                    point_segment_distance(pa, u, v) <= 1e-9 && point_segment_distance(pb, u, v) <= 1e-9
                })
                .ok_or_else(|| MeshError::Invalid(format!("boundary edge ({a}, {b}) is off the domain boundary")))?;
            edges.push(BoundaryEdge { nodes: [a, b], marker });
        }
        let mut weights = vec![0.0; m];
        for k in 0..m {
            let len = self.nodes[lp[k]].distance(self.nodes[lp[(k + 1) % m]]);
            weights[k] += 0.5 * len;
            weights[(k + 1) % m] += 0.5 * len;
        }
        let mut slot = vec![None; self.nodes.len()];
        for (k, &v) in lp.iter().enumerate() {
            slot[v] = Some(k);
        }
        self.boundary_loop = lp;
        self.boundary_arclength = arc;
        self.boundary_weights = weights;
        self.boundary_slot = slot;
        self.boundary_edges = edges;
        self.perimeter = s;
        Ok(())
    }

    /// Relabels regions against `inclusion`, which must be resolved by mesh
    /// edges. `None` labels every triangle as outside.
    pub fn set_inclusion(&mut self, inclusion: Option<Polygon>) -> Result<()> {
        self.interface_edges.clear();
        let poly = match inclusion {
            None => {
                self.regions = vec![Region::Outside; self.triangles.len()];
                self.inclusion = None;
                return Ok(());
            }
            Some(p) => p,
        };
        let nt = self.triangles.len();
        // barrier[t][i]: polygon edge that the triangle edge lies on.
        let mut barrier = vec![[None::<usize>; 3]; nt];
        let (lo, hi) = poly.vertices().iter().fold(
            (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
            |(lo, hi), p| (Vec2::new(lo.x.min(p.x), lo.y.min(p.y)), Vec2::new(hi.x.max(p.x), hi.y.max(p.y))),
        );
        let near_box = |p: Vec2| p.x >= lo.x - 1e-9 && p.x <= hi.x + 1e-9 && p.y >= lo.y - 1e-9 && p.y <= hi.y + 1e-9;
        for t in 0..nt {
            for i in 0..3 {
                let a = self.nodes[self.triangles[t][(i + 1) % 3]];
                let b = self.nodes[self.triangles[t][(i + 2) % 3]];
                if !near_box(a) || !near_box(b) {
                    continue;
                }
                barrier[t][i] = (0..poly.len()).find(|&j| {
                    let (u, v) = poly.edge(j);
                    let tol = ON_EDGE_TOL * (1.0 + u.distance(v));
                    point_segment_distance(a, u, v) <= tol && point_segment_distance(b, u, v) <= tol
                });
            }
        }
        let mut component = vec![usize::MAX; nt];
        let mut regions = vec![Region::Outside; nt];
        let mut queue = VecDeque::new();
        let mut n_comp = 0;
        for seed in 0..nt {
            if component[seed] != usize::MAX {
                continue;
            }
            component[seed] = n_comp;
            queue.push_back(seed);
            let mut members = Vec::new();
            while let Some(t) = queue.pop_front() {
                members.push(t);
                for i in 0..3 {
                    if barrier[t][i].is_some() {
                        continue;
                    }
                    if let Some(u) = self.neighbors[t][i] {
                        if component[u] == usize::MAX {
                            component[u] = n_comp;
                            queue.push_back(u);
                        }
                    }
                }
            }
            let probe = members
                .iter()
                .map(|&t| {
                    let c = self.centroid(t);
                    (t, poly.distance_to_boundary(c))
                })
                .fold((members[0], f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best })
                .0;
            let label = if poly.contains(self.centroid(probe)) {
                Region::Inside
            } else {
                Region::Outside
            };
            for &t in &members {
                regions[t] = label;
            }
            n_comp += 1;
        }
        let mut interface = Vec::new();
        for t in 0..nt {
            for i in 0..3 {
                let Some(j) = barrier[t][i] else { continue };
                let u = self.neighbors[t][i]
                    .ok_or_else(|| MeshError::NonConforming("interface edge on the domain boundary".into()))?;
                if t > u {
                    continue;
                }
                if regions[t] == regions[u] {
                    return Err(MeshError::NonConforming(format!(
                        "triangles {t} and {u} on both sides of polygon edge {j} have the same label"
                    )));
                }
                let (tri_in, tri_out) = if regions[t] == Region::Inside { (t, u) } else { (u, t) };
                let a = self.triangles[t][(i + 1) % 3];
                let b = self.triangles[t][(i + 2) % 3];
                let frame = poly.edge_frame(j)?;
                let nodes = if frame.parameter(self.nodes[a]) <= frame.parameter(self.nodes[b]) {
                    [a, b]
                } else {
                    [b, a]
                };
                interface.push(InterfaceEdge {
                    nodes,
                    poly_edge: j,
                    tri_in,
                    tri_out,
                });
            }
        }
        let inside_area: f64 = (0..nt)
            .filter(|&t| regions[t] == Region::Inside)
            .map(|t| self.geometry[t].area)
            .sum();
        if (inside_area - poly.area()).abs() > 1e-9 * poly.area().max(1e-300) {
            return Err(MeshError::NonConforming(format!(
                "inside area {inside_area} differs from polygon area {}",
                poly.area()
            )));
        }
        interface.sort_by(|x, y| {
            x.poly_edge.cmp(&y.poly_edge).then_with(|| {
                let f = poly.edge_frame(x.poly_edge).unwrap();
                f.parameter(self.nodes[x.nodes[0]])
                    .total_cmp(&f.parameter(self.nodes[y.nodes[0]]))
            })
        });
        self.regions = regions;
        self.interface_edges = interface;
        self.inclusion = Some(poly);
        Ok(())
    }

    /// The same triangulation labeled against another polygon it resolves.
    pub fn with_inclusion(&self, inclusion: &Polygon) -> Result<Mesh> {
        let mut m = self.clone();
        m.set_inclusion(Some(inclusion.clone()))?;
        Ok(m)
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn nodes(&self) -> &[Vec2] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn neighbors(&self) -> &[[Option<usize>; 3]] {
        &self.neighbors
    }

    pub fn geometry(&self) -> &[TriangleGeometry] {
        &self.geometry
    }

    pub fn inclusion(&self) -> Option<&Polygon> {
        self.inclusion.as_ref()
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn interface_edges(&self) -> &[InterfaceEdge] {
        &self.interface_edges
    }

    /// Boundary nodes, counterclockwise from the arc-length origin.
    pub fn boundary_loop(&self) -> &[usize] {
        &self.boundary_loop
    }

    pub fn boundary_arclength(&self) -> &[f64] {
        &self.boundary_arclength
    }

    /// Lumped boundary mass: half the length of each adjacent boundary edge.
    pub fn boundary_weights(&self) -> &[f64] {
        &self.boundary_weights
    }

    /// Position of a node in the boundary loop, if it is a boundary node.
    pub fn boundary_slot(&self, node: usize) -> Option<usize> {
        self.boundary_slot[node]
    }

    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    pub fn centroid(&self, t: usize) -> Vec2 {
        let [a, b, c] = self.triangles[t];
        (self.nodes[a] + self.nodes[b] + self.nodes[c]) / 3.0
    }

    pub fn total_area(&self) -> f64 {
        self.geometry.iter().map(|g| g.area).sum()
    }

    /// Nodes lying on the inclusion boundary.
    pub fn interface_nodes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.interface_edges.iter().flat_map(|e| e.nodes).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Stiffness matrix of `-div(sigma grad u)` with piecewise constant
    /// `sigma` per triangle.
    pub fn stiffness(&self, sigma: impl Fn(usize) -> f64) -> CsrMatrix {
        let mut trip = Vec::with_capacity(9 * self.triangles.len());
        for (t, tri) in self.triangles.iter().enumerate() {
            let g = &self.geometry[t];
            let s = sigma(t) * g.area;
            for i in 0..3 {
                for j in 0..3 {
                    trip.push((tri[i], tri[j], s * g.grads[i].dot(g.grads[j])));
                }
            }
        }
        CsrMatrix::from_triplets(self.nodes.len(), self.nodes.len(), trip)
    }

    /// Moves the interface onto `target` (same vertex count and indexing as
    /// the mesh's inclusion) and extends the displacement harmonically into
    /// the domain. The boundary of the domain stays fixed.
    pub fn morph(&self, target: &Polygon, cg: &CgSettings) -> Result<Mesh> {
        let poly = self.inclusion.as_ref().ok_or(MeshError::NoInclusion)?;
        if poly.len() != target.len() {
            return Err(MeshError::MorphMismatch {
                expected: poly.len(),
                got: target.len(),
            });
        }
        let velocity: Vec<Vec2> = (0..poly.len()).map(|i| target.vertex(i) - poly.vertex(i)).collect();
        self.morph_direction(&velocity, cg)?.at(1.0)
    }

    /// Node velocity field for the vertex velocities `velocity`: interface
    /// nodes follow their polygon edge affinely, boundary nodes stay put and
    /// interior nodes get the harmonic extension. The morph to `P + tV` is
    /// linear in `t`, so one direction serves every step.
    pub fn morph_direction(&self, velocity: &[Vec2], cg: &CgSettings) -> Result<MorphDirection<'_>> {
        let poly = self.inclusion.as_ref().ok_or(MeshError::NoInclusion)?;
        if poly.len() != velocity.len() {
            return Err(MeshError::MorphMismatch {
                expected: poly.len(),
                got: velocity.len(),
            });
        }
        let n = self.nodes.len();
        let mut fixed: Vec<Option<Vec2>> = vec![None; n];
        for &b in &self.boundary_loop {
            fixed[b] = Some(Vec2::ZERO);
        }
        for e in &self.interface_edges {
            let j = e.poly_edge;
            let (p0, p1) = poly.edge(j);
            let (v0, v1) = (velocity[j], velocity[(j + 1) % poly.len()]);
            let frame = poly.edge_frame(j)?;
            for &v in &e.nodes {
                let x = self.nodes[v];
                let d = if x == p0 {
                    v0
                } else if x == p1 {
                    v1
                } else {
                    v0.lerp(v1, frame.parameter(x))
                };
                fixed[v] = Some(d);
            }
        }
        let mut field = self.harmonic_extension(&fixed, cg)?;
        for (v, f) in fixed.iter().enumerate() {
            if let Some(d) = f {
                field[v] = *d;
            }
        }
        Ok(MorphDirection {
            mesh: self,
            field,
            velocity: velocity.to_vec(),
        })
    }

    /// Displacements `d` solving the discrete Laplace equation with `d`
    /// prescribed on the fixed nodes.
    fn harmonic_extension(&self, fixed: &[Option<Vec2>], cg: &CgSettings) -> Result<Vec<Vec2>> {
        let n = self.nodes.len();
        // Stiffness scaled by inverse element area: small graded elements
        // near corners move nearly rigidly and do not invert.
        let mean_area = self.total_area() / self.triangles.len() as f64;
        let a = self.stiffness(|t| mean_area / self.geometry[t].area);
        let free: Vec<usize> = (0..n).filter(|&v| fixed[v].is_none()).collect();
        let mut map = vec![usize::MAX; n];
        for (k, &v) in free.iter().enumerate() {
            map[v] = k;
        }
        let mut out: Vec<Vec2> = fixed.iter().map(|f| f.unwrap_or(Vec2::ZERO)).collect();
        if out.iter().all(|d| *d == Vec2::ZERO) || free.is_empty() {
            return Ok(out);
        }
        let sub = a.submatrix(&free, &map);
        for axis in 0..2 {
            let comp = |d: Vec2| if axis == 0 { d.x } else { d.y };
            let rhs: Vec<f64> = free
                .iter()
                .map(|&i| {
                    -a.row(i)
                        .filter(|&(j, _)| map[j] == usize::MAX)
                        .map(|(j, v)| v * comp(out[j]))
                        .sum::<f64>()
                })
                .collect();
            let sol = conjugate_gradient(&sub, &rhs, None, cg)?;
            for (k, &v) in free.iter().enumerate() {
                if axis == 0 {
                    out[v].x = sol.x[k];
                } else {
                    out[v].y = sol.x[k];
                }
            }
        }
        Ok(out)
    }

    /// Moves every node that is neither on the domain boundary nor on the
    /// interface by `fraction` of its shortest incident edge, in a fixed
    /// pseudo-random direction per node.
    pub fn jittered(&self, fraction: f64) -> Result<Mesh> {
        let n = self.nodes.len();
        let mut shortest = vec![f64::INFINITY; n];
        for tri in &self.triangles {
            for i in 0..3 {
                let a = tri[i];
                let b = tri[(i + 1) % 3];
                let l = self.nodes[a].distance(self.nodes[b]);
                shortest[a] = shortest[a].min(l);
                shortest[b] = shortest[b].min(l);
            }
        }
        let mut pinned = vec![false; n];
        for &b in &self.boundary_loop {
            pinned[b] = true;
        }
        for v in self.interface_nodes() {
            pinned[v] = true;
        }
        let golden = 0.618_033_988_749_894_9_f64;
        let nodes: Vec<Vec2> = (0..n)
            .map(|v| {
                if pinned[v] {
                    self.nodes[v]
                } else {
                    let angle = 2.0 * std::f64::consts::PI * ((v as f64 * golden).fract());
                    self.nodes[v] + Vec2::new(angle.cos(), angle.sin()) * (fraction * shortest[v])
                }
            })
            .collect();
        for (t, tri) in self.triangles.iter().enumerate() {
            let p = [nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]];
            if (p[1] - p[0]).cross(p[2] - p[0]) <= 0.0 {
                return Err(MeshError::Inverted(t));
            }
        }
        Mesh::build(self.domain, nodes, self.triangles.clone(), self.inclusion.clone())
    }
}

/// Generates a conforming mesh of the domain resolving up to two polygons.
/// Region labels refer to the first polygon; see [`Mesh::with_inclusion`]
/// for the second. Single-polygon meshes must meet the 20 degree quality
/// floor; two-polygon meshes may contain unavoidable small angles where the
/// polygons cross.
pub fn generate_mesh(domain: &DomainSpec, polygons: &[Polygon], grading: &GradingSpec) -> Result<Mesh> {
    grading.validate()?;
    if polygons.len() > 2 {
        return Err(MeshError::TooManyPolygons(polygons.len()));
    }
    for (k, p) in polygons.iter().enumerate() {
        for (i, &v) in p.vertices().iter().enumerate() {
            if !domain.contains(v) || domain.distance_to_boundary(v) <= grading.h_min {
                return Err(MeshError::OutsideDomain { poly: k, vertex: i });
            }
        }
    }
    // Canonical vertex order makes the mesh independent of the polygon's
    // starting vertex.
    let loops: Vec<Vec<Vec2>> = polygons
        .iter()
        .map(|p| {
            let v = p.vertices();
            let start = (0..v.len())
                .min_by(|&a, &b| v[a].x.total_cmp(&v[b].x).then(v[a].y.total_cmp(&v[b].y)))
                .unwrap();
            (0..v.len()).map(|i| v[(start + i) % v.len()]).collect()
        })
        .collect();
    let pslg = refine::build_pslg(&domain.boundary(), &loops, 1e-12)?;
    let size = refine::SizeField {
        h: grading.h,
        h_min: grading.h_min,
        exponent: 1.0 / grading.mu,
        radius: grading.r_g,
        corners: pslg.corners.iter().map(|&i| pslg.points[i]).collect(),
    };
    let floor = QUALITY_FLOOR_DEG.to_radians();
    let settings = refine::RefineSettings {
        min_angle: floor,
        max_vertices: 4_000_000,
    };
    let out = refine::refine(&pslg, &size, settings)?;
    let mesh = Mesh::build(*domain, out.points, out.triangles, polygons.first().cloned())?;
    if polygons.len() <= 1 {
        if let Some(found) = floor_violation(&mesh, polygons.first()) {
            return Err(MeshError::QualityFloor {
                found_deg: found,
                floor_deg: QUALITY_FLOOR_DEG,
            });
        }
    }
    log::debug!(
        "generated mesh: {} nodes, {} triangles",
        mesh.n_nodes(),
        mesh.n_triangles()
    );
    Ok(mesh)
}

pub const QUALITY_FLOOR_DEG: f64 = 20.0;

/// Smallest angle below the floor, ignoring angles at inclusion vertices
/// whose interior angle is itself below the floor.
fn floor_violation(mesh: &Mesh, inclusion: Option<&Polygon>) -> Option<f64> {
    let sharp: Vec<Vec2> = inclusion
        .map(|p| {
            (0..p.len())
                .filter(|&i| p.interior_angle(i).to_degrees() < QUALITY_FLOOR_DEG)
                .map(|i| p.vertex(i))
                .collect()
        })
        .unwrap_or_default();
    let mut worst = f64::INFINITY;
    for tri in &mesh.triangles {
        let p = [mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]];
        for (i, a) in triangle_angles(p).into_iter().enumerate() {
            if !sharp.contains(&p[i]) {
                worst = worst.min(a.to_degrees());
            }
        }
    }
    (worst < QUALITY_FLOOR_DEG - 1e-9).then_some(worst)
}

/// Linear node motion that carries a mesh onto `P + tV` for any `t`.
#[derive(Clone, Debug)]
pub struct MorphDirection<'a> {
    mesh: &'a Mesh,
    field: Vec<Vec2>,
    velocity: Vec<Vec2>,
}

impl MorphDirection<'_> {
    pub fn field(&self) -> &[Vec2] {
        &self.field
    }

    /// Mesh with nodes `x + t d(x)`, conforming to the polygon `P + tV`.
    pub fn at(&self, t: f64) -> Result<Mesh> {
        let m = self.mesh;
        let poly = m.inclusion.as_ref().ok_or(MeshError::NoInclusion)?;
        let target = crate::geometry::perturb(poly, &VelocityField::new(self.velocity.clone())?, t)?;
        if t == 0.0 {
            return Ok(m.clone());
        }
        let nodes: Vec<Vec2> = m.nodes.iter().zip(&self.field).map(|(x, d)| *x + *d * t).collect();
        for (k, tri) in m.triangles.iter().enumerate() {
            let p = [nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]];
            if (p[1] - p[0]).cross(p[2] - p[0]) <= 0.0 {
                return Err(MeshError::Inverted(k));
            }
        }
        Mesh::build(m.domain, nodes, m.triangles.clone(), Some(target))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshQuality {
    pub min_angle_deg: f64,
    /// Circumradius over twice the inradius; 1 for equilateral triangles.
    pub max_aspect: f64,
    /// Largest circumdiameter.
    pub h_eff: f64,
    pub n_nodes: usize,
    pub n_triangles: usize,
    pub n_interface_edges: usize,
}

pub fn triangle_angles(p: [Vec2; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        let u = p[(i + 1) % 3] - p[i];
        let v = p[(i + 2) % 3] - p[i];
        out[i] = u.cross(v).abs().atan2(u.dot(v));
    }
    out
}

pub fn mesh_quality(mesh: &Mesh) -> MeshQuality {
    let mut min_angle = f64::INFINITY;
    let mut max_aspect: f64 = 0.0;
    let mut h_eff: f64 = 0.0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = [mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]];
        for a in triangle_angles(p) {
            min_angle = min_angle.min(a);
        }
        let l = [p[1].distance(p[2]), p[2].distance(p[0]), p[0].distance(p[1])];
        let area = mesh.geometry[t].area;
        let r_circ = l[0] * l[1] * l[2] / (4.0 * area);
        let r_in = 2.0 * area / (l[0] + l[1] + l[2]);
        max_aspect = max_aspect.max(r_circ / (2.0 * r_in));
        h_eff = h_eff.max(2.0 * r_circ);
    }
    MeshQuality {
        min_angle_deg: min_angle.to_degrees(),
        max_aspect,
        h_eff,
        n_nodes: mesh.n_nodes(),
        n_triangles: mesh.n_triangles(),
        n_interface_edges: mesh.interface_edges.len(),
    }
}

/// One mesh edge on the inclusion boundary, in clockwise order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RingEdge {
    pub nodes: [usize; 2],
    pub poly_edge: usize,
    pub start: Vec2,
    pub end: Vec2,
    pub tri_in: usize,
    pub tri_out: usize,
}

impl RingEdge {
    pub fn length(&self) -> f64 {
        self.start.distance(self.end)
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.start + self.end) * 0.5
    }
}

/// The closed chain of interface edges, starting at polygon vertex 0.
#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceRing {
    pub edges: Vec<RingEdge>,
}

impl InterfaceRing {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length()).sum()
    }
}

pub fn interface_ring(mesh: &Mesh) -> Result<InterfaceRing> {
    let poly = mesh.inclusion.as_ref().ok_or(MeshError::NoInclusion)?;
    let edges: Vec<RingEdge> = mesh
        .interface_edges
        .iter()
        .map(|e| RingEdge {
            nodes: e.nodes,
            poly_edge: e.poly_edge,
            start: mesh.nodes[e.nodes[0]],
            end: mesh.nodes[e.nodes[1]],
            tri_in: e.tri_in,
            tri_out: e.tri_out,
        })
        .collect();
    if edges.is_empty() {
        return Err(MeshError::OpenRing("no interface edges".into()));
    }
    if edges[0].start != poly.vertex(0) {
        return Err(MeshError::OpenRing("ring does not start at polygon vertex 0".into()));
    }
    for k in 0..edges.len() {
        let next = &edges[(k + 1) % edges.len()];
        if edges[k].nodes[1] != next.nodes[0] {
            return Err(MeshError::OpenRing(format!(
                "gap after node {} on polygon edge {}",
                edges[k].nodes[1], edges[k].poly_edge
            )));
        }
    }
    let ring = InterfaceRing { edges };
    let per = poly.perimeter();
    if (ring.total_length() - per).abs() > 1e-10 * per {
        return Err(MeshError::OpenRing(format!(
            "ring length {} differs from perimeter {per}",
            ring.total_length()
        )));
    }
    Ok(ring)
}

/// Meshes keyed by quantized polygon vertices, grading and domain.
#[derive(Default)]
pub struct MeshCache {
    map: HashMap<Vec<i64>, Arc<Mesh>>,
}

fn quantize(x: f64) -> i64 {
    (x * 1e12).round() as i64
}

impl MeshCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get_or_generate(&mut self, domain: &DomainSpec, polygons: &[Polygon], grading: &GradingSpec) -> Result<Arc<Mesh>> {
        let mut key = vec![
            grading.h.to_bits() as i64,
            grading.h_min.to_bits() as i64,
            grading.mu.to_bits() as i64,
            grading.r_g.to_bits() as i64,
        ];
        match domain.kind {
            crate::geometry::DomainKind::UnitSquare => key.push(-1),
            crate::geometry::DomainKind::RegularNgon { sides, radius } => {
                key.push(sides as i64);
                key.push(radius.to_bits() as i64);
            }
        }
        for p in polygons {
            key.push(p.len() as i64);
            for v in p.vertices() {
                key.push(quantize(v.x));
                key.push(quantize(v.y));
            }
        }
        if let Some(m) = self.map.get(&key) {
            return Ok(Arc::clone(m));
        }
        let m = Arc::new(generate_mesh(domain, polygons, grading)?);
        self.map.insert(key, Arc::clone(&m));
        Ok(m)
    }
}
