//! P1 finite elements for `-div(sigma grad u) = 0`.
//!
//! Dirichlet data is interpolated at boundary nodes and eliminated
//! symmetrically, so the assembled system stays symmetric positive definite.
//! Neumann data `g` enters through the lumped boundary mass, `b_i = w_i g_i`;
//! the solution is normalized to zero weighted boundary mean, which is the
//! single scalar constraint of the pure Neumann problem.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{clip_convex, signed_area, Vec2};
use crate::linalg::{conjugate_gradient, CgSettings, CsrMatrix, SolverError};
use crate::mesh::{InterfaceRing, Mesh, MeshError, Region};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("conductivity contrast must be positive and finite, got {0}")]
    InvalidConductivity(f64),
    #[error("Neumann data has nonzero mean {mean:e} (tolerance {tol:e})")]
    IncompatibleNeumann { mean: f64, tol: f64 },
    #[error("boundary data has {got} values, the mesh has {expected} boundary nodes")]
    DataLength { expected: usize, got: usize },
    #[error("boundary samples are invalid: {0}")]
    Samples(String),
    #[error("fields live on different domains")]
    DomainMismatch,
    #[error("mesh overlay covers {covered} of {expected}; point location failed")]
    Overlay { covered: f64, expected: f64 },
}

pub type Result<T> = std::result::Result<T, FemError>;

/// Inclusion contrast `k`: `sigma = k` inside, `1` outside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConductivitySpec {
    k: f64,
}

impl ConductivitySpec {
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(FemError::InvalidConductivity(k));
        }
        Ok(ConductivitySpec { k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn sigma(&self, region: Region) -> f64 {
        match region {
            Region::Inside => self.k,
            Region::Outside => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrigPhase {
    Cos,
    Sin,
}

/// Periodic samples of a boundary function against arc length, linearly
/// interpolated in between.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySamples {
    arclength: Vec<f64>,
    values: Vec<f64>,
    perimeter: f64,
}

impl BoundarySamples {
    pub fn new(arclength: Vec<f64>, values: Vec<f64>, perimeter: f64) -> Result<Self> {
        if arclength.len() != values.len() || arclength.is_empty() {
            return Err(FemError::Samples("arc lengths and values must be non-empty and equally long".into()));
        }
        if !(perimeter > 0.0) {
            return Err(FemError::Samples("perimeter must be positive".into()));
        }
        if arclength.windows(2).any(|w| !(w[1] > w[0])) || arclength[0] < 0.0 || *arclength.last().unwrap() >= perimeter {
            return Err(FemError::Samples("arc lengths must increase within [0, perimeter)".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FemError::Samples("values must be finite".into()));
        }
        Ok(BoundarySamples {
            arclength,
            values,
            perimeter,
        })
    }

    pub fn arclength(&self) -> &[f64] {
        &self.arclength
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn eval(&self, s: f64) -> f64 {
        let l = self.perimeter;
        let s = s.rem_euclid(l);
        let n = self.arclength.len();
        let k = self.arclength.partition_point(|&x| x <= s);
        let (i0, i1, s0, s1) = if k == 0 {
            (n - 1, 0, self.arclength[n - 1] - l, self.arclength[0])
        } else if k == n {
            (n - 1, 0, self.arclength[n - 1], self.arclength[0] + l)
        } else {
            (k - 1, k, self.arclength[k - 1], self.arclength[k])
        };
        let w = if s1 > s0 { (s - s0) / (s1 - s0) } else { 0.0 };
        self.values[i0] * (1.0 - w) + self.values[i1] * w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryMode {
    /// `cos(n theta)` or `sin(n theta)` with `theta = 2 pi s / L`, `s` the
    /// arc length from the boundary origin.
    Trig { index: usize, phase: TrigPhase },
    /// `gradient . x + offset`.
    Affine { gradient: Vec2, offset: f64 },
    /// Values at the boundary nodes of a specific mesh, in loop order.
    Nodal(Vec<f64>),
    Sampled(BoundarySamples),
}

/// Boundary data for one problem. Analytic Neumann data is projected to zero
/// weighted mean on each mesh; nodal and sampled Neumann data must already be
/// compatible.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    pub kind: BoundaryKind,
    pub mode: BoundaryMode,
}

impl BoundaryData {
    pub fn dirichlet(mode: BoundaryMode) -> Self {
        BoundaryData {
            kind: BoundaryKind::Dirichlet,
            mode,
        }
    }

    pub fn neumann(mode: BoundaryMode) -> Self {
        BoundaryData {
            kind: BoundaryKind::Neumann,
            mode,
        }
    }

    pub fn trig(kind: BoundaryKind, index: usize, phase: TrigPhase) -> Self {
        BoundaryData {
            kind,
            mode: BoundaryMode::Trig { index, phase },
        }
    }

    /// Raw values on the boundary loop of `mesh`.
    pub fn raw_values(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        let lp = mesh.boundary_loop();
        let arc = mesh.boundary_arclength();
        let per = mesh.perimeter();
        Ok(match &self.mode {
            BoundaryMode::Trig { index, phase } => arc
                .iter()
                .map(|&s| {
                    let th = 2.0 * PI * (*index as f64) * s / per;
                    match phase {
                        TrigPhase::Cos => th.cos(),
                        TrigPhase::Sin => th.sin(),
                    }
                })
                .collect(),
            BoundaryMode::Affine { gradient, offset } => {
                lp.iter().map(|&v| gradient.dot(mesh.nodes()[v]) + offset).collect()
            }
            BoundaryMode::Nodal(vals) => {
                if vals.len() != lp.len() {
                    return Err(FemError::DataLength {
                        expected: lp.len(),
                        got: vals.len(),
                    });
                }
                vals.clone()
            }
            BoundaryMode::Sampled(samples) => {
                let scale = samples.perimeter() / per;
                arc.iter().map(|&s| samples.eval(s * scale)).collect()
            }
        })
    }

    /// Values ready for use: Dirichlet data as is, Neumann data with zero
    /// weighted mean.
    pub fn values_on(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        let mut vals = self.raw_values(mesh)?;
        if self.kind == BoundaryKind::Neumann {
            let w = mesh.boundary_weights();
            let total: f64 = w.iter().sum();
            let mean = weighted_sum(w, &vals) / total;
            match self.mode {
                BoundaryMode::Trig { .. } | BoundaryMode::Affine { .. } => {
                    vals.iter_mut().for_each(|v| *v -= mean);
                }
                _ => {
                    let scale = w.iter().zip(&vals).map(|(a, b)| a * b.abs()).sum::<f64>() / total;
                    let tol = 1e-10 * scale.max(1e-300);
                    if mean.abs() > tol {
                        return Err(FemError::IncompatibleNeumann { mean, tol });
                    }
                }
            }
        }
        Ok(vals)
    }

    /// Stable textual key used by caches.
    pub fn cache_key(&self) -> String {
        let mut s = format!("{:?}:", self.kind);
        match &self.mode {
            BoundaryMode::Trig { index, phase } => {
                let _ = write!(s, "trig{index}{phase:?}");
            }
            BoundaryMode::Affine { gradient, offset } => {
                let _ = write!(s, "affine{:x}{:x}{:x}", gradient.x.to_bits(), gradient.y.to_bits(), offset.to_bits());
            }
            BoundaryMode::Nodal(v) => {
                let _ = write!(s, "nodal{}", v.len());
                for x in v {
                    let _ = write!(s, ",{:x}", x.to_bits());
                }
            }
            BoundaryMode::Sampled(b) => {
                let _ = write!(s, "sampled{}", b.len());
                for (a, x) in b.arclength.iter().zip(&b.values) {
                    let _ = write!(s, ",{:x}:{:x}", a.to_bits(), x.to_bits());
                }
            }
        }
        s
    }
}

fn weighted_sum(w: &[f64], v: &[f64]) -> f64 {
    w.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Weighted boundary inner product `sum_i w_i a_i b_i` over loop values.
pub fn boundary_inner(mesh: &Mesh, a: &[f64], b: &[f64]) -> f64 {
    mesh.boundary_weights()
        .iter()
        .zip(a.iter().zip(b))
        .map(|(w, (x, y))| w * x * y)
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldTag {
    pub kind: BoundaryKind,
    pub conductivity: ConductivitySpec,
}

/// Nodal P1 values on a shared mesh.
#[derive(Clone, Debug)]
pub struct Field {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
    tag: FieldTag,
}

impl Field {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>, tag: FieldTag) -> Result<Self> {
        if values.len() != mesh.n_nodes() {
            return Err(FemError::DataLength {
                expected: mesh.n_nodes(),
                got: values.len(),
            });
        }
        Ok(Field { mesh, values, tag })
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: Arc<Mesh>, tag: FieldTag, f: impl Fn(Vec2) -> f64) -> Self {
        let values = mesh.nodes().iter().map(|&p| f(p)).collect();
        Field { mesh, values, tag }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tag(&self) -> FieldTag {
        self.tag
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.tag.conductivity.sigma(self.mesh.regions()[t])
    }

    pub fn gradient(&self, t: usize) -> Vec2 {
        let tri = self.mesh.triangles()[t];
        let g = &self.mesh.geometry()[t];
        g.grads[0] * self.values[tri[0]] + g.grads[1] * self.values[tri[1]] + g.grads[2] * self.values[tri[2]]
    }

    /// Values at the boundary nodes in loop order.
    pub fn boundary_values(&self) -> Vec<f64> {
        self.mesh.boundary_loop().iter().map(|&v| self.values[v]).collect()
    }

    pub fn boundary_samples(&self) -> BoundarySamples {
        BoundarySamples {
            arclength: self.mesh.boundary_arclength().to_vec(),
            values: self.boundary_values(),
            perimeter: self.mesh.perimeter(),
        }
    }

    /// `FIELD <n>` followed by `<node> <value>` lines, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = format!("FIELD {}\n", self.values.len());
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(s, "{i} {v:.16e}");
        }
        s
    }
}

/// A symmetric linear system with optional eliminated Dirichlet rows.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Nodes whose rows and columns were replaced by identity.
    pub constrained: Vec<usize>,
}

pub fn assemble(mesh: &Mesh, conductivity: &ConductivitySpec) -> LinearSystem {
    let regions = mesh.regions();
    LinearSystem {
        matrix: mesh.stiffness(|t| conductivity.sigma(regions[t])),
        rhs: vec![0.0; mesh.n_nodes()],
        constrained: Vec::new(),
    }
}

impl LinearSystem {
    /// Symmetric elimination of `u = values` on the boundary loop.
    pub fn with_dirichlet(self, mesh: &Mesh, values: &[f64]) -> LinearSystem {
        let n = mesh.n_nodes();
        let mut fixed = vec![None; n];
        for (k, &v) in mesh.boundary_loop().iter().enumerate() {
            fixed[v] = Some(values[k]);
        }
        let mut rhs = self.rhs;
        let mut trip = Vec::with_capacity(self.matrix.nnz());
        for i in 0..n {
            if let Some(val) = fixed[i] {
                trip.push((i, i, 1.0));
                rhs[i] = val;
                continue;
            }
            for (j, a) in self.matrix.row(i) {
                match fixed[j] {
                    Some(val) => rhs[i] -= a * val,
                    None => trip.push((i, j, a)),
                }
            }
        }
        LinearSystem {
            matrix: CsrMatrix::from_triplets(n, n, trip),
            rhs,
            constrained: mesh.boundary_loop().to_vec(),
        }
    }
}

pub fn solve_dirichlet(mesh: &Arc<Mesh>, conductivity: &ConductivitySpec, data: &BoundaryData, cg: &CgSettings) -> Result<Field> {
    let values = data.values_on(mesh)?;
    solve_dirichlet_values(mesh, conductivity, &values, cg)
}

/// Dirichlet solve with boundary values given in loop order.
pub fn solve_dirichlet_values(mesh: &Arc<Mesh>, conductivity: &ConductivitySpec, values: &[f64], cg: &CgSettings) -> Result<Field> {
    if values.len() != mesh.boundary_loop().len() {
        return Err(FemError::DataLength {
            expected: mesh.boundary_loop().len(),
            got: values.len(),
        });
    }
    let sys = assemble(mesh, conductivity).with_dirichlet(mesh, values);
    let mut guess = vec![0.0; mesh.n_nodes()];
    for (k, &v) in mesh.boundary_loop().iter().enumerate() {
        guess[v] = values[k];
    }
    let out = conjugate_gradient(&sys.matrix, &sys.rhs, Some(&guess), cg)?;
    let mut x = out.x;
    // Boundary values are exact by construction; remove CG round-off there.
    for (k, &v) in mesh.boundary_loop().iter().enumerate() {
        x[v] = values[k];
    }
    Field::new(
        Arc::clone(mesh),
        x,
        FieldTag {
            kind: BoundaryKind::Dirichlet,
            conductivity: *conductivity,
        },
    )
}

pub fn solve_neumann(mesh: &Arc<Mesh>, conductivity: &ConductivitySpec, data: &BoundaryData, cg: &CgSettings) -> Result<Field> {
    let g = data.values_on(mesh)?;
    let mut load = vec![0.0; mesh.n_nodes()];
    for (k, &v) in mesh.boundary_loop().iter().enumerate() {
        load[v] = mesh.boundary_weights()[k] * g[k];
    }
    solve_neumann_load(mesh, conductivity, &load, cg)
}

/// Neumann solve with a nodal load vector (boundary flux functionals). The
/// load must sum to zero up to round-off; the solution has zero weighted
/// boundary mean.
pub fn solve_neumann_load(mesh: &Arc<Mesh>, conductivity: &ConductivitySpec, load: &[f64], cg: &CgSettings) -> Result<Field> {
    if load.len() != mesh.n_nodes() {
        return Err(FemError::DataLength {
            expected: mesh.n_nodes(),
            got: load.len(),
        });
    }
    let w = mesh.boundary_weights();
    let total_w: f64 = w.iter().sum();
    let sum: f64 = load.iter().sum();
    let scale: f64 = load.iter().map(|x| x.abs()).sum();
    let tol = 1e-9 * scale.max(1e-300);
    if sum.abs() > tol {
        return Err(FemError::IncompatibleNeumann { mean: sum / total_w, tol: tol / total_w });
    }
    // Lagrange multiplier of the mean constraint: removes the residual
    // incompatibility so the singular system is consistent.
    let lambda = sum / total_w;
    let mut rhs = load.to_vec();
    for (k, &v) in mesh.boundary_loop().iter().enumerate() {
        rhs[v] -= lambda * w[k];
    }
    let sys = assemble(mesh, conductivity);
    let out = conjugate_gradient(&sys.matrix, &rhs, None, cg)?;
    let mut x = out.x;
    let mean = mesh
        .boundary_loop()
        .iter()
        .zip(w)
        .map(|(&v, wk)| wk * x[v])
        .sum::<f64>()
        / total_w;
    x.iter_mut().for_each(|v| *v -= mean);
    Field::new(
        Arc::clone(mesh),
        x,
        FieldTag {
            kind: BoundaryKind::Neumann,
            conductivity: *conductivity,
        },
    )
}

/// `A u`: at boundary nodes these are the discrete normal-flux functionals.
pub fn residual_load(u: &Field) -> Vec<f64> {
    assemble(u.mesh(), &u.tag.conductivity).matrix.mul_vec(&u.values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Interior,
    Exterior,
}

/// Element gradient on the chosen side of each ring edge.
pub fn gradient_trace(u: &Field, ring: &InterfaceRing, side: Side) -> Vec<Vec2> {
    ring.edges
        .iter()
        .map(|e| {
            u.gradient(match side {
                Side::Interior => e.tri_in,
                Side::Exterior => e.tri_out,
            })
        })
        .collect()
}

/// Exterior gradient trace at each ring-edge midpoint with the normal
/// derivative recovered from the discrete flux.
///
/// The tangential part is the difference quotient along the edge, which is
/// shared by both adjacent elements. The normal part `q = du_e/dn` comes
/// from the residual of the exterior elements at interface nodes,
/// `-sum_ext grad u . grad phi_i ~ int q phi_i`, divided by the lumped
/// interface mass and averaged over the edge endpoints. This is markedly
/// more accurate than the one-sided element gradient.
pub fn recovered_exterior_trace(u: &Field, ring: &InterfaceRing) -> Result<Vec<Vec2>> {
    let mesh = u.mesh();
    let poly = mesh.inclusion().ok_or(MeshError::NoInclusion)?;
    let n = mesh.n_nodes();
    let mut flux = vec![0.0; n];
    let mut mass = vec![0.0; n];
    let mut on_ring = vec![false; n];
    for e in &ring.edges {
        for &v in &e.nodes {
            on_ring[v] = true;
            mass[v] += 0.5 * e.length();
        }
    }
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if mesh.regions()[t] != Region::Outside || !tri.iter().any(|&v| on_ring[v]) {
            continue;
        }
        let g = &mesh.geometry()[t];
        let gu = u.gradient(t);
        for i in 0..3 {
            if on_ring[tri[i]] {
                flux[tri[i]] -= g.area * gu.dot(g.grads[i]);
            }
        }
    }
    ring.edges
        .iter()
        .map(|e| {
            let frame = poly.edge_frame(e.poly_edge).map_err(MeshError::from)?;
            let [a, b] = e.nodes;
            let along = (e.end - e.start).dot(frame.tangent).signum();
            let dt = along * (u.values[b] - u.values[a]) / e.length();
            let q = 0.5 * (flux[a] / mass[a] + flux[b] / mass[b]);
            Ok(frame.tangent * dt + frame.normal * q)
        })
        .collect()
}

/// `int sigma grad u . grad(E g)` with `E g` the nodal vector `ext`.
pub fn pairing_with_extension(u: &Field, ext: &[f64]) -> Result<f64> {
    let mesh = u.mesh();
    if ext.len() != mesh.n_nodes() {
        return Err(FemError::DataLength {
            expected: mesh.n_nodes(),
            got: ext.len(),
        });
    }
    let mut acc = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if tri.iter().all(|&v| ext[v] == 0.0) {
            continue;
        }
        let g = &mesh.geometry()[t];
        let ge = g.grads[0] * ext[tri[0]] + g.grads[1] * ext[tri[1]] + g.grads[2] * ext[tri[2]];
        acc += u.sigma(t) * g.area * u.gradient(t).dot(ge);
    }
    Ok(acc)
}

/// `<Lambda f, g>` in variational form with the zero-interior extension of
/// `g` (loop-order values). Independent of the extension when `u` solves
/// the interior equations.
pub fn boundary_pairing(u: &Field, g: &[f64]) -> Result<f64> {
    let mesh = u.mesh();
    if g.len() != mesh.boundary_loop().len() {
        return Err(FemError::DataLength {
            expected: mesh.boundary_loop().len(),
            got: g.len(),
        });
    }
    let mut ext = vec![0.0; mesh.n_nodes()];
    for (k, &v) in mesh.boundary_loop().iter().enumerate() {
        ext[v] = g[k];
    }
    pairing_with_extension(u, &ext)
}

/// `int sigma |grad u|^2`.
pub fn energy(u: &Field) -> f64 {
    let mesh = u.mesh();
    (0..mesh.n_triangles())
        .map(|t| u.sigma(t) * mesh.geometry()[t].area * u.gradient(t).norm_sq())
        .sum()
}

/// Uniform bucket grid over triangle bounding boxes.
struct TriangleGrid {
    lo: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl TriangleGrid {
    fn new(mesh: &Mesh) -> Self {
        let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in mesh.nodes() {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let area = mesh.total_area();
        let cell = (2.0 * area / mesh.n_triangles() as f64).sqrt() * 2.0;
        let nx = (((hi.x - lo.x) / cell).ceil() as usize).max(1);
        let ny = (((hi.y - lo.y) / cell).ceil() as usize).max(1);
        let mut grid = TriangleGrid {
            lo,
            cell,
            nx,
            ny,
            buckets: vec![Vec::new(); nx * ny],
        };
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let (a, b) = bbox(tri.iter().map(|&v| mesh.nodes()[v]));
            let (i0, j0, i1, j1) = grid.range(a, b);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    grid.buckets[j * nx + i].push(t as u32);
                }
            }
        }
        grid
    }

    fn range(&self, a: Vec2, b: Vec2) -> (usize, usize, usize, usize) {
        let f = |x: f64, n: usize| ((x / self.cell).floor().max(0.0) as usize).min(n - 1);
        (
            f(a.x - self.lo.x, self.nx),
            f(a.y - self.lo.y, self.ny),
            f(b.x - self.lo.x, self.nx),
            f(b.y - self.lo.y, self.ny),
        )
    }
}

fn bbox(points: impl Iterator<Item = Vec2>) -> (Vec2, Vec2) {
    points.fold(
        (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(lo, hi), p| (Vec2::new(lo.x.min(p.x), lo.y.min(p.y)), Vec2::new(hi.x.max(p.x), hi.y.max(p.y))),
    )
}

fn same_triangulation(a: &Mesh, b: &Mesh) -> bool {
    a.triangles() == b.triangles() && a.nodes() == b.nodes()
}

/// `|u - v|_{H^1}` for fields on possibly different meshes of the same
/// domain, integrated exactly over the common refinement of the two
/// triangulations.
pub fn h1_seminorm_diff(u: &Field, v: &Field) -> Result<f64> {
    let (mu, mv) = (u.mesh(), v.mesh());
    if mu.domain() != mv.domain() {
        return Err(FemError::DomainMismatch);
    }
    if Arc::ptr_eq(mu, mv) || same_triangulation(mu, mv) {
        let s: f64 = (0..mu.n_triangles())
            .map(|t| mu.geometry()[t].area * (u.gradient(t) - v.gradient(t)).norm_sq())
            .sum();
        return Ok(s.sqrt());
    }
    let grid = TriangleGrid::new(mv);
    let mut stamp = vec![usize::MAX; mv.n_triangles()];
    let mut acc = 0.0;
    let mut covered = 0.0;
    for (t, tri) in mu.triangles().iter().enumerate() {
        let pts: Vec<Vec2> = tri.iter().map(|&i| mu.nodes()[i]).collect();
        let (a, b) = bbox(pts.iter().copied());
        let (i0, j0, i1, j1) = grid.range(a, b);
        let gu = u.gradient(t);
        for j in j0..=j1 {
            for i in i0..=i1 {
                for &s in &grid.buckets[j * grid.nx + i] {
                    let s = s as usize;
                    if stamp[s] == t {
                        continue;
                    }
                    stamp[s] = t;
                    let other = mv.triangles()[s];
                    // Clip polygons are clockwise.
                    let clip = [mv.nodes()[other[0]], mv.nodes()[other[2]], mv.nodes()[other[1]]];
                    let poly = clip_convex(&pts, &clip);
                    if poly.len() < 3 {
                        continue;
                    }
                    let area = signed_area(&poly).abs();
                    covered += area;
                    acc += area * (gu - v.gradient(s)).norm_sq();
                }
            }
        }
    }
    let expected = mu.total_area();
    if (covered - expected).abs() > 1e-9 * expected {
        return Err(FemError::Overlay { covered, expected });
    }
    Ok(acc.sqrt())
}

/// `||u - v||_{L^2(boundary)}` with trapezoidal quadrature on the union of
/// both boundary node sets.
pub fn boundary_l2_diff(u: &Field, v: &Field) -> Result<f64> {
    let (mu, mv) = (u.mesh(), v.mesh());
    if mu.domain() != mv.domain() {
        return Err(FemError::DomainMismatch);
    }
    let su = u.boundary_samples();
    let sv = v.boundary_samples();
    if su.arclength == sv.arclength {
        let d: Vec<f64> = su.values.iter().zip(&sv.values).map(|(a, b)| a - b).collect();
        return Ok(boundary_inner(mu, &d, &d).sqrt());
    }
    let per = mu.perimeter();
    let mut breaks: Vec<f64> = su.arclength.iter().chain(sv.arclength.iter()).copied().collect();
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * per);
    let d: Vec<f64> = breaks.iter().map(|&s| su.eval(s) - sv.eval(s)).collect();
    let n = breaks.len();
    let mut acc = 0.0;
    for k in 0..n {
        let len = if k + 1 < n { breaks[k + 1] - breaks[k] } else { per - breaks[k] + breaks[0] };
        let dn = d[(k + 1) % n];
        acc += 0.5 * len * (d[k] * d[k] + dn * dn);
    }
    Ok(acc.sqrt())
}
