//! Discrete Dirichlet-to-Neumann and Neumann-to-Dirichlet operators and the
//! scalar boundary functionals built from them.
//!
//! Matrices are Galerkin matrices on a boundary basis `b_1..b_m`:
//! `D_ij = <Lambda b_j, b_i>` and `N_ij = <b_i, N b_j>`, with the lumped
//! boundary mass as inner product. With Gram matrix `G`, the discrete
//! operators in coefficient form are `G^-1 D` and `G^-1 N`, so on a basis
//! spanning the whole mean-zero trace space `G^-1 N G^-1 D = I`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use thiserror::Error;

use crate::fem::{
    boundary_inner, boundary_pairing, solve_dirichlet, solve_dirichlet_values, solve_neumann, solve_neumann_load,
    BoundaryData, BoundaryKind, BoundaryMode, ConductivitySpec, FemError, Field, TrigPhase,
};
use crate::geometry::{DomainSpec, Polygon, Vec2};
use crate::linalg::{power_iteration, CgSettings, DenseMatrix, SolverError};
use crate::mesh::{GradingSpec, Mesh, MeshCache, MeshError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapsError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("the Neumann-to-Dirichlet matrix needs a mean-zero basis")]
    NotMeanZero,
    #[error("empty basis")]
    EmptyBasis,
}

pub type Result<T> = std::result::Result<T, MapsError>;

/// Boundary functions used as trial and test functions.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryBasis {
    elements: Vec<BoundaryMode>,
    mean_zero: bool,
}

impl BoundaryBasis {
    /// `cos(n theta), sin(n theta)` for `n = 1..=n_max`, optionally preceded
    /// by the constant. With `mean_zero` the modes are projected to zero
    /// weighted mean on each mesh and the constant is not allowed.
    pub fn trig(n_max: usize, with_constant: bool, mean_zero: bool) -> Self {
        let mut elements = Vec::with_capacity(2 * n_max + 1);
        if with_constant && !mean_zero {
            elements.push(BoundaryMode::Affine {
                gradient: Vec2::ZERO,
                offset: 1.0,
            });
        }
        for index in 1..=n_max {
            elements.push(BoundaryMode::Trig {
                index,
                phase: TrigPhase::Cos,
            });
            elements.push(BoundaryMode::Trig {
                index,
                phase: TrigPhase::Sin,
            });
        }
        BoundaryBasis { elements, mean_zero }
    }

    /// Hat functions at the boundary nodes of `mesh`. The mean-zero variant
    /// subtracts the weighted mean of each hat and drops the last one, which
    /// leaves a basis of the whole mean-zero trace space.
    pub fn nodal(mesh: &Mesh, mean_zero: bool) -> Self {
        let n = mesh.boundary_loop().len();
        let w = mesh.boundary_weights();
        let total: f64 = w.iter().sum();
        let count = if mean_zero { n - 1 } else { n };
        let elements = (0..count)
            .map(|i| {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                if mean_zero {
                    let mean = w[i] / total;
                    v.iter_mut().for_each(|x| *x -= mean);
                }
                BoundaryMode::Nodal(v)
            })
            .collect();
        BoundaryBasis { elements, mean_zero }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn is_mean_zero(&self) -> bool {
        self.mean_zero
    }

    pub fn elements(&self) -> &[BoundaryMode] {
        &self.elements
    }

    /// Element values on the boundary loop of `mesh`.
    pub fn values_on(&self, mesh: &Mesh) -> Result<Vec<Vec<f64>>> {
        let kind = if self.mean_zero { BoundaryKind::Neumann } else { BoundaryKind::Dirichlet };
        self.elements
            .iter()
            .map(|m| {
                BoundaryData {
                    kind,
                    mode: m.clone(),
                }
                .values_on(mesh)
                .map_err(MapsError::from)
            })
            .collect()
    }

    /// `G_ij = <b_i, b_j>` in the lumped boundary inner product.
    pub fn gram(&self, mesh: &Mesh) -> Result<DenseMatrix> {
        let vals = self.values_on(mesh)?;
        let m = vals.len();
        let mut g = DenseMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = boundary_inner(mesh, &vals[i], &vals[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Ok(g)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorTag {
    Dtn,
    Ntd,
    DtnDerivative,
}

impl OperatorTag {
    pub fn name(self) -> &'static str {
        match self {
            OperatorTag::Dtn => "dtn",
            OperatorTag::Ntd => "ntd",
            OperatorTag::DtnDerivative => "dtn_derivative",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    pub tag: OperatorTag,
    pub matrix: DenseMatrix,
}

impl OperatorMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.rows
    }

    /// `max |M - M^T| / max |M|`, zero for the zero matrix.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.matrix.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        self.matrix.sub(&self.matrix.transpose()).max_abs() / scale
    }

    /// CSV with header `i,j,value`, row-major.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,value\n");
        for i in 0..self.matrix.rows {
            for j in 0..self.matrix.cols {
                let _ = writeln!(s, "{i},{j},{:.16e}", self.matrix[(i, j)]);
            }
        }
        s
    }
}

/// `D_ij = <Lambda b_j, b_i>`. Columns are solved concurrently.
pub fn dtn_matrix(mesh: &Arc<Mesh>, conductivity: &ConductivitySpec, basis: &BoundaryBasis, cg: &CgSettings) -> Result<OperatorMatrix> {
    if basis.is_empty() {
        return Err(MapsError::EmptyBasis);
    }
    let vals = basis.values_on(mesh)?;
    let cols: Vec<Vec<f64>> = vals
        .par_iter()
        .map(|bj| {
            let u = solve_dirichlet_values(mesh, conductivity, bj, cg)?;
            vals.iter().map(|bi| boundary_pairing(&u, bi)).collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<_, FemError>>()?;
    Ok(OperatorMatrix {
        tag: OperatorTag::Dtn,
        matrix: from_columns(&cols),
    })
}

/// `N_ij = <b_i, N b_j>` on a mean-zero basis.
pub fn ntd_matrix(mesh: &Arc<Mesh>, conductivity: &ConductivitySpec, basis: &BoundaryBasis, cg: &CgSettings) -> Result<OperatorMatrix> {
    if !basis.is_mean_zero() {
        return Err(MapsError::NotMeanZero);
    }
    if basis.is_empty() {
        return Err(MapsError::EmptyBasis);
    }
    let vals = basis.values_on(mesh)?;
    let loop_nodes = mesh.boundary_loop();
    let w = mesh.boundary_weights();
    let cols: Vec<Vec<f64>> = vals
        .par_iter()
        .map(|bj| {
            let mut load = vec![0.0; mesh.n_nodes()];
            for (k, &v) in loop_nodes.iter().enumerate() {
                load[v] = w[k] * bj[k];
            }
            let u = solve_neumann_load(mesh, conductivity, &load, cg)?;
            let ub = u.boundary_values();
            Ok(vals.iter().map(|bi| boundary_inner(mesh, bi, &ub)).collect())
        })
        .collect::<std::result::Result<_, FemError>>()?;
    Ok(OperatorMatrix {
        tag: OperatorTag::Ntd,
        matrix: from_columns(&cols),
    })
}

fn from_columns(cols: &[Vec<f64>]) -> DenseMatrix {
    let m = cols.len();
    let mut a = DenseMatrix::zeros(m, m);
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    a
}

/// `max |G^-1 N G^-1 D - I|`.
pub fn galerkin_inverse_error(dtn: &OperatorMatrix, ntd: &OperatorMatrix, gram: &DenseMatrix) -> Result<f64> {
    let gd = gram.spd_solve(&dtn.matrix)?;
    let gn = gram.spd_solve(&ntd.matrix)?;
    let p = gn.matmul(&gd);
    Ok(p.sub(&DenseMatrix::identity(p.rows)).max_abs())
}

/// Spectral norm of the operator represented by the Galerkin matrix `e`:
/// `|| R^-1 E R^-T ||_2` with `G = R R^T`, by power iteration on `K^T K`.
pub fn weighted_operator_norm(e: &DenseMatrix, gram: &DenseMatrix) -> Result<f64> {
    let l = gram.cholesky()?;
    let li = l.lower_inverse();
    let k = li.matmul(e).matmul(&li.transpose());
    let ktk = k.transpose().matmul(&k);
    Ok(power_iteration(&ktk, 1e-6, 10_000).sqrt())
}

/// Problem description for the functionals `G = <Lambda f, g>` (Dirichlet
/// `f`) and `G~ = <g, N f>` (Neumann `f`).
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalSpec {
    pub domain: DomainSpec,
    pub conductivity: ConductivitySpec,
    pub f: BoundaryData,
    pub g: BoundaryData,
    pub grading: GradingSpec,
    pub cg: CgSettings,
}

/// Solves for `f` on `mesh` and pairs with `g`.
pub fn functional_on_mesh(
    mesh: &Arc<Mesh>,
    conductivity: &ConductivitySpec,
    f: &BoundaryData,
    g: &BoundaryData,
    cg: &CgSettings,
) -> Result<(f64, Field)> {
    match f.kind {
        BoundaryKind::Dirichlet => {
            let u = solve_dirichlet(mesh, conductivity, f, cg)?;
            let gv = g.values_on(mesh)?;
            Ok((boundary_pairing(&u, &gv)?, u))
        }
        BoundaryKind::Neumann => {
            let u = solve_neumann(mesh, conductivity, f, cg)?;
            let gv = g.values_on(mesh)?;
            Ok((boundary_inner(mesh, &gv, &u.boundary_values()), u))
        }
    }
}

/// Functional evaluation with meshes and values cached per polygon.
pub struct FunctionalEvaluator {
    spec: FunctionalSpec,
    meshes: Mutex<MeshCache>,
    values: Mutex<HashMap<Vec<i64>, f64>>,
}

pub(crate) fn polygon_key(poly: &Polygon) -> Vec<i64> {
    poly.vertices()
        .iter()
        .flat_map(|p| [(p.x * 1e12).round() as i64, (p.y * 1e12).round() as i64])
        .collect()
}

impl FunctionalEvaluator {
    pub fn new(spec: FunctionalSpec) -> Self {
        FunctionalEvaluator {
            spec,
            meshes: Mutex::new(MeshCache::new()),
            values: Mutex::new(HashMap::new()),
        }
    }

    pub fn spec(&self) -> &FunctionalSpec {
        &self.spec
    }

    pub fn mesh(&self, poly: &Polygon) -> Result<Arc<Mesh>> {
        let mut cache = self.meshes.lock().expect("mesh cache poisoned");
        Ok(cache.get_or_generate(&self.spec.domain, std::slice::from_ref(poly), &self.spec.grading)?)
    }

    pub fn evaluate(&self, poly: &Polygon) -> Result<f64> {
        let key = polygon_key(poly);
        if let Some(v) = self.values.lock().expect("value cache poisoned").get(&key) {
            return Ok(*v);
        }
        let mesh = self.mesh(poly)?;
        let (value, _) = self.evaluate_on(&mesh)?;
        self.values.lock().expect("value cache poisoned").insert(key, value);
        Ok(value)
    }

    pub fn evaluate_on(&self, mesh: &Arc<Mesh>) -> Result<(f64, Field)> {
        functional_on_mesh(mesh, &self.spec.conductivity, &self.spec.f, &self.spec.g, &self.spec.cg)
    }
}
