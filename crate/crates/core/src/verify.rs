//! Numerical checks of the derivative formulas and of the convergence rates
//! they rest on.
//!
//! Perturbed configurations `P^t = P + t V` are discretized by morphing the
//! reference mesh onto `P^t` (see [`Mesh::morph`]), so every sample shares
//! the reference topology and differences in `t` are not swamped by
//! remeshing noise. The noise floor of a rate sample is estimated by
//! repeating the whole computation on a copy of the reference mesh whose
//! free nodes are jittered, and taking the difference.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::fem::{
    boundary_l2_diff, h1_seminorm_diff, residual_load, solve_dirichlet, solve_neumann_load,
    BoundaryData, BoundaryKind, BoundarySamples, ConductivitySpec, FemError, Field,
};
use crate::geometry::{
    admissible_step_bound, perturb, symmetric_difference_area, validate_constraints, ConstraintParams, DomainSpec,
    GeometryError, Polygon, Vec2, VelocityField,
};
use crate::linalg::{CgSettings, DenseMatrix};
use crate::maps::{dtn_matrix, functional_on_mesh, weighted_operator_norm, BoundaryBasis, MapsError, OperatorMatrix, OperatorTag};
use crate::mesh::{generate_mesh, interface_ring, GradingSpec, Mesh, MeshError, MorphDirection};
use crate::shapecalc::{
    adjoint_state, misfit_gradient, misfit_of, neumann_gradient, per_vertex_gradient, shape_derivative, traces,
    ShapeError, ShapeGradient,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Maps(#[from] MapsError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("a power-law fit needs at least 4 positive samples, got {0}")]
    TooFewSamples(usize),
    #[error("innermost annulus holds {found} elements, at least 20 are needed; refine to an element size of about {required_h_min:.3e} at the vertex")]
    Resolution { found: usize, required_h_min: f64 },
    #[error("invalid study setup: {0}")]
    Setup(String),
}

pub type Result<T> = std::result::Result<T, VerifyError>;

/// Least-squares fit of `log e = slope * log t + intercept`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateFit {
    pub samples: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    pub t_range: (f64, f64),
}

pub fn fit_power_law(samples: &[(f64, f64)]) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .filter(|&(t, e)| t > 0.0 && e > 0.0 && t.is_finite() && e.is_finite())
        .collect();
    if pts.len() < 4 || pts.len() != samples.len() {
        return Err(VerifyError::TooFewSamples(pts.len()));
    }
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(VerifyError::TooFewSamples(1));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs.iter().zip(&ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum::<f64>() / n).sqrt();
    let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    Ok(RateFit {
        samples: pts,
        slope,
        intercept,
        residual,
        t_range: (lo, hi),
    })
}

/// Geometric sequence of 8 step sizes from `1e-1` with ratio `1/2`.
pub fn default_t_list() -> Vec<f64> {
    (0..8).map(|j| 0.1 * 0.5f64.powi(j)).collect()
}

/// `count` geometric steps from `hi` down to `lo`.
pub fn geometric_t_list(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    let r = (lo / hi).powf(1.0 / (count.max(2) - 1) as f64);
    (0..count).map(|j| hi * r.powi(j as i32)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateSample {
    pub t: f64,
    pub value: f64,
    /// `|value - value on the jittered reference|`.
    pub floor: f64,
    pub used: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RateStatus {
    Fitted,
    Degenerate(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateStudy {
    pub name: String,
    pub samples: Vec<RateSample>,
    pub fit: Option<RateFit>,
    pub status: RateStatus,
    pub warnings: Vec<String>,
}

impl RateStudy {
    pub fn slope(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.slope)
    }

    pub fn n_used(&self) -> usize {
        self.samples.iter().filter(|s| s.used).count()
    }

    /// `e(t)` decreases with `t` over the sampled range.
    pub fn is_monotone(&self) -> bool {
        let mut s: Vec<&RateSample> = self.samples.iter().collect();
        s.sort_by(|a, b| a.t.total_cmp(&b.t));
        s.windows(2).all(|w| w[0].value <= w[1].value)
    }

    /// `t,value` rows, then the summary header `slope,residual,n_used` and
    /// its values (`nan` for a degenerate study).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,value\n");
        for r in &self.samples {
            let _ = writeln!(s, "{:.16e},{:.16e}", r.t, r.value);
        }
        s.push_str("slope,residual,n_used\n");
        match &self.fit {
            Some(f) => {
                let _ = writeln!(s, "{:.16e},{:.16e},{}", f.slope, f.residual, self.n_used());
            }
            None => {
                let _ = writeln!(s, "nan,nan,{}", self.n_used());
            }
        }
        s
    }
}

/// Reference configuration shared by all studies.
#[derive(Clone, Debug, PartialEq)]
pub struct StudySetup {
    pub domain: DomainSpec,
    pub polygon: Polygon,
    pub conductivity: ConductivitySpec,
    pub f: BoundaryData,
    pub g: BoundaryData,
    pub grading: GradingSpec,
    pub cg: CgSettings,
    pub constraints: ConstraintParams,
    /// Jitter of free nodes for the noise floor, as a fraction of the
    /// shortest incident edge.
    pub jitter: f64,
}

impl StudySetup {
    pub fn new(domain: DomainSpec, polygon: Polygon, conductivity: ConductivitySpec, f: BoundaryData, g: BoundaryData, grading: GradingSpec) -> Self {
        StudySetup {
            domain,
            polygon,
            conductivity,
            f,
            g,
            grading,
            cg: CgSettings::default(),
            constraints: ConstraintParams::default(),
            jitter: 0.15,
        }
    }

    pub fn reference_mesh(&self) -> Result<Arc<Mesh>> {
        Ok(Arc::new(generate_mesh(&self.domain, std::slice::from_ref(&self.polygon), &self.grading)?))
    }

    /// Reference mesh and its jittered copy.
    pub fn mesh_pair(&self) -> Result<[Arc<Mesh>; 2]> {
        let m = self.reference_mesh()?;
        let j = Arc::new(m.jittered(self.jitter)?);
        Ok([m, j])
    }
}

/// Polygon at step `t` if it is admissible, otherwise the reason.
fn admissible_step(setup: &StudySetup, v: &VelocityField, t: f64) -> std::result::Result<Polygon, String> {
    let bound = admissible_step_bound(v, setup.constraints.margin);
    if t.abs() >= bound {
        return Err(format!("t = {t:e} exceeds the step bound {bound:e}"));
    }
    let p = perturb(&setup.polygon, v, t).map_err(|e| format!("t = {t:e}: {e}"))?;
    let report = validate_constraints(&p, &setup.constraints, &setup.domain).map_err(|e| format!("t = {t:e}: {e}"))?;
    if !report.is_admissible() {
        let kinds: Vec<String> = report.failures().map(|c| format!("{:?}", c.kind)).collect();
        return Err(format!("t = {t:e}: constraints violated: {}", kinds.join(", ")));
    }
    Ok(p)
}

/// Morph direction carrying `reference` along `V`.
pub fn morph_along<'a>(reference: &'a Mesh, v: &VelocityField, cg: &CgSettings) -> Result<MorphDirection<'a>> {
    Ok(reference.morph_direction(v.as_slice(), cg)?)
}

/// Runs `eval` at every admissible `t` on the reference mesh and on its
/// jittered copy, then fits the samples that sit clearly above the floor.
fn run_study<C: Sync>(
    name: &str,
    setup: &StudySetup,
    v: &VelocityField,
    t_list: &[f64],
    prepare: impl Fn(&Arc<Mesh>) -> Result<C> + Sync,
    eval: impl Fn(&C, &Arc<Mesh>, f64) -> Result<f64> + Sync,
) -> Result<RateStudy> {
    if setup.conductivity.k() == 1.0 {
        return Ok(RateStudy {
            name: name.into(),
            samples: t_list
                .iter()
                .map(|&t| RateSample {
                    t,
                    value: 0.0,
                    floor: 0.0,
                    used: false,
                })
                .collect(),
            fit: None,
            status: RateStatus::Degenerate("k = 1: the perturbation has no effect".into()),
            warnings: Vec::new(),
        });
    }
    let meshes = setup.mesh_pair()?;
    let ctx: Vec<C> = meshes.iter().map(&prepare).collect::<Result<_>>()?;
    let dirs = [morph_along(&meshes[0], v, &setup.cg)?, morph_along(&meshes[1], v, &setup.cg)?];
    let mut warnings = Vec::new();
    let mut steps = Vec::new();
    for &t in t_list {
        if t <= 0.0 {
            warnings.push(format!("t = {t:e} is not positive; skipped"));
            continue;
        }
        match admissible_step(setup, v, t) {
            Ok(_) => steps.push(t),
            Err(msg) => {
                log::warn!("{name}: {msg}; skipped");
                warnings.push(format!("{msg}; skipped"));
            }
        }
    }
    let values: Vec<Result<(f64, f64)>> = steps
        .par_iter()
        .map(|&t| {
            let mut out = [0.0; 2];
            for k in 0..2 {
                let mt = Arc::new(dirs[k].at(t)?);
                out[k] = eval(&ctx[k], &mt, t)?;
            }
            Ok((out[0], out[1]))
        })
        .collect();
    let mut samples = Vec::with_capacity(steps.len());
    for (&t, r) in steps.iter().zip(values) {
        match r {
            Ok((value, jittered)) => {
                let floor = (value - jittered).abs();
                samples.push(RateSample {
                    t,
                    value,
                    floor,
                    used: value > 10.0 * floor && value > 0.0,
                });
            }
            Err(VerifyError::Mesh(MeshError::Inverted(tri))) => {
                warnings.push(format!("t = {t:e}: morph inverts triangle {tri}; skipped"));
            }
            Err(e) => return Err(e),
        }
    }
    let used: Vec<(f64, f64)> = samples.iter().filter(|s| s.used).map(|s| (s.t, s.value)).collect();
    let (fit, status) = match fit_power_law(&used) {
        Ok(f) => (Some(f), RateStatus::Fitted),
        Err(_) => (
            None,
            RateStatus::Degenerate(format!("{} of {} samples above ten times the noise floor", used.len(), samples.len())),
        ),
    };
    let study = RateStudy {
        name: name.into(),
        samples,
        fit,
        status,
        warnings,
    };
    if !study.is_monotone() {
        log::warn!("{name}: e(t) is not monotone in t");
    }
    Ok(study)
}

/// Value, fields and derivative of `G` on one mesh.
pub struct DerivativeState {
    pub value: f64,
    pub u: Field,
    pub v: Field,
    pub gradient: ShapeGradient,
}

/// Solves for `f` and `g` on `mesh` and evaluates the formula gradient.
/// For Dirichlet data this is `G'`; for Neumann data `G~'`.
pub fn derivative_state(setup: &StudySetup, mesh: &Arc<Mesh>) -> Result<DerivativeState> {
    let c = &setup.conductivity;
    let (value, u) = functional_on_mesh(mesh, c, &setup.f, &setup.g, &setup.cg)?;
    let v = match setup.f.kind {
        BoundaryKind::Dirichlet => solve_dirichlet(mesh, c, &setup.g, &setup.cg)?,
        BoundaryKind::Neumann => crate::fem::solve_neumann(mesh, c, &setup.g, &setup.cg)?,
    };
    let ring = interface_ring(mesh)?;
    let poly = mesh.inclusion().ok_or(MeshError::NoInclusion)?;
    let (tu, tv) = (traces(&u, &ring)?, traces(&v, &ring)?);
    let gradient = match setup.f.kind {
        BoundaryKind::Dirichlet => per_vertex_gradient(poly, c, &ring, &tu.exterior, &tv.exterior)?,
        BoundaryKind::Neumann => neumann_gradient(poly, c, &ring, &tu.exterior, &tv.exterior)?,
    };
    Ok(DerivativeState { value, u, v, gradient })
}

/// `e(t) = |G(t) - G(0) - t G'(0)|`.
pub fn derivative_rate_study(setup: &StudySetup, v: &VelocityField, t_list: &[f64]) -> Result<RateStudy> {
    run_study(
        "derivative remainder",
        setup,
        v,
        t_list,
        |m| {
            let s = derivative_state(setup, m)?;
            Ok((s.value, s.gradient.pair(v)))
        },
        |&(g0, d0), mt, t| {
            let (gt, _) = functional_on_mesh(mt, &setup.conductivity, &setup.f, &setup.g, &setup.cg)?;
            Ok((gt - g0 - t * d0).abs())
        },
    )
}

fn forward(setup: &StudySetup, mesh: &Arc<Mesh>) -> Result<Field> {
    Ok(functional_on_mesh(mesh, &setup.conductivity, &setup.f, &setup.g, &setup.cg)?.1)
}

/// `e(t) = |u_t - u_0|_{H^1}` for the solution with data `f`.
pub fn energy_rate_study(setup: &StudySetup, v: &VelocityField, t_list: &[f64]) -> Result<RateStudy> {
    run_study(
        "energy difference",
        setup,
        v,
        t_list,
        |m| forward(setup, m),
        |u0, mt, _| Ok(h1_seminorm_diff(&forward(setup, mt)?, u0)?),
    )
}

/// `e(t) = ||u_t - u_0||_{L^2(boundary)}` for Neumann data `f`.
pub fn boundary_rate_study(setup: &StudySetup, v: &VelocityField, t_list: &[f64]) -> Result<RateStudy> {
    if setup.f.kind != BoundaryKind::Neumann {
        return Err(VerifyError::Setup("the boundary-trace study needs Neumann data".into()));
    }
    run_study(
        "boundary trace difference",
        setup,
        v,
        t_list,
        |m| forward(setup, m),
        |u0, mt, _| Ok(boundary_l2_diff(&forward(setup, mt)?, u0)?),
    )
}

/// `|T^t symmetric-difference T^0|` against `t`; purely geometric.
pub fn symmetric_difference_study(poly: &Polygon, v: &VelocityField, t_list: &[f64]) -> Result<RateFit> {
    let samples: Vec<(f64, f64)> = t_list
        .iter()
        .map(|&t| Ok((t, symmetric_difference_area(poly, &perturb(poly, v, t)?))))
        .collect::<Result<_>>()?;
    fit_power_law(&samples)
}

/// Operator-level study: `|| Lambda_t - Lambda_0 - t L ||` with `L` the
/// formula derivative assembled over basis pairs.
pub struct OperatorStudy {
    pub study: RateStudy,
    pub derivative: OperatorMatrix,
}

/// `L_ij` = formula derivative for the pair `(b_j, b_i)`.
pub fn operator_derivative(mesh: &Arc<Mesh>, setup: &StudySetup, basis: &BoundaryBasis, v: &VelocityField) -> Result<OperatorMatrix> {
    let vals = basis.values_on(mesh)?;
    let ring = interface_ring(mesh)?;
    let poly = mesh.inclusion().ok_or(MeshError::NoInclusion)?;
    let tr: Vec<Vec<Vec2>> = vals
        .par_iter()
        .map(|b| {
            let u = crate::fem::solve_dirichlet_values(mesh, &setup.conductivity, b, &setup.cg)?;
            Ok(traces(&u, &ring)?.exterior)
        })
        .collect::<Result<_>>()?;
    let m = vals.len();
    let mut l = DenseMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            l[(i, j)] = shape_derivative(poly, &setup.conductivity, &ring, &tr[j], &tr[i], v)?;
        }
    }
    Ok(OperatorMatrix {
        tag: OperatorTag::DtnDerivative,
        matrix: l,
    })
}

pub fn operator_derivative_check(setup: &StudySetup, v: &VelocityField, t_list: &[f64], basis: &BoundaryBasis) -> Result<OperatorStudy> {
    let reference = setup.reference_mesh()?;
    let derivative = operator_derivative(&reference, setup, basis, v)?;
    let study = run_study(
        "operator remainder",
        setup,
        v,
        t_list,
        |m| {
            let d0 = dtn_matrix(m, &setup.conductivity, basis, &setup.cg)?;
            let l = operator_derivative(m, setup, basis, v)?;
            Ok((d0, l, basis.gram(m)?))
        },
        |(d0, l, gram), mt, t| {
            let dt = dtn_matrix(mt, &setup.conductivity, basis, &setup.cg)?;
            let rem = dt.matrix.sub(&d0.matrix).sub(&l.matrix.scaled(t));
            Ok(weighted_operator_norm(&rem, gram)?)
        },
    )?;
    Ok(OperatorStudy { study, derivative })
}

/// Central differences at `h, h/2, h/4` and their Richardson extrapolation.
#[derive(Clone, Debug, PartialEq)]
pub struct FdEstimate {
    pub steps: Vec<f64>,
    pub central: Vec<f64>,
    pub extrapolated: f64,
}

/// Steps must halve: the `O(h^2)` and `O(h^4)` terms of the central
/// difference are eliminated in turn.
pub fn richardson_central(f: impl Fn(f64) -> Result<f64> + Sync, steps: [f64; 3]) -> Result<FdEstimate> {
    if !(steps[0] > 0.0 && (steps[1] * 2.0 - steps[0]).abs() <= 1e-12 * steps[0] && (steps[2] * 2.0 - steps[1]).abs() <= 1e-12 * steps[0]) {
        return Err(VerifyError::Setup("Richardson steps must be positive and halve".into()));
    }
    let evals: Vec<f64> = [steps[0], -steps[0], steps[1], -steps[1], steps[2], -steps[2]]
        .par_iter()
        .map(|&t| f(t))
        .collect::<Result<_>>()?;
    let central: Vec<f64> = (0..3).map(|i| (evals[2 * i] - evals[2 * i + 1]) / (2.0 * steps[i])).collect();
    let r1 = (4.0 * central[1] - central[0]) / 3.0;
    let r2 = (4.0 * central[2] - central[1]) / 3.0;
    Ok(FdEstimate {
        steps: steps.to_vec(),
        central,
        extrapolated: (16.0 * r2 - r1) / 15.0,
    })
}

pub const DEFAULT_FD_STEPS: [f64; 3] = [4e-3, 2e-3, 1e-3];

/// Finite-difference derivative of the setup's functional along `V`.
pub fn fd_shape_derivative(setup: &StudySetup, reference: &Arc<Mesh>, v: &VelocityField, steps: [f64; 3]) -> Result<FdEstimate> {
    let dir = morph_along(reference, v, &setup.cg)?;
    richardson_central(
        |t| {
            let mt = Arc::new(dir.at(t)?);
            Ok(functional_on_mesh(&mt, &setup.conductivity, &setup.f, &setup.g, &setup.cg)?.0)
        },
        steps,
    )
}

/// Formula derivative next to its finite-difference oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeCheck {
    pub formula: f64,
    pub fd: FdEstimate,
}

impl DerivativeCheck {
    pub fn relative_error(&self) -> f64 {
        (self.formula - self.fd.extrapolated).abs() / self.fd.extrapolated.abs()
    }
}

pub fn derivative_check(setup: &StudySetup, v: &VelocityField, steps: [f64; 3]) -> Result<DerivativeCheck> {
    let reference = setup.reference_mesh()?;
    let state = derivative_state(setup, &reference)?;
    Ok(DerivativeCheck {
        formula: state.gradient.pair(v),
        fd: fd_shape_derivative(setup, &reference, v, steps)?,
    })
}

/// Dirichlet-side and Neumann-side derivatives for matched data: the
/// Neumann data are the discrete fluxes of the Dirichlet solutions, so both
/// problems share their fields up to constants.
#[derive(Clone, Debug, PartialEq)]
pub struct NeumannConsistency {
    pub dirichlet: f64,
    pub neumann: f64,
    pub neumann_fd: FdEstimate,
}

pub fn neumann_consistency(setup: &StudySetup, v: &VelocityField, steps: [f64; 3]) -> Result<NeumannConsistency> {
    if setup.f.kind != BoundaryKind::Dirichlet || setup.g.kind != BoundaryKind::Dirichlet {
        return Err(VerifyError::Setup("matched data start from Dirichlet f and g".into()));
    }
    let mesh = setup.reference_mesh()?;
    let c = &setup.conductivity;
    let dirichlet = derivative_state(setup, &mesh)?;
    // Boundary rows of `A u`; the solver residual leaves a tiny nonzero
    // total, removed with the boundary weights.
    let flux = |u: &Field| -> Vec<f64> {
        let r = residual_load(u);
        let w = mesh.boundary_weights();
        let total: f64 = mesh.boundary_loop().iter().map(|&b| r[b]).sum();
        let wsum: f64 = w.iter().sum();
        let mut load = vec![0.0; r.len()];
        for (k, &b) in mesh.boundary_loop().iter().enumerate() {
            load[b] = r[b] - total * w[k] / wsum;
        }
        load
    };
    let (lf, lg) = (flux(&dirichlet.u), flux(&dirichlet.v));
    let un = solve_neumann_load(&mesh, c, &lf, &setup.cg)?;
    let vn = solve_neumann_load(&mesh, c, &lg, &setup.cg)?;
    let ring = interface_ring(&mesh)?;
    let poly = mesh.inclusion().ok_or(MeshError::NoInclusion)?;
    let (tu, tv) = (traces(&un, &ring)?, traces(&vn, &ring)?);
    let neumann = neumann_gradient(poly, c, &ring, &tu.exterior, &tv.exterior)?.pair(v);
    let dir = morph_along(&mesh, v, &setup.cg)?;
    let neumann_fd = richardson_central(
        |t| {
            let mt = dir.at(t)?;
            let ut = solve_neumann_load(&Arc::new(mt), c, &lf, &setup.cg)?;
            Ok(lg.iter().zip(ut.values()).map(|(a, b)| a * b).sum())
        },
        steps,
    )?;
    Ok(NeumannConsistency {
        dirichlet: dirichlet.gradient.pair(v),
        neumann,
        neumann_fd,
    })
}

/// One Neumann excitation with its measured boundary voltages.
#[derive(Clone, Debug, PartialEq)]
pub struct Excitation {
    pub f: BoundaryData,
    pub u_meas: BoundarySamples,
}

/// Summed misfit and its adjoint gradient on one mesh.
pub struct MisfitEvaluation {
    pub value: f64,
    pub gradient: ShapeGradient,
}

pub fn misfit_and_gradient(mesh: &Arc<Mesh>, c: &ConductivitySpec, excitations: &[Excitation], cg: &CgSettings) -> Result<MisfitEvaluation> {
    let ring = interface_ring(mesh)?;
    let poly = mesh.inclusion().ok_or(MeshError::NoInclusion)?;
    let parts: Vec<(f64, ShapeGradient)> = excitations
        .par_iter()
        .map(|ex| {
            let u = crate::fem::solve_neumann(mesh, c, &ex.f, cg)?;
            let state = misfit_of(u, &ex.u_meas);
            let w = adjoint_state(mesh, c, &state.residual, cg)?;
            let (tu, tw) = (traces(&state.u, &ring)?, traces(&w, &ring)?);
            Ok((state.value, misfit_gradient(poly, c, &ring, &tu.exterior, &tw.exterior)?))
        })
        .collect::<Result<_>>()?;
    let mut gradient = ShapeGradient::zeros(poly.len());
    let mut value = 0.0;
    for (j, g) in &parts {
        value += j;
        gradient.add_assign(g);
    }
    Ok(MisfitEvaluation { value, gradient })
}

pub fn misfit_value(mesh: &Arc<Mesh>, c: &ConductivitySpec, excitations: &[Excitation], cg: &CgSettings) -> Result<f64> {
    excitations
        .par_iter()
        .map(|ex| {
            let u = crate::fem::solve_neumann(mesh, c, &ex.f, cg)?;
            Ok(misfit_of(u, &ex.u_meas).value)
        })
        .collect::<Result<Vec<f64>>>()
        .map(|v| v.iter().sum())
}

/// Adjoint misfit derivative along `V` next to its finite-difference
/// oracle.
pub fn misfit_gradient_check(
    mesh: &Arc<Mesh>,
    c: &ConductivitySpec,
    excitations: &[Excitation],
    v: &VelocityField,
    steps: [f64; 3],
    cg: &CgSettings,
) -> Result<DerivativeCheck> {
    let eval = misfit_and_gradient(mesh, c, excitations, cg)?;
    let dir = morph_along(mesh, v, cg)?;
    let fd = richardson_central(
        |t| {
            let mt = Arc::new(dir.at(t)?);
            misfit_value(&mt, c, excitations, cg)
        },
        steps,
    )?;
    Ok(DerivativeCheck {
        formula: eval.gradient.pair(v),
        fd,
    })
}

/// `sum_T (sigma_t - sigma_0) |T| grad u_t . grad v_0` for fields on two
/// labelings of one triangulation.
pub fn alessandrini_increment(u_t: &Field, v_0: &Field) -> Result<f64> {
    let (mt, m0) = (u_t.mesh(), v_0.mesh());
    if mt.triangles() != m0.triangles() || mt.nodes() != m0.nodes() {
        return Err(MeshError::NonConforming("the fields live on different triangulations".into()).into());
    }
    Ok((0..mt.n_triangles())
        .filter_map(|t| {
            let ds = u_t.sigma(t) - v_0.sigma(t);
            (ds != 0.0).then(|| ds * mt.geometry()[t].area * u_t.gradient(t).dot(v_0.gradient(t)))
        })
        .sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlessandriniCheck {
    pub increment: f64,
    pub pairing_difference: f64,
}

impl AlessandriniCheck {
    pub fn relative_error(&self) -> f64 {
        let scale = self.pairing_difference.abs().max(self.increment.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.increment - self.pairing_difference).abs() / scale
        }
    }
}

/// Builds a mesh conforming to both `p0` and `pt` and compares the volume
/// increment with `G(t) - G(0)` from two boundary pairings.
pub fn alessandrini_check(setup: &StudySetup, pt: &Polygon) -> Result<AlessandriniCheck> {
    let both = generate_mesh(&setup.domain, &[setup.polygon.clone(), pt.clone()], &setup.grading)?;
    let m0 = Arc::new(both.with_inclusion(&setup.polygon)?);
    let mt = Arc::new(both.with_inclusion(pt)?);
    let c = &setup.conductivity;
    let (g0, _) = functional_on_mesh(&m0, c, &setup.f, &setup.g, &setup.cg)?;
    let (gt, ut) = functional_on_mesh(&mt, c, &setup.f, &setup.g, &setup.cg)?;
    let v0 = solve_dirichlet(&m0, c, &setup.g, &setup.cg)?;
    Ok(AlessandriniCheck {
        increment: alessandrini_increment(&ut, &v0)?,
        pairing_difference: gt - g0,
    })
}

/// Max gradient magnitude over geometric annuli around a point.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularityFit {
    pub center: Vec2,
    pub radii: Vec<f64>,
    pub max_gradient: Vec<f64>,
    pub counts: Vec<usize>,
    pub omega: f64,
    pub fit: RateFit,
}

/// Six radii with ratio 0.6, the outermost a quarter of the shorter
/// polygon edge at `vertex`.
pub fn default_annuli(poly: &Polygon, vertex: usize) -> Vec<f64> {
    let n = poly.len();
    let shorter = poly.edge_length(vertex).min(poly.edge_length((vertex + n - 1) % n));
    (0..6).map(|i| shorter / 4.0 * 0.6f64.powi(i)).collect()
}

/// Annulus `i` is `ratio * r_i < |x - center| <= r_i`, with `ratio` the
/// common ratio of `radii`. Fits `log max|grad u|` against `log r`, whose
/// slope is `omega - 1`.
pub fn singularity_fit(u: &Field, center: Vec2, radii: &[f64]) -> Result<SingularityFit> {
    if radii.len() < 4 {
        return Err(VerifyError::Setup("at least 4 annuli are needed".into()));
    }
    let ratio = radii[1] / radii[0];
    let geometric = radii.windows(2).all(|w| ((w[1] / w[0]) - ratio).abs() <= 1e-9) && ratio > 0.0 && ratio < 1.0;
    if !geometric {
        return Err(VerifyError::Setup("radii must form a strictly decreasing geometric sequence".into()));
    }
    let mesh = u.mesh();
    let mut max_gradient = vec![0.0f64; radii.len()];
    let mut counts = vec![0usize; radii.len()];
    for t in 0..mesh.n_triangles() {
        let d = mesh.centroid(t).distance(center);
        for (i, &r) in radii.iter().enumerate() {
            if d <= r && d > ratio * r {
                counts[i] += 1;
                max_gradient[i] = max_gradient[i].max(u.gradient(t).norm());
            }
        }
    }
    let last = radii.len() - 1;
    if counts[last] < 20 {
        let r = radii[last];
        let area = std::f64::consts::PI * r * r * (1.0 - ratio * ratio);
        return Err(VerifyError::Resolution {
            found: counts[last],
            required_h_min: (area / 20.0 * 4.0 / 3f64.sqrt()).sqrt(),
        });
    }
    let samples: Vec<(f64, f64)> = radii.iter().zip(&max_gradient).map(|(&r, &g)| (r, g)).collect();
    let fit = fit_power_law(&samples)?;
    Ok(SingularityFit {
        center,
        radii: radii.to_vec(),
        max_gradient,
        counts,
        omega: fit.slope + 1.0,
        fit,
    })
}

/// Singularity fit at a vertex of the mesh's inclusion.
pub fn singularity_study(u: &Field, vertex: usize, radii: &[f64]) -> Result<SingularityFit> {
    let poly = u.mesh().inclusion().ok_or(MeshError::NoInclusion)?;
    if vertex >= poly.len() {
        return Err(GeometryError::EdgeIndex { index: vertex, count: poly.len() }.into());
    }
    singularity_fit(u, poly.vertex(vertex), radii)
}
