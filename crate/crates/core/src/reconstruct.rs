//! Recovery of a polygonal inclusion from boundary voltages by descent on
//! the summed misfit over vertex positions.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::fem::{solve_neumann, BoundaryData, BoundaryKind, BoundarySamples, ConductivitySpec, FemError};
use crate::geometry::{
    perturb, point_segment_distance, validate_constraints, ConstraintParams, DomainSpec, GeometryError, Polygon, Vec2,
    VelocityField,
};
use crate::linalg::CgSettings;
use crate::mesh::{generate_mesh, GradingSpec, MeshCache, MeshError};
use crate::shapecalc::ShapeGradient;
use crate::verify::{misfit_and_gradient, misfit_gradient_check, Excitation, VerifyError, DEFAULT_FD_STEPS};

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("invalid optimizer setting: {0}")]
    Config(String),
    #[error("initial polygon is not admissible: {0}")]
    NotAdmissible(String),
    #[error("measurement {index} is sampled on a boundary of length {got}, the domain has {expected}")]
    SamplingMismatch { index: usize, expected: f64, got: f64 },
    #[error("measurement {0} does not carry Neumann data")]
    NotNeumann(usize),
    #[error("no measurements")]
    NoMeasurements,
}

pub type Result<T> = std::result::Result<T, ReconstructError>;

/// Additive Gaussian noise with standard deviation `level` times the RMS of
/// the clean samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub level: f64,
    pub seed: u64,
}

/// One Neumann excitation with its measured boundary voltages.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub f: BoundaryData,
    pub u_meas: BoundarySamples,
    /// Samples before noise was added.
    pub clean: BoundarySamples,
    pub noise: Option<NoiseSpec>,
    /// RMS of the clean samples over RMS of the added noise.
    pub snr: Option<f64>,
}

impl Measurement {
    pub fn excitation(&self) -> Excitation {
        Excitation {
            f: self.f.clone(),
            u_meas: self.u_meas.clone(),
        }
    }
}

/// Forward solutions for `excitations` on a mesh of `true_poly` with
/// `h / mesh_scale`, sampled at the data mesh's boundary nodes.
pub fn synthesize_data(
    domain: &DomainSpec,
    true_poly: &Polygon,
    conductivity: &ConductivitySpec,
    excitations: &[BoundaryData],
    grading: &GradingSpec,
    mesh_scale: f64,
    noise: Option<NoiseSpec>,
    cg: &CgSettings,
) -> Result<Vec<Measurement>> {
    if !(mesh_scale >= 1.0) {
        return Err(ReconstructError::Config(format!("mesh_scale {mesh_scale} must be at least 1")));
    }
    if let Some(n) = noise {
        if !(n.level >= 0.0) {
            return Err(ReconstructError::Config(format!("noise level {} must be non-negative", n.level)));
        }
    }
    let fine = GradingSpec {
        h: grading.h / mesh_scale,
        h_min: grading.h_min / mesh_scale,
        ..*grading
    };
    let mesh = Arc::new(generate_mesh(domain, std::slice::from_ref(true_poly), &fine)?);
    excitations
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if f.kind != BoundaryKind::Neumann {
                return Err(ReconstructError::NotNeumann(i));
            }
            let u = solve_neumann(&mesh, conductivity, f, cg)?;
            let clean = u.boundary_samples();
            let (u_meas, snr) = match noise {
                Some(n) if n.level > 0.0 => {
                    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
                    let sd = n.level * rms(clean.values());
                    let normal = Normal::new(0.0, sd).map_err(|e| ReconstructError::Config(e.to_string()))?;
                    let mut rng = ChaCha8Rng::seed_from_u64(n.seed);
                    rng.set_stream(i as u64);
                    let eps: Vec<f64> = (0..clean.len()).map(|_| normal.sample(&mut rng)).collect();
                    let noisy: Vec<f64> = clean.values().iter().zip(&eps).map(|(a, b)| a + b).collect();
                    let samples = BoundarySamples::new(clean.arclength().to_vec(), noisy, clean.perimeter())?;
                    (samples, Some(rms(clean.values()) / rms(&eps)))
                }
                _ => (clean.clone(), None),
            };
            Ok(Measurement {
                f: f.clone(),
                u_meas,
                clean,
                noise,
                snr,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub c1: f64,
    pub backtrack: f64,
    /// Largest vertex move of the first trial step.
    pub initial_step: f64,
    /// Backtracking gives up once the largest vertex move drops below this.
    pub min_step: f64,
    /// Stop when `|grad| <= grad_atol + grad_rtol |grad_0|`.
    pub grad_atol: f64,
    pub grad_rtol: f64,
    /// Stop when an accepted step lowers `J` by less than this fraction of `J_0`.
    pub stagnation: f64,
    pub constraints: ConstraintParams,
    pub grading: GradingSpec,
    pub cg: CgSettings,
    /// Finite-difference self-check of the gradient every this many
    /// iterations; 0 disables it.
    pub check_every: usize,
    pub check_tolerance: f64,
    pub seed: u64,
}

impl OptimizerConfig {
    pub fn new(grading: GradingSpec) -> Self {
        OptimizerConfig {
            max_iterations: 200,
            c1: 1e-4,
            backtrack: 0.5,
            initial_step: 0.01,
            min_step: 1e-7,
            grad_atol: 1e-12,
            grad_rtol: 1e-4,
            stagnation: 1e-7,
            constraints: ConstraintParams::default(),
            grading,
            cg: CgSettings::default(),
            check_every: 10,
            check_tolerance: 0.05,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ReconstructError::Config(m.into()));
        if !(self.c1 > 0.0 && self.c1 < 1.0) {
            return bad("c1 must lie in (0, 1)");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack must lie in (0, 1)");
        }
        if !(self.initial_step > 0.0) || !(self.min_step > 0.0) || self.min_step >= self.initial_step {
            return bad("need 0 < min_step < initial_step");
        }
        if !(self.grad_atol >= 0.0) || !(self.grad_rtol >= 0.0) || !(self.stagnation >= 0.0) {
            return bad("tolerances must be non-negative");
        }
        if !(self.check_tolerance > 0.0) {
            return bad("check_tolerance must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub vertices: Vec<Vec2>,
    /// NaN for trial steps rejected as inadmissible.
    pub j: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheckRecord {
    pub iter: usize,
    pub formula: f64,
    pub fd: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TerminationStatus {
    GradientTolerance,
    Stagnated,
    IterationCap,
    /// Backtracking reached the step floor without an admissible descent step.
    Stalled,
}

/// Row 0 is the initial polygon; every later row is one trial step, and the
/// accepted rows form the iterates.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub records: Vec<IterationRecord>,
    pub checks: Vec<GradientCheckRecord>,
    pub status: TerminationStatus,
    pub final_polygon: Polygon,
    pub iterations: usize,
}

impl Trajectory {
    pub fn initial_misfit(&self) -> f64 {
        self.records[0].j
    }

    pub fn final_misfit(&self) -> f64 {
        self.accepted().last().map_or(f64::NAN, |r| r.j)
    }

    pub fn accepted(&self) -> impl Iterator<Item = &IterationRecord> {
        self.records.iter().filter(|r| r.accepted)
    }

    pub fn to_csv(&self) -> String {
        let n = self.final_polygon.len();
        let mut s = String::from("iter,J,grad_norm,step,accepted");
        for i in 1..=n {
            let _ = write!(s, ",x{i},y{i}");
        }
        s.push('\n');
        for r in &self.records {
            let _ = write!(s, "{},{:.16e},{:.16e},{:.16e},{}", r.iter, r.j, r.grad_norm, r.step, u8::from(r.accepted));
            for v in &r.vertices {
                let _ = write!(s, ",{:.16e},{:.16e}", v.x, v.y);
            }
            s.push('\n');
        }
        s
    }

    /// Final vertices as a JSON array of `[x, y]` pairs.
    pub fn final_polygon_literal(&self) -> String {
        let parts: Vec<String> = self
            .final_polygon
            .vertices()
            .iter()
            .map(|v| format!("[{:?}, {:?}]", v.x, v.y))
            .collect();
        format!("[{}]", parts.join(", "))
    }
}

fn admissibility(poly: &Polygon, params: &ConstraintParams, domain: &DomainSpec) -> std::result::Result<(), String> {
    let report = validate_constraints(poly, params, domain).map_err(|e| e.to_string())?;
    if report.is_admissible() {
        Ok(())
    } else {
        let kinds: Vec<String> = report.failures().map(|c| format!("{:?}", c.kind)).collect();
        Err(kinds.join(", "))
    }
}

fn max_norm(g: &ShapeGradient) -> f64 {
    g.as_slice().iter().map(|v| v.norm()).fold(0.0, f64::max)
}

fn flat_dot(a: &[Vec2], b: &[Vec2]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(*y)).sum()
}

fn random_direction(n: usize, rng: &mut ChaCha8Rng) -> VelocityField {
    let v: Vec<Vec2> = (0..n)
        .map(|_| Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let m = v.iter().map(|d| d.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    VelocityField::new(v.into_iter().map(|d| d * (1.0 / m)).collect()).expect("finite direction")
}

/// Steepest descent on the summed misfit with Armijo backtracking and a
/// Barzilai-Borwein initial step. Every trial polygon is meshed afresh.
pub fn reconstruct(
    domain: &DomainSpec,
    initial: &Polygon,
    conductivity: &ConductivitySpec,
    measurements: &[Measurement],
    cfg: &OptimizerConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if measurements.is_empty() {
        return Err(ReconstructError::NoMeasurements);
    }
    let perimeter = domain.perimeter();
    for (i, m) in measurements.iter().enumerate() {
        if m.f.kind != BoundaryKind::Neumann {
            return Err(ReconstructError::NotNeumann(i));
        }
        if (m.u_meas.perimeter() - perimeter).abs() > 1e-9 * perimeter {
            return Err(ReconstructError::SamplingMismatch {
                index: i,
                expected: perimeter,
                got: m.u_meas.perimeter(),
            });
        }
    }
    admissibility(initial, &cfg.constraints, domain).map_err(ReconstructError::NotAdmissible)?;
    let excitations: Vec<Excitation> = measurements.iter().map(Measurement::excitation).collect();
    let mut cache = MeshCache::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let move_cap = cfg.constraints.margin / 4.0;

    let mut poly = initial.clone();
    let mut mesh = cache.get_or_generate(domain, std::slice::from_ref(&poly), &cfg.grading)?;
    let mut eval = misfit_and_gradient(&mesh, conductivity, &excitations, &cfg.cg)?;
    let g0 = eval.gradient.norm();
    let j0 = eval.value;
    let mut records = vec![IterationRecord {
        iter: 0,
        vertices: poly.vertices().to_vec(),
        j: j0,
        grad_norm: g0,
        step: 0.0,
        accepted: true,
    }];
    let mut checks = Vec::new();
    let mut previous: Option<(Vec<Vec2>, Vec<Vec2>)> = None;
    let mut alpha_prev = cfg.initial_step / max_norm(&eval.gradient).max(f64::MIN_POSITIVE);
    let mut iter = 0;
    let status = loop {
        let g = &eval.gradient;
        let gnorm = g.norm();
        if cfg.check_every > 0 && iter % cfg.check_every == 0 && gnorm > 0.0 {
            let v = random_direction(poly.len(), &mut rng);
            match misfit_gradient_check(&mesh, conductivity, &excitations, &v, DEFAULT_FD_STEPS, &cfg.cg) {
                Ok(c) => {
                    let passed = c.relative_error() <= cfg.check_tolerance;
                    if !passed {
                        log::warn!("iteration {iter}: gradient check off by {:.2e}", c.relative_error());
                    }
                    checks.push(GradientCheckRecord {
                        iter,
                        formula: c.formula,
                        fd: c.fd.extrapolated,
                        passed,
                    });
                }
                Err(e) => log::warn!("iteration {iter}: gradient check skipped: {e}"),
            }
        }
        if gnorm <= cfg.grad_atol + cfg.grad_rtol * g0 {
            break TerminationStatus::GradientTolerance;
        }
        if iter >= cfg.max_iterations {
            break TerminationStatus::IterationCap;
        }
        let x = poly.vertices().to_vec();
        let gv = g.as_slice().to_vec();
        let mut alpha = match &previous {
            Some((xp, gp)) => {
                let s: Vec<Vec2> = x.iter().zip(xp).map(|(a, b)| *a - *b).collect();
                let y: Vec<Vec2> = gv.iter().zip(gp).map(|(a, b)| *a - *b).collect();
                let sy = flat_dot(&s, &y);
                if sy > 0.0 {
                    flat_dot(&s, &s) / sy
                } else {
                    alpha_prev
                }
            }
            None => alpha_prev,
        };
        let gmax = max_norm(g);
        alpha = alpha.min(move_cap / gmax);
        let direction = VelocityField::new(gv.iter().map(|d| -*d).collect())?;
        iter += 1;
        let accepted = loop {
            if alpha * gmax < cfg.min_step {
                break None;
            }
            let trial = perturb(&poly, &direction, alpha)
                .map_err(|e| e.to_string())
                .and_then(|p| admissibility(&p, &cfg.constraints, domain).map(|_| p));
            let trial = match trial {
                Ok(p) => p,
                Err(reason) => {
                    log::debug!("iteration {iter}: step {alpha:e} inadmissible ({reason})");
                    records.push(IterationRecord {
                        iter,
                        vertices: x.iter().zip(&gv).map(|(p, d)| *p - *d * alpha).collect(),
                        j: f64::NAN,
                        grad_norm: gnorm,
                        step: alpha,
                        accepted: false,
                    });
                    alpha *= cfg.backtrack;
                    continue;
                }
            };
            let trial_mesh = cache.get_or_generate(domain, std::slice::from_ref(&trial), &cfg.grading)?;
            let trial_eval = misfit_and_gradient(&trial_mesh, conductivity, &excitations, &cfg.cg)?;
            let ok = trial_eval.value <= eval.value - cfg.c1 * alpha * gnorm * gnorm && trial_eval.value < eval.value;
            records.push(IterationRecord {
                iter,
                vertices: trial.vertices().to_vec(),
                j: trial_eval.value,
                grad_norm: if ok { trial_eval.gradient.norm() } else { gnorm },
                step: alpha,
                accepted: ok,
            });
            if ok {
                break Some((trial, trial_mesh, trial_eval));
            }
            alpha *= cfg.backtrack;
        };
        let Some((trial, trial_mesh, trial_eval)) = accepted else {
            break TerminationStatus::Stalled;
        };
        let decrease = eval.value - trial_eval.value;
        previous = Some((x, gv));
        alpha_prev = alpha;
        poly = trial;
        mesh = trial_mesh;
        eval = trial_eval;
        if decrease <= cfg.stagnation * j0 {
            break TerminationStatus::Stagnated;
        }
    };
    Ok(Trajectory {
        records,
        checks,
        status,
        final_polygon: poly,
        iterations: iter,
    })
}

/// Distance from `p` to the boundary of `poly`.
fn boundary_distance(p: Vec2, poly: &Polygon) -> f64 {
    (0..poly.len())
        .map(|i| {
            let (a, b) = poly.edge(i);
            point_segment_distance(p, a, b)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Parameters in `[0, 1]` along `a + s (b - a)` where the nearest feature
/// of `poly` can change: each distance to a vertex or an edge line is
/// convex in `s`, so the lower envelope peaks only at its breakpoints.
fn breakpoints(a: Vec2, b: Vec2, poly: &Polygon) -> Vec<f64> {
    let d = b - a;
    let mut out = vec![0.0, 1.0];
    let mut push = |s: f64| {
        if s.is_finite() && (0.0..=1.0).contains(&s) {
            out.push(s);
        }
    };
    let n = poly.len();
    // Quadratic q2 s^2 + q1 s + q0 = 0.
    let roots = |q2: f64, q1: f64, q0: f64, push: &mut dyn FnMut(f64)| {
        if q2.abs() < 1e-300 {
            if q1 != 0.0 {
                push(-q0 / q1);
            }
            return;
        }
        let disc = q1 * q1 - 4.0 * q2 * q0;
        if disc >= 0.0 {
            let r = disc.sqrt();
            push((-q1 + r) / (2.0 * q2));
            push((-q1 - r) / (2.0 * q2));
        }
    };
    let lines: Vec<(Vec2, Vec2)> = (0..n)
        .map(|i| {
            let (p, q) = poly.edge(i);
            let t = q - p;
            (p, t.perp() * (1.0 / t.norm()))
        })
        .collect();
    for i in 0..n {
        let (p, q) = poly.edge(i);
        let t = q - p;
        // Projection onto edge i reaches an endpoint.
        if d.dot(t) != 0.0 {
            push((p - a).dot(t) / d.dot(t));
            push((q - a).dot(t) / d.dot(t));
        }
        let vi = poly.vertex(i);
        for j in (i + 1)..n {
            let vj = poly.vertex(j);
            // |a + s d - vi|^2 = |a + s d - vj|^2 is linear in s.
            let lhs = 2.0 * d.dot(vj - vi);
            push(((vj.norm_sq() - vi.norm_sq()) - 2.0 * a.dot(vj - vi)) / lhs);
        }
        for &(lp, ln) in &lines {
            // |a + s d - vi|^2 = (n . (a + s d - lp))^2
            let (w, c0, c1) = (a - vi, ln.dot(a - lp), ln.dot(d));
            roots(d.norm_sq() - c1 * c1, 2.0 * w.dot(d) - 2.0 * c0 * c1, w.norm_sq() - c0 * c0, &mut push);
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let (pi, ni) = lines[i];
            let (pj, nj) = lines[j];
            for sign in [1.0, -1.0] {
                // ni . (x - pi) = sign nj . (x - pj)
                let slope = ni.dot(d) - sign * nj.dot(d);
                if slope != 0.0 {
                    push(-(ni.dot(a - pi) - sign * nj.dot(a - pj)) / slope);
                }
            }
        }
    }
    out
}

fn directed_hausdorff(a: &Polygon, b: &Polygon) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.len() {
        let (p, q) = a.edge(i);
        for s in breakpoints(p, q, b) {
            worst = worst.max(boundary_distance(p.lerp(q, s), b));
        }
    }
    worst
}

/// Symmetric Hausdorff distance between the boundaries of `a` and `b`.
pub fn hausdorff_vertex_error(a: &Polygon, b: &Polygon) -> f64 {
    directed_hausdorff(a, b).max(directed_hausdorff(b, a))
}
