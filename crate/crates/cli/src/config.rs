//! Experiment configuration: one JSON document, dotted-path overrides and
//! per-subcommand validation.
//!
//! Units: lengths are in domain units (the square is `[-1, 1]^2`, the disk
//! has radius 1), angles in degrees, conductivity contrast `k` is
//! dimensionless, pseudo-time `t` is in units of the velocity field.

use std::path::{Path, PathBuf};

use polyshape::fem::{BoundaryData, BoundaryKind, BoundaryMode, ConductivitySpec, TrigPhase};
use polyshape::geometry::{validate_constraints, ConstraintParams, DomainSpec, Polygon, Vec2, VelocityField};
use polyshape::linalg::CgSettings;
use polyshape::mesh::GradingSpec;
use polyshape::reconstruct::{NoiseSpec, OptimizerConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::Subcommand;

/// A validation failure at a dotted field path.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    #[serde(default)]
    pub domain: DomainConfig,
    pub inclusion: Option<InclusionConfig>,
    pub boundary: Option<BoundaryConfig>,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub constraints: ConstraintsConfig,
    pub study: Option<StudyConfig>,
    pub reconstruct: Option<ReconstructConfig>,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainConfig {
    /// `[-1, 1]^2`.
    #[default]
    Square,
    /// Regular polygon with `sides` sides inscribed in the unit circle.
    Disk { sides: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InclusionConfig {
    /// Vertex coordinates; either orientation is accepted.
    pub vertices: Vec<[f64; 2]>,
    /// Conductivity inside the inclusion; 1 outside.
    pub k: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    pub f: DataConfig,
    pub g: Option<DataConfig>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum KindConfig {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum PhaseConfig {
    Cos,
    Sin,
}

/// Boundary data: exactly one of `trig` and `affine`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: KindConfig,
    pub trig: Option<TrigConfig>,
    pub affine: Option<AffineConfig>,
}

/// `cos(n theta)` or `sin(n theta)` with `theta = 2 pi s / L`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrigConfig {
    pub index: usize,
    pub phase: PhaseConfig,
}

/// `gradient . x + offset`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AffineConfig {
    pub gradient: [f64; 2],
    #[serde(default)]
    pub offset: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MeshConfig {
    /// Maximum element size.
    pub h: f64,
    /// Element size at inclusion corners; `h / 64` when absent.
    pub h_min: Option<f64>,
    /// Grading exponent, at least 1.
    pub mu: Option<f64>,
    /// Grading radius around corners.
    pub r_g: Option<f64>,
    /// `false` gives a uniform mesh of size `h`.
    pub graded: bool,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            h: 0.05,
            h_min: None,
            mu: None,
            r_g: None,
            graded: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Relative residual tolerance of CG.
    pub rtol: f64,
    /// Iteration cap is `iteration_factor * sqrt(n)`.
    pub iteration_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = CgSettings::default();
        SolverConfig {
            rtol: d.rtol,
            iteration_factor: d.iteration_factor,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintsConfig {
    /// Smallest interior angle, degrees.
    pub min_angle_deg: f64,
    pub min_side: f64,
    /// Clearance between the inclusion and the domain boundary.
    pub margin: f64,
}

impl Default for ConstraintsConfig {
    fn default() -> Self {
        let d = ConstraintParams::default();
        ConstraintsConfig {
            min_angle_deg: d.min_angle.to_degrees(),
            min_side: d.min_side,
            margin: d.margin,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum RateQuantity {
    /// `|u_t - u_0|` in the `H^1` seminorm.
    #[default]
    Energy,
    /// `||u_t - u_0||` on the outer boundary; needs Neumann data.
    Boundary,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    /// One velocity per inclusion vertex.
    pub velocity: Option<Vec<[f64; 2]>>,
    /// Pseudo-time steps of the rate studies.
    pub t_list: Option<Vec<f64>>,
    /// Halving central-difference steps for Richardson extrapolation.
    pub fd_steps: [f64; 3],
    /// Highest trig mode of the operator basis.
    pub n_max: usize,
    pub quantity: RateQuantity,
    /// Inclusion vertex of the singularity fit.
    pub vertex: usize,
    /// Decreasing geometric annulus radii; derived from the vertex when absent.
    pub radii: Option<Vec<f64>>,
    /// Interior jitter of the noise-floor reference mesh, as a fraction of
    /// the shortest incident edge.
    pub jitter: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            velocity: None,
            t_list: None,
            fd_steps: polyshape::verify::DEFAULT_FD_STEPS,
            n_max: 4,
            quantity: RateQuantity::Energy,
            vertex: 0,
            radii: None,
            jitter: 0.15,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Standard deviation relative to the RMS of the clean data.
    pub level: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    /// Inclusion that generates the synthetic data.
    pub truth: Vec<[f64; 2]>,
    /// Neumann excitations.
    pub excitations: Vec<DataConfig>,
    /// Data mesh size is `h / data_mesh_scale`.
    #[serde(default = "default_data_mesh_scale")]
    pub data_mesh_scale: f64,
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub optimizer: OptimizerOverrides,
}

fn default_data_mesh_scale() -> f64 {
    2.0
}

/// Optimizer settings; absent fields keep the library defaults.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerOverrides {
    pub max_iterations: Option<usize>,
    pub c1: Option<f64>,
    pub backtrack: Option<f64>,
    pub initial_step: Option<f64>,
    pub min_step: Option<f64>,
    pub grad_atol: Option<f64>,
    pub grad_rtol: Option<f64>,
    pub stagnation: Option<f64>,
    pub check_every: Option<usize>,
    pub check_tolerance: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Every file of a run is written directly inside this directory.
    pub dir: PathBuf,
}

/// Parses `text`, applies `path=value` overrides and deserializes.
pub fn load(text: &str, overrides: &[String]) -> Result<(ConfigDocument, Value)> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| ConfigError::new("<document>", e.to_string()))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let doc = serde_json::from_value(value.clone()).map_err(|e| ConfigError::new("<document>", e.to_string()))?;
    Ok((doc, value))
}

pub fn load_file(path: &Path, overrides: &[String]) -> Result<(ConfigDocument, Value)> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("<config>", format!("{}: {e}", path.display())))?;
    load(&text, overrides)
}

/// `a.b.c=value`; the value is parsed as JSON and taken as a string when
/// that fails. Missing intermediate objects are created.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::new(spec, "override must have the form path=value"))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::new(path, "empty path component"));
    }
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for (depth, key) in keys.iter().enumerate() {
        let here = keys[..depth].join(".");
        let obj = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just created")
            }
            _ => return Err(ConfigError::new(here, "is not an object")),
        };
        if depth + 1 == keys.len() {
            obj.insert((*key).to_string(), new);
            return Ok(());
        }
        node = obj.entry((*key).to_string()).or_insert(Value::Null);
    }
    unreachable!("the loop returns at the last key")
}

fn positive(path: &str, x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(ConfigError::new(path, format!("must be positive and finite, got {x}")))
    }
}

fn points(v: &[[f64; 2]]) -> Vec<Vec2> {
    v.iter().map(|p| Vec2::new(p[0], p[1])).collect()
}

/// Everything a subcommand needs, checked and converted to library types.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub domain: DomainSpec,
    pub inclusion: Option<Polygon>,
    pub conductivity: ConductivitySpec,
    pub f: Option<BoundaryData>,
    pub g: Option<BoundaryData>,
    pub grading: GradingSpec,
    pub cg: CgSettings,
    pub constraints: ConstraintParams,
    pub study: StudyConfig,
    pub velocity: Option<VelocityField>,
    pub reconstruct: Option<ResolvedReconstruction>,
    pub output: PathBuf,
}

#[derive(Clone, Debug)]
pub struct ResolvedReconstruction {
    pub truth: Polygon,
    pub excitations: Vec<BoundaryData>,
    pub data_mesh_scale: f64,
    pub noise: Option<NoiseSpec>,
    pub optimizer: OptimizerConfig,
}

fn data(path: &str, d: &DataConfig) -> Result<BoundaryData> {
    let kind = match d.kind {
        KindConfig::Dirichlet => BoundaryKind::Dirichlet,
        KindConfig::Neumann => BoundaryKind::Neumann,
    };
    let mode = match (&d.trig, &d.affine) {
        (Some(t), None) => {
            if t.index == 0 {
                return Err(ConfigError::new(format!("{path}.trig.index"), "must be at least 1"));
            }
            BoundaryMode::Trig {
                index: t.index,
                phase: match t.phase {
                    PhaseConfig::Cos => TrigPhase::Cos,
                    PhaseConfig::Sin => TrigPhase::Sin,
                },
            }
        }
        (None, Some(a)) => BoundaryMode::Affine {
            gradient: Vec2::new(a.gradient[0], a.gradient[1]),
            offset: a.offset,
        },
        _ => return Err(ConfigError::new(path, "exactly one of trig and affine is required")),
    };
    Ok(BoundaryData { kind, mode })
}

fn polygon(path: &str, v: &[[f64; 2]], constraints: &ConstraintParams, domain: &DomainSpec) -> Result<Polygon> {
    let p = Polygon::new(points(v)).map_err(|e| ConfigError::new(path, e.to_string()))?;
    let report = validate_constraints(&p, constraints, domain).map_err(|e| ConfigError::new(path, e.to_string()))?;
    if !report.is_admissible() {
        let failed: Vec<String> = report.failures().map(|c| format!("{:?}", c.kind)).collect();
        return Err(ConfigError::new(path, format!("polygon is not admissible: {}", failed.join(", "))));
    }
    Ok(p)
}

impl ConfigDocument {
    /// Checks the sections `cmd` reads and converts them.
    pub fn resolve(&self, cmd: Subcommand) -> Result<Resolved> {
        use Subcommand::*;
        let domain = match self.domain {
            DomainConfig::Square => DomainSpec::unit_square(),
            DomainConfig::Disk { sides } => {
                if sides < 3 {
                    return Err(ConfigError::new("domain.sides", "needs at least 3 sides"));
                }
                DomainSpec::disk(sides)
            }
        };
        let m = &self.mesh;
        let h = positive("mesh.h", m.h)?;
        let mut grading = if m.graded { GradingSpec::new(h) } else { GradingSpec::uniform(h) };
        if let Some(x) = m.h_min {
            grading.h_min = positive("mesh.h_min", x)?;
        }
        if let Some(x) = m.mu {
            grading.mu = x;
        }
        if let Some(x) = m.r_g {
            grading.r_g = positive("mesh.r_g", x)?;
        }
        grading.validate().map_err(|e| ConfigError::new("mesh", e.to_string()))?;
        let cg = CgSettings {
            rtol: positive("solver.rtol", self.solver.rtol)?,
            iteration_factor: positive("solver.iteration_factor", self.solver.iteration_factor)?,
        };
        let c = &self.constraints;
        let constraints = ConstraintParams::new(c.min_angle_deg.to_radians(), c.min_side, c.margin)
            .map_err(|e| ConfigError::new("constraints", e.to_string()))?;

        let needs_inclusion = matches!(cmd, DerivCheck | RateStudy | OpDeriv | Singularity | Reconstruct);
        let inclusion = match (&self.inclusion, needs_inclusion) {
            (Some(i), _) => Some(polygon("inclusion.vertices", &i.vertices, &constraints, &domain)?),
            (None, true) => return Err(ConfigError::new("inclusion", format!("section required by {}", cmd.name()))),
            (None, false) => None,
        };
        let k = self.inclusion.as_ref().map_or(1.0, |i| i.k);
        let conductivity = ConductivitySpec::new(k).map_err(|e| ConfigError::new("inclusion.k", e.to_string()))?;

        let needs_f = matches!(cmd, Solve | DerivCheck | RateStudy | Singularity);
        let needs_g = matches!(cmd, DerivCheck);
        let (f, g) = match &self.boundary {
            Some(b) => (
                Some(data("boundary.f", &b.f)?),
                b.g.as_ref().map(|g| data("boundary.g", g)).transpose()?,
            ),
            None if needs_f => return Err(ConfigError::new("boundary", format!("section required by {}", cmd.name()))),
            None => (None, None),
        };
        if needs_g && g.is_none() {
            return Err(ConfigError::new("boundary.g", format!("required by {}", cmd.name())));
        }
        if let (Some(f), Some(g)) = (&f, &g) {
            if f.kind != g.kind {
                return Err(ConfigError::new("boundary.g.kind", "must match boundary.f.kind"));
            }
        }

        let study = self.study.clone().unwrap_or_default();
        let uses_velocity = matches!(cmd, DerivCheck | RateStudy | OpDeriv);
        if uses_velocity && self.study.is_none() {
            return Err(ConfigError::new("study", format!("section required by {}", cmd.name())));
        }
        let velocity = match &study.velocity {
            Some(_) if !uses_velocity => None,
            Some(v) => {
                let n = inclusion.as_ref().map_or(0, Polygon::len);
                if v.len() != n {
                    return Err(ConfigError::new("study.velocity", format!("needs one vector per inclusion vertex ({n}), got {}", v.len())));
                }
                Some(VelocityField::new(points(v)).map_err(|e| ConfigError::new("study.velocity", e.to_string()))?)
            }
            None if uses_velocity => {
                return Err(ConfigError::new("study.velocity", format!("required by {}", cmd.name())));
            }
            None => None,
        };
        if let Some(t) = &study.t_list {
            for (i, &x) in t.iter().enumerate() {
                positive(&format!("study.t_list[{i}]"), x)?;
            }
        }
        if matches!(cmd, Dtn | Ntd | OpDeriv) && study.n_max == 0 {
            return Err(ConfigError::new("study.n_max", "must be at least 1"));
        }
        if cmd == RateStudy && study.quantity == RateQuantity::Boundary && f.as_ref().is_some_and(|f| f.kind != BoundaryKind::Neumann) {
            return Err(ConfigError::new("boundary.f.kind", "the boundary quantity needs neumann data"));
        }
        if cmd == Singularity {
            let n = inclusion.as_ref().map_or(0, Polygon::len);
            if study.vertex >= n {
                return Err(ConfigError::new("study.vertex", format!("must be below {n}")));
            }
        }

        let reconstruct = match (&self.reconstruct, cmd) {
            (Some(r), Reconstruct) => Some(self.resolve_reconstruction(r, &domain, &constraints, grading, cg)?),
            (None, Reconstruct) => return Err(ConfigError::new("reconstruct", "section required by reconstruct")),
            _ => None,
        };
        Ok(Resolved {
            domain,
            inclusion,
            conductivity,
            f,
            g,
            grading,
            cg,
            constraints,
            study,
            velocity,
            reconstruct,
            output: self.output.dir.clone(),
        })
    }

    fn resolve_reconstruction(
        &self,
        r: &ReconstructConfig,
        domain: &DomainSpec,
        constraints: &ConstraintParams,
        grading: GradingSpec,
        cg: CgSettings,
    ) -> Result<ResolvedReconstruction> {
        let truth = polygon("reconstruct.truth", &r.truth, constraints, domain)?;
        if r.excitations.is_empty() {
            return Err(ConfigError::new("reconstruct.excitations", "at least one excitation is required"));
        }
        let excitations = r
            .excitations
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let path = format!("reconstruct.excitations[{i}]");
                let d = data(&path, e)?;
                if d.kind != BoundaryKind::Neumann {
                    return Err(ConfigError::new(format!("{path}.kind"), "excitations must be neumann"));
                }
                Ok(d)
            })
            .collect::<Result<Vec<_>>>()?;
        if !(r.data_mesh_scale >= 1.0 && r.data_mesh_scale.is_finite()) {
            return Err(ConfigError::new("reconstruct.data_mesh_scale", "must be at least 1"));
        }
        let noise = match &r.noise {
            Some(n) => Some(NoiseSpec {
                level: positive("reconstruct.noise.level", n.level)?,
                seed: n.seed,
            }),
            None => None,
        };
        let o = &r.optimizer;
        let mut opt = OptimizerConfig::new(grading);
        opt.cg = cg;
        opt.constraints = *constraints;
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(x) = o.$field { opt.$field = x; })*};
        }
        set!(max_iterations, c1, backtrack, initial_step, min_step, grad_atol, grad_rtol, stagnation, check_every, check_tolerance, seed);
        opt.validate()
            .map_err(|e| ConfigError::new("reconstruct.optimizer", e.to_string()))?;
        Ok(ResolvedReconstruction {
            truth,
            excitations,
            data_mesh_scale: r.data_mesh_scale,
            noise,
            optimizer: opt,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({
            "inclusion": {"vertices": [[-0.3, -0.2], [0.05, 0.35], [0.35, -0.15]], "k": 2.0},
            "boundary": {
                "f": {"kind": "dirichlet", "trig": {"index": 1, "phase": "cos"}},
                "g": {"kind": "dirichlet", "trig": {"index": 1, "phase": "sin"}}
            },
            "study": {"velocity": [[0.3, -0.1], [-0.2, 0.4], [0.1, 0.1]]},
            "output": {"dir": "out"}
        })
    }

    fn resolve(v: &Value, cmd: Subcommand) -> Result<Resolved> {
        let (doc, _) = load(&v.to_string(), &[])?;
        doc.resolve(cmd)
    }

    #[test]
    fn overrides_set_nested_values_and_create_objects() {
        let mut v = base();
        apply_override(&mut v, "mesh.h=0.01").unwrap();
        apply_override(&mut v, "output.dir=elsewhere").unwrap();
        apply_override(&mut v, "study.quantity=\"boundary\"").unwrap();
        assert_eq!(v["mesh"]["h"], json!(0.01));
        assert_eq!(v["output"]["dir"], json!("elsewhere"));
        assert_eq!(v["study"]["quantity"], json!("boundary"));
        assert_eq!(apply_override(&mut v, "mesh.h.x=1").unwrap_err().path, "mesh.h");
        assert!(apply_override(&mut v, "novalue").is_err());
    }

    #[test]
    fn missing_sections_name_their_path() {
        let mut v = base();
        v.as_object_mut().unwrap().remove("inclusion");
        assert_eq!(resolve(&v, Subcommand::DerivCheck).unwrap_err().path, "inclusion");
        assert!(resolve(&v, Subcommand::Mesh).is_ok());
        let mut v = base();
        v["boundary"].as_object_mut().unwrap().remove("g");
        assert_eq!(resolve(&v, Subcommand::DerivCheck).unwrap_err().path, "boundary.g");
        let mut v = base();
        v["study"]["velocity"] = json!([[0.0, 0.0]]);
        assert_eq!(resolve(&v, Subcommand::OpDeriv).unwrap_err().path, "study.velocity");
    }

    #[test]
    fn invalid_values_are_rejected_with_paths() {
        let mut v = base();
        v["mesh"] = json!({"h": -1.0});
        assert_eq!(resolve(&v, Subcommand::Mesh).unwrap_err().path, "mesh.h");
        let mut v = base();
        v["inclusion"]["vertices"] = json!([[-0.99, -0.2], [0.05, 0.35], [0.35, -0.15]]);
        assert_eq!(resolve(&v, Subcommand::Mesh).unwrap_err().path, "inclusion.vertices");
        let mut v = base();
        v["boundary"]["f"] = json!({"kind": "dirichlet"});
        assert_eq!(resolve(&v, Subcommand::Solve).unwrap_err().path, "boundary.f");
        let mut v = base();
        v["study"]["quantity"] = json!("boundary");
        assert_eq!(resolve(&v, Subcommand::RateStudy).unwrap_err().path, "boundary.f.kind");
        let mut v = base();
        v["mesh"] = json!({"hh": 1.0});
        assert!(resolve(&v, Subcommand::Mesh).unwrap_err().message.contains("unknown field"));
    }

    #[test]
    fn reconstruction_section_resolves_optimizer_overrides() {
        let mut v = base();
        v["reconstruct"] = json!({
            "truth": [[-0.35, -0.25], [0.0, 0.4], [0.4, -0.1]],
            "excitations": [{"kind": "neumann", "trig": {"index": 1, "phase": "cos"}}],
            "optimizer": {"max_iterations": 7}
        });
        let r = resolve(&v, Subcommand::Reconstruct).unwrap().reconstruct.unwrap();
        assert_eq!(r.optimizer.max_iterations, 7);
        assert_eq!(r.data_mesh_scale, 2.0);
        v["reconstruct"]["excitations"][0]["kind"] = json!("dirichlet");
        assert_eq!(resolve(&v, Subcommand::Reconstruct).unwrap_err().path, "reconstruct.excitations[0].kind");
    }
}
