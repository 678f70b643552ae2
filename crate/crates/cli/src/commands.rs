//! One function per subcommand. Each reads a resolved configuration and
//! writes CSV (or plain-text mesh and field) files through an `OutputDir`.

use std::fmt::Write as _;
use std::sync::Arc;

use polyshape::fem::{boundary_l2_diff, energy, h1_seminorm_diff, solve_dirichlet, solve_neumann, BoundaryData, BoundaryKind, Field};
use polyshape::geometry::{Polygon, VelocityField};
use polyshape::maps::{dtn_matrix, ntd_matrix, BoundaryBasis};
use polyshape::mesh::{generate_mesh, io::write_mesh, mesh_quality, Mesh};
use polyshape::reconstruct::{hausdorff_vertex_error, reconstruct, synthesize_data};
use polyshape::verify::{
    boundary_rate_study, default_annuli, default_t_list, derivative_rate_study, derivative_state, energy_rate_study, fd_shape_derivative,
    operator_derivative_check, singularity_study, DerivativeCheck, StudySetup,
};

use crate::config::{RateQuantity, Resolved};
use crate::output::{OutputDir, OutputError};
use crate::Subcommand;

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Output(#[from] OutputError),
}

type Result<T> = std::result::Result<T, CommandError>;

fn numerical<E: std::fmt::Display>(e: E) -> CommandError {
    CommandError::Numerical(e.to_string())
}

/// Files each subcommand writes, besides the manifest and the effective
/// configuration.
pub fn planned_files(cmd: Subcommand) -> &'static [&'static str] {
    use Subcommand::*;
    match cmd {
        Mesh => &["mesh.txt", "mesh_quality.csv"],
        Solve => &["field.txt", "norms.csv"],
        Dtn => &["dtn.csv"],
        Ntd => &["ntd.csv"],
        DerivCheck => &["shape_gradient.csv", "derivative_check.csv", "derivative_rate.csv"],
        RateStudy => &["rate_study.csv"],
        OpDeriv => &["operator_derivative.csv", "operator_rate.csv"],
        Singularity => &["singularity.csv", "singularity_fit.csv"],
        Reconstruct => &["trajectory.csv", "gradient_checks.csv", "reconstruction.csv", "final_polygon.json"],
    }
}

pub fn run(cmd: Subcommand, cfg: &Resolved, out: &mut OutputDir) -> Result<()> {
    use Subcommand::*;
    match cmd {
        Mesh => mesh(cfg, out),
        Solve => solve(cfg, out),
        Dtn | Ntd => operator(cmd, cfg, out),
        DerivCheck => deriv_check(cfg, out),
        RateStudy => rate_study(cfg, out),
        OpDeriv => op_deriv(cfg, out),
        Singularity => singularity(cfg, out),
        Reconstruct => reconstruction(cfg, out),
    }
}

fn build_mesh(cfg: &Resolved) -> Result<Arc<Mesh>> {
    let polys: Vec<Polygon> = cfg.inclusion.iter().cloned().collect();
    let m = generate_mesh(&cfg.domain, &polys, &cfg.grading).map_err(numerical)?;
    log::info!("mesh: {} nodes, {} triangles", m.n_nodes(), m.n_triangles());
    Ok(Arc::new(m))
}

fn solve_field(mesh: &Arc<Mesh>, cfg: &Resolved, data: &BoundaryData) -> Result<Field> {
    match data.kind {
        BoundaryKind::Dirichlet => solve_dirichlet(mesh, &cfg.conductivity, data, &cfg.cg),
        BoundaryKind::Neumann => solve_neumann(mesh, &cfg.conductivity, data, &cfg.cg),
    }
    .map_err(numerical)
}

fn key_value_csv(rows: &[(&str, String)]) -> String {
    let mut s = String::from("quantity,value\n");
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

fn e(x: f64) -> String {
    format!("{x:.16e}")
}

fn mesh(cfg: &Resolved, out: &mut OutputDir) -> Result<()> {
    let m = build_mesh(cfg)?;
    let q = mesh_quality(&m);
    out.write("mesh.txt", write_mesh(&m).as_bytes())?;
    let rows = [
        ("n_nodes", q.n_nodes.to_string()),
        ("n_triangles", q.n_triangles.to_string()),
        ("n_interface_edges", q.n_interface_edges.to_string()),
        ("min_angle_deg", e(q.min_angle_deg)),
        ("max_aspect", e(q.max_aspect)),
        ("h_eff", e(q.h_eff)),
    ];
    out.write("mesh_quality.csv", key_value_csv(&rows).as_bytes())?;
    Ok(())
}

fn solve(cfg: &Resolved, out: &mut OutputDir) -> Result<()> {
    let m = build_mesh(cfg)?;
    let f = cfg.f.as_ref().expect("validated");
    let u = solve_field(&m, cfg, f)?;
    let zero = Field::interpolate(Arc::clone(&m), u.tag(), |_| 0.0);
    let rows = [
        ("energy", e(energy(&u))),
        ("h1_seminorm", e(h1_seminorm_diff(&u, &zero).map_err(numerical)?)),
        ("boundary_l2", e(boundary_l2_diff(&u, &zero).map_err(numerical)?)),
        ("n_nodes", m.n_nodes().to_string()),
    ];
    out.write("field.txt", u.to_text().as_bytes())?;
    out.write("norms.csv", key_value_csv(&rows).as_bytes())?;
    Ok(())
}

fn operator(cmd: Subcommand, cfg: &Resolved, out: &mut OutputDir) -> Result<()> {
    let m = build_mesh(cfg)?;
    let n = cfg.study.n_max;
    let (op, name) = if cmd == Subcommand::Dtn {
        (dtn_matrix(&m, &cfg.conductivity, &BoundaryBasis::trig(n, true, false), &cfg.cg), "dtn.csv")
    } else {
        (ntd_matrix(&m, &cfg.conductivity, &BoundaryBasis::trig(n, false, true), &cfg.cg), "ntd.csv")
    };
    let op = op.map_err(numerical)?;
    log::info!("{}: asymmetry {:.3e}", op.tag.name(), op.asymmetry());
    out.write(name, op.to_csv().as_bytes())?;
    Ok(())
}

fn setup(cfg: &Resolved) -> StudySetup {
    let default_f = || BoundaryData::trig(BoundaryKind::Dirichlet, 1, polyshape::fem::TrigPhase::Cos);
    let f = cfg.f.clone().unwrap_or_else(default_f);
    let g = cfg.g.clone().unwrap_or_else(|| f.clone());
    let mut s = StudySetup::new(cfg.domain, cfg.inclusion.clone().expect("validated"), cfg.conductivity, f, g, cfg.grading);
    s.cg = cfg.cg;
    s.constraints = cfg.constraints;
    s.jitter = cfg.study.jitter;
    s
}

fn velocity(cfg: &Resolved) -> &VelocityField {
    cfg.velocity.as_ref().expect("validated")
}

fn t_list(cfg: &Resolved) -> Vec<f64> {
    cfg.study.t_list.clone().unwrap_or_else(default_t_list)
}

fn deriv_check(cfg: &Resolved, out: &mut OutputDir) -> Result<()> {
    let s = setup(cfg);
    let v = velocity(cfg);
    let mesh = s.reference_mesh().map_err(numerical)?;
    let state = derivative_state(&s, &mesh).map_err(numerical)?;
    let fd = fd_shape_derivative(&s, &mesh, v, cfg.study.fd_steps).map_err(numerical)?;
    let check = DerivativeCheck {
        formula: state.gradient.pair(v),
        fd,
    };
    out.write("shape_gradient.csv", state.gradient.to_csv().as_bytes())?;
    let mut csv = String::from("step,central\n");
    for (h, c) in check.fd.steps.iter().zip(&check.fd.central) {
        let _ = writeln!(csv, "{},{}", e(*h), e(*c));
    }
    csv.push_str("functional,formula,fd_extrapolated,relative_error\n");
    let _ = writeln!(csv, "{},{},{},{}", e(state.value), e(check.formula), e(check.fd.extrapolated), e(check.relative_error()));
    out.write("derivative_check.csv", csv.as_bytes())?;
    log::info!("derivative: formula {:.6e}, fd {:.6e}", check.formula, check.fd.extrapolated);
    let rate = derivative_rate_study(&s, v, &t_list(cfg)).map_err(numerical)?;
    out.write("derivative_rate.csv", rate.to_csv().as_bytes())?;
    Ok(())
}

fn rate_study(cfg: &Resolved, out: &mut OutputDir) -> Result<()> {
    let s = setup(cfg);
    let study = match cfg.study.quantity {
        RateQuantity::Energy => energy_rate_study(&s, velocity(cfg), &t_list(cfg)),
        RateQuantity::Boundary => boundary_rate_study(&s, velocity(cfg), &t_list(cfg)),
    }
    .map_err(numerical)?;
    for w in &study.warnings {
        log::warn!("{w}");
    }
    out.write("rate_study.csv", study.to_csv().as_bytes())?;
    Ok(())
}

fn op_deriv(cfg: &Resolved, out: &mut OutputDir) -> Result<()> {
    let s = setup(cfg);
    let basis = BoundaryBasis::trig(cfg.study.n_max, false, true);
    let op = operator_derivative_check(&s, velocity(cfg), &t_list(cfg), &basis).map_err(numerical)?;
    out.write("operator_derivative.csv", op.derivative.to_csv().as_bytes())?;
    out.write("operator_rate.csv", op.study.to_csv().as_bytes())?;
    Ok(())
}

fn singularity(cfg: &Resolved, out: &mut OutputDir) -> Result<()> {
    let poly = cfg.inclusion.as_ref().expect("validated");
    let vertex = cfg.study.vertex;
    let radii = cfg.study.radii.clone().unwrap_or_else(|| default_annuli(poly, vertex));
    let m = build_mesh(cfg)?;
    let u = solve_field(&m, cfg, cfg.f.as_ref().expect("validated"))?;
    let fit = singularity_study(&u, vertex, &radii).map_err(numerical)?;
    let mut csv = String::from("radius,max_gradient,triangles\n");
    for ((r, g), c) in fit.radii.iter().zip(&fit.max_gradient).zip(&fit.counts) {
        let _ = writeln!(csv, "{},{},{c}", e(*r), e(*g));
    }
    out.write("singularity.csv", csv.as_bytes())?;
    let rows = [
        ("omega", e(fit.omega)),
        ("slope", e(fit.fit.slope)),
        ("residual", e(fit.fit.residual)),
        ("center_x", e(fit.center.x)),
        ("center_y", e(fit.center.y)),
    ];
    out.write("singularity_fit.csv", key_value_csv(&rows).as_bytes())?;
    Ok(())
}

fn reconstruction(cfg: &Resolved, out: &mut OutputDir) -> Result<()> {
    let r = cfg.reconstruct.as_ref().expect("validated");
    let initial = cfg.inclusion.as_ref().expect("validated");
    let meas = synthesize_data(
        &cfg.domain,
        &r.truth,
        &cfg.conductivity,
        &r.excitations,
        &cfg.grading,
        r.data_mesh_scale,
        r.noise,
        &cfg.cg,
    )
    .map_err(numerical)?;
    let traj = reconstruct(&cfg.domain, initial, &cfg.conductivity, &meas, &r.optimizer).map_err(numerical)?;
    out.write("trajectory.csv", traj.to_csv().as_bytes())?;
    let mut checks = String::from("iter,formula,fd,passed\n");
    for c in &traj.checks {
        let _ = writeln!(checks, "{},{},{},{}", c.iter, e(c.formula), e(c.fd), u8::from(c.passed));
    }
    out.write("gradient_checks.csv", checks.as_bytes())?;
    let j0 = traj.initial_misfit();
    let j1 = traj.final_misfit();
    let rows = [
        ("status", format!("{:?}", traj.status)),
        ("iterations", traj.iterations.to_string()),
        ("initial_misfit", e(j0)),
        ("final_misfit", e(j1)),
        ("misfit_reduction", e(1.0 - j1 / j0)),
        ("initial_hausdorff", e(hausdorff_vertex_error(initial, &r.truth))),
        ("final_hausdorff", e(hausdorff_vertex_error(&traj.final_polygon, &r.truth))),
    ];
    out.write("reconstruction.csv", key_value_csv(&rows).as_bytes())?;
    out.write("final_polygon.json", format!("{}\n", traj.final_polygon_literal()).as_bytes())?;
    log::info!("reconstruction: {:?} after {} iterations, J {j0:.3e} -> {j1:.3e}", traj.status, traj.iterations);
    Ok(())
}
