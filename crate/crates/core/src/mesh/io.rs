//! Plain-text mesh format.
//!
//! ```text
//! NODES <n>
//! <id> <x> <y>
//! TRIANGLES <m>
//! <id> <a> <b> <c> <region: 0 outside, 1 inside>
//! BOUNDARY_EDGES <k>
//! <a> <b> <marker>
//! INTERFACE_EDGES <q>
//! <a> <b> <poly_edge> <tri_in> <tri_out>
//! ```
//!
//! Reals are written with 17 significant digits so that reading a file
//! back reproduces the coordinates bit for bit.

use std::fmt::Write as _;

use super::{Mesh, MeshError, Region, Result};
use crate::geometry::{DomainSpec, Polygon, Vec2};

pub fn write_mesh(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "NODES {}", mesh.n_nodes());
    for (i, p) in mesh.nodes().iter().enumerate() {
        let _ = writeln!(s, "{i} {:.16e} {:.16e}", p.x, p.y);
    }
    let _ = writeln!(s, "TRIANGLES {}", mesh.n_triangles());
    for (i, t) in mesh.triangles().iter().enumerate() {
        let r = match mesh.regions()[i] {
            Region::Outside => 0,
            Region::Inside => 1,
        };
        let _ = writeln!(s, "{i} {} {} {} {r}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "BOUNDARY_EDGES {}", mesh.boundary_edges().len());
    for e in mesh.boundary_edges() {
        let _ = writeln!(s, "{} {} {}", e.nodes[0], e.nodes[1], e.marker);
    }
    let _ = writeln!(s, "INTERFACE_EDGES {}", mesh.interface_edges().len());
    for e in mesh.interface_edges() {
        let _ = writeln!(
            s,
            "{} {} {} {} {}",
            e.nodes[0], e.nodes[1], e.poly_edge, e.tri_in, e.tri_out
        );
    }
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next_fields(&mut self) -> Result<Vec<&'a str>> {
        for (i, l) in self.inner.by_ref() {
            self.line = i + 1;
            let l = l.trim();
            if !l.is_empty() {
                return Ok(l.split_whitespace().collect());
            }
        }
        Err(MeshError::Parse {
            line: self.line + 1,
            msg: "unexpected end of file".into(),
        })
    }

    fn err(&self, msg: impl Into<String>) -> MeshError {
        MeshError::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn header(&mut self, name: &str) -> Result<usize> {
        let f = self.next_fields()?;
        if f.len() != 2 || f[0] != name {
            return Err(self.err(format!("expected `{name} <count>`")));
        }
        f[1].parse().map_err(|_| self.err("bad count"))
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("cannot parse `{s}`")))
    }
}

/// Reads a mesh and rebuilds its derived data against `domain` and
/// `inclusion`. The file's region labels and edge lists must agree with the
/// rebuilt ones.
pub fn read_mesh(text: &str, domain: &DomainSpec, inclusion: Option<Polygon>) -> Result<Mesh> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let n = lines.header("NODES")?;
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let f = lines.next_fields()?;
        if f.len() != 3 || lines.parse::<usize>(f[0])? != i {
            return Err(lines.err("expected `<id> <x> <y>` with consecutive ids"));
        }
        nodes.push(Vec2::new(lines.parse(f[1])?, lines.parse(f[2])?));
    }
    let m = lines.header("TRIANGLES")?;
    let mut tris = Vec::with_capacity(m);
    let mut regions = Vec::with_capacity(m);
    for i in 0..m {
        let f = lines.next_fields()?;
        if f.len() != 5 || lines.parse::<usize>(f[0])? != i {
            return Err(lines.err("expected `<id> <a> <b> <c> <region>`"));
        }
        tris.push([lines.parse(f[1])?, lines.parse(f[2])?, lines.parse(f[3])?]);
        regions.push(match f[4] {
            "0" => Region::Outside,
            "1" => Region::Inside,
            other => return Err(lines.err(format!("unknown region `{other}`"))),
        });
    }
    let k = lines.header("BOUNDARY_EDGES")?;
    for _ in 0..k {
        if lines.next_fields()?.len() != 3 {
            return Err(lines.err("expected `<a> <b> <marker>`"));
        }
    }
    let q = lines.header("INTERFACE_EDGES")?;
    for _ in 0..q {
        if lines.next_fields()?.len() != 5 {
            return Err(lines.err("expected `<a> <b> <poly_edge> <tri_in> <tri_out>`"));
        }
    }
    let mesh = Mesh::build(*domain, nodes, tris, inclusion)?;
    if mesh.regions() != regions.as_slice() {
        return Err(MeshError::Invalid("region labels disagree with the inclusion".into()));
    }
    if mesh.boundary_edges().len() != k || mesh.interface_edges().len() != q {
        return Err(MeshError::Invalid("edge sections disagree with the triangulation".into()));
    }
    Ok(mesh)
}
