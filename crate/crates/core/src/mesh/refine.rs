//! Conforming Delaunay refinement of a planar straight-line graph.
//!
//! Constraint segments are recovered by splitting: a subsegment whose
//! diametral circle contains a vertex (or that is missing from the
//! triangulation) is split, at a power-of-two distance from an input vertex
//! when one endpoint is one, so that segments meeting at small angles stop
//! splitting each other. Triangles that are too large for the size field or
//! have an angle below the quality bound receive their circumcenter, unless
//! the circumcenter encroaches a subsegment, which is then split instead.

use std::collections::{HashMap, VecDeque};

use super::delaunay::{Delaunay, Located, NONE};
use super::MeshError;
use crate::geometry::{point_segment_distance, Vec2};
use crate::predicates::orient2d;

/// Element size target: `h * (d / r_g)^(1/mu)` clamped to `[h_min, h]`,
/// where `d` is the distance to the nearest corner.
#[derive(Clone, Debug)]
pub(crate) struct SizeField {
    pub h: f64,
    pub h_min: f64,
    pub exponent: f64,
    pub radius: f64,
    pub corners: Vec<Vec2>,
}

impl SizeField {
    pub fn at(&self, p: Vec2) -> f64 {
        let d = self
            .corners
            .iter()
            .map(|c| c.distance(p))
            .fold(f64::INFINITY, f64::min);
        if d >= self.radius {
            return self.h;
        }
        (self.h * (d / self.radius).powf(self.exponent)).clamp(self.h_min, self.h)
    }
}

/// Points and segments with all mutual intersections resolved.
#[derive(Clone, Debug, Default)]
pub(crate) struct Pslg {
    pub points: Vec<Vec2>,
    pub segments: Vec<[usize; 2]>,
    /// Indices of polygon vertices and polygon crossings.
    pub corners: Vec<usize>,
}

impl Pslg {
    fn add_point(&mut self, p: Vec2, tol: f64) -> usize {
        if let Some(i) = self.points.iter().position(|q| q.distance(p) <= tol) {
            return i;
        }
        self.points.push(p);
        self.points.len() - 1
    }
}

/// Builds the graph from a counterclockwise boundary loop and closed
/// polygon loops lying strictly inside it.
pub(crate) fn build_pslg(boundary: &[Vec2], loops: &[Vec<Vec2>], tol: f64) -> Result<Pslg, MeshError> {
    let mut g = Pslg::default();
    let mut raw: Vec<[usize; 2]> = Vec::new();
    let nb = boundary.len();
    let bids: Vec<usize> = boundary.iter().map(|&p| g.add_point(p, tol)).collect();
    for i in 0..nb {
        raw.push([bids[i], bids[(i + 1) % nb]]);
    }
    let n_boundary = raw.len();
    for lp in loops {
        let ids: Vec<usize> = lp.iter().map(|&p| g.add_point(p, tol)).collect();
        for &i in &ids {
            if !g.corners.contains(&i) {
                g.corners.push(i);
            }
        }
        for i in 0..ids.len() {
            raw.push([ids[i], ids[(i + 1) % ids.len()]]);
        }
    }
    // Split parameters per raw segment, as point ids.
    let mut splits: Vec<Vec<usize>> = vec![Vec::new(); raw.len()];
    for s in n_boundary..raw.len() {
        for r in (s + 1)..raw.len() {
            let [a, b] = raw[s];
            let [c, d] = raw[r];
            let (pa, pb, pc, pd) = (g.points[a], g.points[b], g.points[c], g.points[d]);
            // Endpoints lying on the other segment.
            for (&q, target) in [(&c, s), (&d, s), (&a, r), (&b, r)] {
                let [x, y] = raw[target];
                if q == x || q == y {
                    continue;
                }
                if point_segment_distance(g.points[q], g.points[x], g.points[y]) <= tol {
                    splits[target].push(q);
                }
            }
            // Proper crossings.
            let o1 = (pb - pa).cross(pc - pa);
            let o2 = (pb - pa).cross(pd - pa);
            let o3 = (pd - pc).cross(pa - pc);
            let o4 = (pd - pc).cross(pb - pc);
            let la = (pb - pa).norm();
            let lc = (pd - pc).norm();
            let crosses = o1 * o2 < 0.0
                && o3 * o4 < 0.0
                && o1.abs() > tol * la
                && o2.abs() > tol * la
                && o3.abs() > tol * lc
                && o4.abs() > tol * lc;
            if crosses {
                let s_param = o3 / (o3 - o4);
                let x = pa + (pb - pa) * s_param;
                let id = g.add_point(x, tol);
                if !g.corners.contains(&id) {
                    g.corners.push(id);
                }
                if id != a && id != b {
                    splits[s].push(id);
                }
                if id != c && id != d {
                    splits[r].push(id);
                }
            }
        }
    }
    let mut seen: HashMap<(usize, usize), ()> = HashMap::new();
    for (k, seg) in raw.iter().enumerate() {
        let [a, b] = *seg;
        let (pa, pb) = (g.points[a], g.points[b]);
        let d = pb - pa;
        let mut ids = splits[k].clone();
        ids.sort_by(|&x, &y| {
            let sx = (g.points[x] - pa).dot(d);
            let sy = (g.points[y] - pa).dot(d);
            sx.total_cmp(&sy)
        });
        ids.dedup();
        let mut chain = vec![a];
        chain.extend(ids);
        chain.push(b);
        for w in chain.windows(2) {
            let key = (w[0].min(w[1]), w[0].max(w[1]));
            if w[0] != w[1] && seen.insert(key, ()).is_none() {
                g.segments.push([w[0], w[1]]);
            }
        }
    }
    Ok(g)
}

#[derive(Clone, Copy, Debug)]
struct Subseg {
    a: u32,
    b: u32,
    seg: u32,
    alive: bool,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct RefineSettings {
    /// Smallest admissible angle, in radians.
    pub min_angle: f64,
    pub max_vertices: usize,
}

pub(crate) struct Refined {
    pub points: Vec<Vec2>,
    pub triangles: Vec<[usize; 3]>,
}

struct Mesher<'a> {
    dt: Delaunay,
    size: &'a SizeField,
    settings: RefineSettings,
    pslg: &'a Pslg,
    /// Triangulation vertex id of each graph point.
    input_id: Vec<u32>,
    is_input: Vec<bool>,
    on_seg: Vec<u32>,
    subsegs: Vec<Subseg>,
    lookup: HashMap<(u32, u32), u32>,
    seg_queue: VecDeque<u32>,
    tri_queue: VecDeque<(u32, [u32; 3])>,
    ratio_bound: f64,
    min_edge: f64,
}

fn key(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

impl<'a> Mesher<'a> {
    fn point(&self, v: u32) -> Vec2 {
        self.dt.pts[v as usize]
    }

    fn push_vertex_meta(&mut self, input: bool, seg: u32) {
        self.is_input.push(input);
        self.on_seg.push(seg);
    }

    fn add_subseg(&mut self, a: u32, b: u32, seg: u32) {
        let id = self.subsegs.len() as u32;
        self.subsegs.push(Subseg {
            a,
            b,
            seg,
            alive: true,
        });
        self.lookup.insert(key(a, b), id);
        self.seg_queue.push_back(id);
    }

    fn encroaches(&self, p: Vec2, a: u32, b: u32) -> bool {
        (self.point(a) - p).dot(self.point(b) - p) < 0.0
    }

    fn needs_split(&self, s: u32) -> bool {
        let ss = self.subsegs[s as usize];
        if !ss.alive {
            return false;
        }
        match self.dt.edge_apexes(ss.a, ss.b) {
            None => true,
            Some(apexes) => apexes.iter().any(|&v| {
                v != NONE && !Delaunay::is_super(v) && self.encroaches(self.point(v), ss.a, ss.b)
            }),
        }
    }

    fn split_point(&self, ss: &Subseg) -> Vec2 {
        let (pa, pb) = (self.point(ss.a), self.point(ss.b));
        let a_in = self.is_input[ss.a as usize];
        let b_in = self.is_input[ss.b as usize];
        if a_in == b_in {
            return (pa + pb) * 0.5;
        }
        let (apex, other) = if a_in { (pa, pb) } else { (pb, pa) };
        let len = apex.distance(other);
        let mut d = 2f64.powi((len / 2.0).log2().round() as i32);
        if d < len / 3.0 {
            d *= 2.0;
        }
        if d > 2.0 * len / 3.0 {
            d *= 0.5;
        }
        apex.lerp(other, d / len)
    }

    fn after_insert(&mut self, ins: &super::delaunay::Inserted, skip: Option<(u32, u32)>) {
        let p = self.point(ins.vertex);
        for &(a, b) in &ins.removed_edges {
            if Some(key(a, b)) == skip {
                continue;
            }
            if let Some(&s) = self.lookup.get(&key(a, b)) {
                self.seg_queue.push_back(s);
            }
        }
        for &(a, b) in &ins.rim_edges {
            if let Some(&s) = self.lookup.get(&key(a, b)) {
                if self.encroaches(p, a, b) {
                    self.seg_queue.push_back(s);
                }
            }
        }
        for &t in &ins.new_tris {
            self.tri_queue.push_back((t, self.dt.tris[t as usize].v));
        }
    }

    fn check_capacity(&self) -> Result<(), MeshError> {
        if self.dt.pts.len() > self.settings.max_vertices {
            return Err(MeshError::TooManyVertices(self.settings.max_vertices));
        }
        Ok(())
    }

    fn split_subseg(&mut self, s: u32) -> Result<(), MeshError> {
        let ss = self.subsegs[s as usize];
        let m = self.split_point(&ss);
        let start = self.dt.find_edge(ss.a, ss.b).map(|(t, _)| t).or(Some(self.dt.vertex_triangle(ss.a)));
        let (mid, ins) = match self.dt.insert(m, start) {
            Ok(ins) => (ins.vertex, Some(ins)),
            Err(existing) => (existing, None),
        };
        if mid == ss.a || mid == ss.b {
            return Err(MeshError::Recovery(format!(
                "cannot split constraint segment near ({}, {})",
                m.x, m.y
            )));
        }
        if ins.is_some() {
            self.push_vertex_meta(false, ss.seg);
        }
        self.subsegs[s as usize].alive = false;
        self.lookup.remove(&key(ss.a, ss.b));
        self.add_subseg(ss.a, mid, ss.seg);
        self.add_subseg(mid, ss.b, ss.seg);
        if let Some(ins) = ins {
            self.after_insert(&ins, Some(key(ss.a, ss.b)));
        }
        self.check_capacity()
    }

    /// Shewchuk's rule: the corner triangle whose shortest edge joins two
    /// segments meeting at a small angle at its own apex `z` cannot be
    /// improved by refinement.
    fn in_small_angle_corner(&self, x: u32, y: u32, z: u32) -> bool {
        let sx = self.on_seg[x as usize];
        let sy = self.on_seg[y as usize];
        if sx == NONE || sy == NONE || sx == sy {
            return false;
        }
        let [a0, a1] = self.pslg.segments[sx as usize];
        let [b0, b1] = self.pslg.segments[sy as usize];
        let apex = if a0 == b0 || a0 == b1 {
            a0
        } else if a1 == b0 || a1 == b1 {
            a1
        } else {
            return false;
        };
        if self.input_id[apex] != z {
            return false;
        }
        let other_a = if apex == a0 { a1 } else { a0 };
        let other_b = if apex == b0 { b1 } else { b0 };
        let pa = self.pslg.points[apex];
        let u = self.pslg.points[other_a] - pa;
        let v = self.pslg.points[other_b] - pa;
        let angle = u.cross(v).abs().atan2(u.dot(v));
        angle < std::f64::consts::PI / 3.0
    }

    fn wants_refinement(&self, v: [u32; 3]) -> bool {
        if v.iter().any(|&x| Delaunay::is_super(x)) {
            return false;
        }
        let p = [self.point(v[0]), self.point(v[1]), self.point(v[2])];
        let l = [p[1].distance(p[2]), p[2].distance(p[0]), p[0].distance(p[1])];
        let area2 = orient2d(p[0], p[1], p[2]).abs();
        if area2 == 0.0 {
            return false;
        }
        let r = l[0] * l[1] * l[2] / (2.0 * area2);
        let centroid = (p[0] + p[1] + p[2]) / 3.0;
        if r * 3f64.sqrt() > self.size.at(centroid) {
            return true;
        }
        let (k, lmin) = l
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc });
        if r / lmin <= self.ratio_bound || lmin < self.min_edge {
            return false;
        }
        let x = v[(k + 1) % 3];
        let y = v[(k + 2) % 3];
        !self.in_small_angle_corner(x, y, v[k])
    }

    fn refine_triangle(&mut self, t: u32) -> Result<(), MeshError> {
        let v = self.dt.tris[t as usize].v;
        let (a, b, c) = (self.point(v[0]), self.point(v[1]), self.point(v[2]));
        let ba = b - a;
        let ca = c - a;
        let d = 2.0 * ba.cross(ca);
        let center = a + Vec2::new(
            ca.y * ba.norm_sq() - ba.y * ca.norm_sq(),
            ba.x * ca.norm_sq() - ca.x * ba.norm_sq(),
        ) / d;
        if !center.is_finite() {
            return Ok(());
        }
        let loc = self.dt.locate(center, Some(t));
        if let Located::Vertex(_) = loc {
            return Ok(());
        }
        let cav = self.dt.cavity(center, loc);
        let mut encroached = Vec::new();
        for (x, y) in self.dt.cavity_edge_list(&cav) {
            if let Some(&s) = self.lookup.get(&key(x, y)) {
                if self.encroaches(center, x, y) {
                    encroached.push(s);
                }
            }
        }
        if !encroached.is_empty() {
            // The circumcenter is not an existing vertex, so the segment
            // queue would not see these; split them directly.
            for s in encroached {
                if self.subsegs[s as usize].alive {
                    self.split_subseg(s)?;
                }
            }
            self.tri_queue.push_back((t, v));
            return Ok(());
        }
        if cav.iter().any(|&ct| self.dt.tris[ct as usize].v.iter().any(|&x| Delaunay::is_super(x))) {
            // Only possible for a circumcenter outside the domain, which
            // would have encroached a boundary subsegment.
            return Ok(());
        }
        let ins = self.dt.insert_with_cavity(center, &cav);
        self.push_vertex_meta(false, NONE);
        self.after_insert(&ins, None);
        self.check_capacity()
    }

    fn run(&mut self) -> Result<(), MeshError> {
        loop {
            if let Some(s) = self.seg_queue.pop_front() {
                if self.needs_split(s) {
                    self.split_subseg(s)?;
                }
                continue;
            }
            if let Some((t, v)) = self.tri_queue.pop_front() {
                let tri = self.dt.tris[t as usize];
                if tri.alive && tri.v == v && self.wants_refinement(v) {
                    self.refine_triangle(t)?;
                }
                continue;
            }
            break;
        }
        Ok(())
    }
}

/// Equidistributes `1 / size` along the segment; returns interior points.
fn subdivide(a: Vec2, b: Vec2, size: &SizeField) -> Vec<Vec2> {
    let len = a.distance(b);
    let samples = ((20.0 * len / size.h_min).ceil() as usize).clamp(64, 200_000);
    let mut cum = vec![0.0; samples + 1];
    let density = |s: f64| 1.0 / size.at(a.lerp(b, s));
    let mut prev = density(0.0);
    for i in 1..=samples {
        let s = i as f64 / samples as f64;
        let cur = density(s);
        cum[i] = cum[i - 1] + 0.5 * (prev + cur) * len / samples as f64;
        prev = cur;
    }
    let total = cum[samples];
    let n = total.round().max(1.0) as usize;
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    let mut j = 0;
    for k in 1..n {
        let target = total * k as f64 / n as f64;
        while cum[j + 1] < target {
            j += 1;
        }
        let frac = (target - cum[j]) / (cum[j + 1] - cum[j]);
        out.push(a.lerp(b, (j as f64 + frac) / samples as f64));
    }
    out
}

/// Input features shorter than `h_min` must still be resolvable by the
/// quality rule, so the termination guard scales with them too.
fn shortest_segment(pslg: &Pslg) -> f64 {
    pslg.segments
        .iter()
        .map(|s| pslg.points[s[0]].distance(pslg.points[s[1]]))
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn refine(pslg: &Pslg, size: &SizeField, settings: RefineSettings) -> Result<Refined, MeshError> {
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &pslg.points {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let mut m = Mesher {
        dt: Delaunay::new(lo, hi),
        size,
        settings,
        pslg,
        input_id: Vec::new(),
        is_input: vec![false; 3],
        on_seg: vec![NONE; 3],
        subsegs: Vec::new(),
        lookup: HashMap::new(),
        seg_queue: VecDeque::new(),
        tri_queue: VecDeque::new(),
        ratio_bound: 1.0 / (2.0 * settings.min_angle.sin()),
        min_edge: size.h_min.min(shortest_segment(pslg)) / 4.0,
    };
    for &p in &pslg.points {
        let id = match m.dt.insert(p, None) {
            Ok(ins) => ins.vertex,
            Err(_) => return Err(MeshError::Recovery("duplicate input point".into())),
        };
        m.input_id.push(id);
        m.push_vertex_meta(true, NONE);
    }
    for (k, seg) in pslg.segments.iter().enumerate() {
        let (pa, pb) = (pslg.points[seg[0]], pslg.points[seg[1]]);
        let mut chain = vec![m.input_id[seg[0]]];
        for q in subdivide(pa, pb, size) {
            let start = Some(m.dt.vertex_triangle(*chain.last().unwrap()));
            match m.dt.insert(q, start) {
                Ok(ins) => {
                    m.push_vertex_meta(false, k as u32);
                    chain.push(ins.vertex);
                }
                Err(_) => continue,
            }
        }
        chain.push(m.input_id[seg[1]]);
        for w in chain.windows(2) {
            m.add_subseg(w[0], w[1], k as u32);
        }
    }
    // Every triangle is a refinement candidate once the segments conform.
    for (t, tri) in m.dt.tris.iter().enumerate() {
        if tri.alive {
            m.tri_queue.push_back((t as u32, tri.v));
        }
    }
    m.run()?;
    for ss in m.subsegs.iter().filter(|s| s.alive) {
        if m.dt.find_edge(ss.a, ss.b).is_none() {
            return Err(MeshError::Recovery(format!(
                "constraint subsegment ({}, {}) missing after refinement",
                ss.a, ss.b
            )));
        }
    }
    let n_pts = m.dt.pts.len();
    let points: Vec<Vec2> = m.dt.pts[3..n_pts].to_vec();
    let triangles = m
        .dt
        .tris
        .iter()
        .filter(|t| t.alive && t.v.iter().all(|&v| !Delaunay::is_super(v)))
        .map(|t| [t.v[0] as usize - 3, t.v[1] as usize - 3, t.v[2] as usize - 3])
        .collect();
    Ok(Refined { points, triangles })
}
