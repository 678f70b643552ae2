//! Incremental Delaunay triangulation (Bowyer-Watson) inside a large
//! enclosing triangle. Vertices 0, 1 and 2 are the enclosing triangle's
//! corners; every other point must lie strictly inside it.

use crate::geometry::Vec2;
use crate::predicates::{incircle, orient2d};

pub(crate) const NONE: u32 = u32::MAX;

/// `n[i]` is the neighbor across the edge opposite `v[i]`, i.e. the edge
/// `(v[i+1], v[i+2])`. Vertices are counterclockwise.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tri {
    pub v: [u32; 3],
    pub n: [u32; 3],
    pub alive: bool,
}

impl Tri {
    pub fn edge(&self, i: usize) -> (u32, u32) {
        (self.v[(i + 1) % 3], self.v[(i + 2) % 3])
    }

    pub fn local(&self, vertex: u32) -> Option<usize> {
        self.v.iter().position(|&x| x == vertex)
    }

    /// Local index of the edge `(a, b)` in either direction.
    pub fn edge_index(&self, a: u32, b: u32) -> Option<usize> {
        (0..3).find(|&i| {
            let (x, y) = self.edge(i);
            (x == a && y == b) || (x == b && y == a)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Located {
    Inside(u32),
    OnEdge(u32, usize),
    Vertex(u32),
}

pub(crate) struct Inserted {
    pub vertex: u32,
    pub new_tris: Vec<u32>,
    /// Edges that existed before insertion and no longer do.
    pub removed_edges: Vec<(u32, u32)>,
    /// Edges on the rim of the cavity; they survive the insertion.
    pub rim_edges: Vec<(u32, u32)>,
}

pub(crate) struct Delaunay {
    pub pts: Vec<Vec2>,
    pub tris: Vec<Tri>,
    free: Vec<u32>,
    vert_tri: Vec<u32>,
    hint: u32,
    stamp: Vec<u32>,
    generation: u32,
}

impl Delaunay {
    /// Enclosing triangle far outside the box `[lo, hi]`.
    pub fn new(lo: Vec2, hi: Vec2) -> Self {
        let c = (lo + hi) * 0.5;
        let m = (hi - lo).norm().max(1.0) * 50.0;
        let pts = vec![
            Vec2::new(c.x - 3.0 * m, c.y - 3.0 * m),
            Vec2::new(c.x + 3.0 * m, c.y - 3.0 * m),
            Vec2::new(c.x, c.y + 3.0 * m),
        ];
        Delaunay {
            pts,
            tris: vec![Tri {
                v: [0, 1, 2],
                n: [NONE; 3],
                alive: true,
            }],
            free: Vec::new(),
            vert_tri: vec![0, 0, 0],
            hint: 0,
            stamp: vec![0],
            generation: 0,
        }
    }

    pub fn is_super(v: u32) -> bool {
        v < 3
    }

    pub fn vertex_triangle(&self, v: u32) -> u32 {
        self.vert_tri[v as usize]
    }

    fn next_generation(&mut self) -> u32 {
        if self.stamp.len() < self.tris.len() {
            self.stamp.resize(self.tris.len(), 0);
        }
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
        self.generation
    }

    pub fn locate(&self, p: Vec2, start: Option<u32>) -> Located {
        let mut t = match start {
            Some(s) if (s as usize) < self.tris.len() && self.tris[s as usize].alive => s,
            _ => {
                if self.tris[self.hint as usize].alive {
                    self.hint
                } else {
                    self.tris.iter().position(|t| t.alive).unwrap() as u32
                }
            }
        };
        let limit = 4 * self.tris.len() + 16;
        let mut rot = 0usize;
        for _ in 0..limit {
            let tri = self.tris[t as usize];
            let mut next = NONE;
            for k in 0..3 {
                let i = (k + rot) % 3;
                let (a, b) = tri.edge(i);
                if orient2d(self.pts[a as usize], self.pts[b as usize], p) < 0.0 {
                    next = tri.n[i];
                    break;
                }
            }
            rot = (rot + 1) % 3;
            if next == NONE {
                return self.classify(t, p);
            }
            t = next;
        }
        // The visibility walk cannot cycle on a Delaunay triangulation with
        // exact predicates; keep a brute-force fallback regardless.
        for (i, tri) in self.tris.iter().enumerate() {
            if !tri.alive {
                continue;
            }
            let inside = (0..3).all(|e| {
                let (a, b) = tri.edge(e);
                orient2d(self.pts[a as usize], self.pts[b as usize], p) >= 0.0
            });
            if inside {
                return self.classify(i as u32, p);
            }
        }
        unreachable!("point outside the enclosing triangle")
    }

    fn classify(&self, t: u32, p: Vec2) -> Located {
        let tri = self.tris[t as usize];
        let zeros: Vec<usize> = (0..3)
            .filter(|&i| {
                let (a, b) = tri.edge(i);
                orient2d(self.pts[a as usize], self.pts[b as usize], p) == 0.0
            })
            .collect();
        match zeros.len() {
            0 => Located::Inside(t),
            1 => Located::OnEdge(t, zeros[0]),
            _ => {
                let k = (0..3).find(|k| !zeros.contains(k)).unwrap();
                Located::Vertex(tri.v[k])
            }
        }
    }

    /// Triangles whose circumcircle strictly contains `p`, grown from the
    /// triangle(s) containing it.
    pub fn cavity(&mut self, p: Vec2, loc: Located) -> Vec<u32> {
        let gen_in = self.next_generation();
        let gen_out = self.next_generation();
        let mut cav = Vec::new();
        let seeds: Vec<u32> = match loc {
            Located::Inside(t) => vec![t],
            Located::OnEdge(t, i) => {
                let nb = self.tris[t as usize].n[i];
                if nb == NONE {
                    vec![t]
                } else {
                    vec![t, nb]
                }
            }
            Located::Vertex(_) => return cav,
        };
        for s in seeds {
            self.stamp[s as usize] = gen_in;
            cav.push(s);
        }
        let mut k = 0;
        while k < cav.len() {
            let t = cav[k];
            k += 1;
            for i in 0..3 {
                let nb = self.tris[t as usize].n[i];
                if nb == NONE {
                    continue;
                }
                let st = self.stamp[nb as usize];
                if st == gen_in || st == gen_out {
                    continue;
                }
                let v = self.tris[nb as usize].v;
                let inside = incircle(
                    self.pts[v[0] as usize],
                    self.pts[v[1] as usize],
                    self.pts[v[2] as usize],
                    p,
                ) > 0.0;
                if inside {
                    self.stamp[nb as usize] = gen_in;
                    cav.push(nb);
                } else {
                    self.stamp[nb as usize] = gen_out;
                }
            }
        }
        cav
    }

    /// Edges of the cavity: `(interior, rim)`; rim edges carry the outer
    /// neighbor.
    fn cavity_edges(&mut self, cav: &[u32]) -> (Vec<(u32, u32)>, Vec<(u32, u32, u32)>) {
        let gen = self.next_generation();
        for &t in cav {
            self.stamp[t as usize] = gen;
        }
        let mut interior = Vec::new();
        let mut rim = Vec::new();
        for &t in cav {
            let tri = self.tris[t as usize];
            for i in 0..3 {
                let nb = tri.n[i];
                let (a, b) = tri.edge(i);
                if nb != NONE && self.stamp[nb as usize] == gen {
                    if t < nb {
                        interior.push((a, b));
                    }
                } else {
                    rim.push((a, b, nb));
                }
            }
        }
        (interior, rim)
    }

    /// Edges that a given cavity touches, without modifying anything.
    pub fn cavity_edge_list(&mut self, cav: &[u32]) -> Vec<(u32, u32)> {
        let (interior, rim) = self.cavity_edges(cav);
        interior
            .into_iter()
            .chain(rim.into_iter().map(|(a, b, _)| (a, b)))
            .collect()
    }

    pub fn insert_with_cavity(&mut self, p: Vec2, cav: &[u32]) -> Inserted {
        let (interior, rim) = self.cavity_edges(cav);
        let vertex = self.pts.len() as u32;
        self.pts.push(p);
        self.vert_tri.push(NONE);
        let mut ids: Vec<u32> = Vec::with_capacity(rim.len());
        let mut reuse = cav.iter().copied();
        for _ in 0..rim.len() {
            let id = if let Some(id) = reuse.next() {
                id
            } else if let Some(id) = self.free.pop() {
                id
            } else {
                self.tris.push(Tri {
                    v: [0; 3],
                    n: [NONE; 3],
                    alive: false,
                });
                (self.tris.len() - 1) as u32
            };
            ids.push(id);
        }
        for id in reuse {
            self.tris[id as usize].alive = false;
            self.free.push(id);
        }
        for (k, &(a, b, outer)) in rim.iter().enumerate() {
            let id = ids[k];
            self.tris[id as usize] = Tri {
                v: [a, b, vertex],
                n: [NONE, NONE, outer],
                alive: true,
            };
            if outer != NONE {
                let o = &mut self.tris[outer as usize];
                let j = o.edge_index(a, b).expect("rim edge missing in outer triangle");
                o.n[j] = id;
            }
        }
        // Link the fan: triangle (a, b, p) borders the one starting at b
        // across (b, p) and the one ending at a across (p, a).
        if rim.len() <= 48 {
            for k in 0..rim.len() {
                let (a, b, _) = rim[k];
                for m in 0..rim.len() {
                    if rim[m].0 == b {
                        self.tris[ids[k] as usize].n[0] = ids[m];
                    }
                    if rim[m].1 == a {
                        self.tris[ids[k] as usize].n[1] = ids[m];
                    }
                }
            }
        } else {
            let mut by_start = std::collections::HashMap::with_capacity(rim.len());
            let mut by_end = std::collections::HashMap::with_capacity(rim.len());
            for (k, &(a, b, _)) in rim.iter().enumerate() {
                by_start.insert(a, ids[k]);
                by_end.insert(b, ids[k]);
            }
            for (k, &(a, b, _)) in rim.iter().enumerate() {
                self.tris[ids[k] as usize].n[0] = by_start[&b];
                self.tris[ids[k] as usize].n[1] = by_end[&a];
            }
        }
        for &id in &ids {
            let v = self.tris[id as usize].v;
            for x in v {
                self.vert_tri[x as usize] = id;
            }
        }
        self.hint = ids[0];
        if self.stamp.len() < self.tris.len() {
            self.stamp.resize(self.tris.len(), 0);
        }
        Inserted {
            vertex,
            new_tris: ids,
            removed_edges: interior,
            rim_edges: rim.into_iter().map(|(a, b, _)| (a, b)).collect(),
        }
    }

    /// Inserts `p` unless it coincides with an existing vertex, in which case
    /// that vertex is returned as `Err`.
    pub fn insert(&mut self, p: Vec2, start: Option<u32>) -> Result<Inserted, u32> {
        let loc = self.locate(p, start);
        if let Located::Vertex(v) = loc {
            return Err(v);
        }
        let cav = self.cavity(p, loc);
        Ok(self.insert_with_cavity(p, &cav))
    }

    /// Some triangle containing the edge `(a, b)` and the edge's local index.
    pub fn find_edge(&self, a: u32, b: u32) -> Option<(u32, usize)> {
        let start = self.vert_tri[a as usize];
        if start == NONE {
            return None;
        }
        let mut t = start;
        // Rotate counterclockwise around `a`, then clockwise if the star is open.
        for dir in 0..2 {
            if dir == 1 {
                t = start;
            }
            loop {
                let tri = self.tris[t as usize];
                let i = tri.local(a).expect("vertex star is inconsistent");
                if let Some(e) = tri.edge_index(a, b) {
                    return Some((t, e));
                }
                let next = if dir == 0 { tri.n[(i + 1) % 3] } else { tri.n[(i + 2) % 3] };
                if next == NONE {
                    break;
                }
                if next == start {
                    return None;
                }
                t = next;
            }
        }
        None
    }

    /// The apex vertices opposite the edge `(a, b)` on both sides.
    pub fn edge_apexes(&self, a: u32, b: u32) -> Option<[u32; 2]> {
        let (t, e) = self.find_edge(a, b)?;
        let tri = self.tris[t as usize];
        let first = tri.v[e];
        let nb = tri.n[e];
        let second = if nb == NONE {
            NONE
        } else {
            let o = self.tris[nb as usize];
            let j = o.edge_index(a, b)?;
            o.v[j]
        };
        Some([first, second])
    }

    #[cfg(test)]
    pub fn check_delaunay(&self) -> bool {
        for tri in self.tris.iter().filter(|t| t.alive) {
            let p: Vec<Vec2> = tri.v.iter().map(|&v| self.pts[v as usize]).collect();
            if orient2d(p[0], p[1], p[2]) <= 0.0 {
                return false;
            }
            for i in 0..3 {
                let nb = tri.n[i];
                if nb == NONE {
                    continue;
                }
                let o = self.tris[nb as usize];
                let j = match o.edge_index(tri.edge(i).0, tri.edge(i).1) {
                    Some(j) => j,
                    None => return false,
                };
                if incircle(p[0], p[1], p[2], self.pts[o.v[j] as usize]) > 0.0 {
                    return false;
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points_triangulate_delaunay() {
        let mut dt = Delaunay::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0));
        for i in 0..=10 {
            for j in 0..=10 {
                dt.insert(Vec2::new(i as f64 / 10.0, j as f64 / 10.0), None)
                    .unwrap();
            }
        }
        assert!(dt.check_delaunay());
        let real = dt
            .tris
            .iter()
            .filter(|t| t.alive && t.v.iter().all(|&v| !Delaunay::is_super(v)))
            .count();
        assert_eq!(real, 200);
        assert!(dt.insert(Vec2::new(0.5, 0.5), None).is_err());
    }

    #[test]
    fn edges_are_found_in_both_directions() {
        let mut dt = Delaunay::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0));
        let a = dt.insert(Vec2::new(0.0, 0.0), None).unwrap().vertex;
        let b = dt.insert(Vec2::new(1.0, 0.0), None).unwrap().vertex;
        let c = dt.insert(Vec2::new(0.3, 0.8), None).unwrap().vertex;
        assert!(dt.find_edge(a, b).is_some());
        assert!(dt.find_edge(b, a).is_some());
        assert!(dt.find_edge(c, a).is_some());
        let apex = dt.edge_apexes(a, b).unwrap();
        assert!(apex.contains(&c));
    }
}
