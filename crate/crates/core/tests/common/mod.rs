#![allow(dead_code)]

use polyshape::geometry::{Polygon, Vec2, VelocityField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn triangle() -> Polygon {
    Polygon::new(vec![Vec2::new(-0.3, -0.2), Vec2::new(0.05, 0.35), Vec2::new(0.35, -0.15)]).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Velocities with components uniform in `[-1, 1]`, scaled to max norm 1.
pub fn random_velocity(n: usize, rng: &mut ChaCha8Rng) -> VelocityField {
    let v: Vec<Vec2> = (0..n)
        .map(|_| Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let m = v.iter().map(|d| d.norm()).fold(0.0, f64::max);
    VelocityField::new(v.into_iter().map(|d| d * (1.0 / m)).collect()).unwrap()
}

/// Triangle with a prescribed interior angle at vertex 0, placed near the
/// origin with its edges of length `side`.
pub fn triangle_with_angle(angle: f64, side: f64) -> Polygon {
    let a = Vec2::new(-0.5 * side, -0.3 * side);
    let b = a + Vec2::new(side, 0.0);
    let c = a + Vec2::new(angle.cos(), angle.sin()) * side;
    Polygon::new(vec![a, b, c]).unwrap()
}

/// Area of the convex polygons' intersection by Sutherland-Hodgman with
/// counterclockwise-normalized inputs.
pub fn clipped_area(a: &[Vec2], b: &[Vec2]) -> f64 {
    let ccw = |p: &[Vec2]| -> Vec<Vec2> {
        let s: f64 = (0..p.len()).map(|i| p[i].cross(p[(i + 1) % p.len()])).sum();
        if s < 0.0 {
            p.iter().rev().copied().collect()
        } else {
            p.to_vec()
        }
    };
    let clip = ccw(b);
    let mut out = ccw(a);
    for i in 0..clip.len() {
        let (p, q) = (clip[i], clip[(i + 1) % clip.len()]);
        let side = |x: Vec2| (q - p).cross(x - p);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (c, d) = (input[j], input[(j + 1) % input.len()]);
            let (sc, sd) = (side(c), side(d));
            if sc >= 0.0 {
                out.push(c);
            }
            if (sc >= 0.0) != (sd >= 0.0) {
                out.push(c + (d - c) * (sc / (sc - sd)));
            }
        }
        if out.is_empty() {
            return 0.0;
        }
    }
    0.5 * (0..out.len()).map(|i| out[i].cross(out[(i + 1) % out.len()])).sum::<f64>()
}
