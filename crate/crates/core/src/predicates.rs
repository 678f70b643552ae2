//! Orientation and in-circle tests with a floating-point filter and an exact
//! big-integer fallback. Only the sign of the result is meaningful.

use num_bigint::BigInt;

use crate::geometry::Vec2;

const EPS: f64 = f64::EPSILON * 0.5;
const CCW_BOUND: f64 = (3.0 + 16.0 * EPS) * EPS;
const ICC_BOUND: f64 = (10.0 + 96.0 * EPS) * EPS;

/// Positive when `a, b, c` turn counterclockwise.
pub fn orient2d(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    let left = (a.x - c.x) * (b.y - c.y);
    let right = (a.y - c.y) * (b.x - c.x);
    let det = left - right;
    if det.abs() > CCW_BOUND * (left.abs() + right.abs()) {
        return det;
    }
    exact_orient(a, b, c)
}

/// Positive when `d` lies strictly inside the circle through the
/// counterclockwise triangle `a, b, c`.
pub fn incircle(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> f64 {
    let (adx, ady) = (a.x - d.x, a.y - d.y);
    let (bdx, bdy) = (b.x - d.x, b.y - d.y);
    let (cdx, cdy) = (c.x - d.x, c.y - d.y);
    let bc = bdx * cdy - cdx * bdy;
    let ca = cdx * ady - adx * cdy;
    let ab = adx * bdy - bdx * ady;
    let alift = adx * adx + ady * ady;
    let blift = bdx * bdx + bdy * bdy;
    let clift = cdx * cdx + cdy * cdy;
    let det = alift * bc + blift * ca + clift * ab;
    let permanent = ((bdx * cdy).abs() + (cdx * bdy).abs()) * alift
        + ((cdx * ady).abs() + (adx * cdy).abs()) * blift
        + ((adx * bdy).abs() + (bdx * ady).abs()) * clift;
    if det.abs() > ICC_BOUND * permanent {
        return det;
    }
    exact_incircle(a, b, c, d)
}

/// `x = mantissa * 2^exponent` with an integer mantissa.
fn decompose(x: f64) -> (i64, i32) {
    if x == 0.0 {
        return (0, 0);
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 0 { 1 } else { -1 };
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    let frac = (bits & ((1u64 << 52) - 1)) as i64;
    let (m, e) = if exp_bits == 0 {
        (frac, -1074)
    } else {
        (frac | (1i64 << 52), exp_bits - 1075)
    };
    (sign * m, e)
}

fn to_integers(values: &[f64]) -> Vec<BigInt> {
    let parts: Vec<(i64, i32)> = values.iter().map(|&v| decompose(v)).collect();
    let emin = parts
        .iter()
        .filter(|p| p.0 != 0)
        .map(|p| p.1)
        .min()
        .unwrap_or(0);
    parts
        .iter()
        .map(|&(m, e)| BigInt::from(m) << ((e - emin) as usize))
        .collect()
}

fn sign_of(v: &BigInt) -> f64 {
    match v.sign() {
        num_bigint::Sign::Minus => -1.0,
        num_bigint::Sign::NoSign => 0.0,
        num_bigint::Sign::Plus => 1.0,
    }
}

fn exact_orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    let v = to_integers(&[a.x, a.y, b.x, b.y, c.x, c.y]);
    let det = (&v[2] - &v[0]) * (&v[5] - &v[1]) - (&v[3] - &v[1]) * (&v[4] - &v[0]);
    sign_of(&det)
}

fn exact_incircle(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> f64 {
    let v = to_integers(&[a.x, a.y, b.x, b.y, c.x, c.y, d.x, d.y]);
    let adx = &v[0] - &v[6];
    let ady = &v[1] - &v[7];
    let bdx = &v[2] - &v[6];
    let bdy = &v[3] - &v[7];
    let cdx = &v[4] - &v[6];
    let cdy = &v[5] - &v[7];
    let alift = &adx * &adx + &ady * &ady;
    let blift = &bdx * &bdx + &bdy * &bdy;
    let clift = &cdx * &cdx + &cdy * &cdy;
    let det = alift * (&bdx * &cdy - &cdx * &bdy)
        + blift * (&cdx * &ady - &adx * &cdy)
        + clift * (&adx * &bdy - &bdx * &ady);
    sign_of(&det)
}
