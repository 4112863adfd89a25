//! Small fixed-size vector helpers and periodic (torus) metric utilities.
//!
//! Points live on the unit 3-torus, identified with `[0,1)^3`. All distances
//! use the flat quotient metric: the nearest periodic image decides.

pub type Vec3 = [f64; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Reduce a coordinate to `[0,1)`.
pub fn wrap_coord(x: f64) -> f64 {
    let y = x - x.floor();
    // `x.floor()` can round such that y == 1.0 for tiny negative x.
    if y >= 1.0 {
        y - 1.0
    } else {
        y
    }
}

/// Reduce a point to the fundamental cell `[0,1)^3`.
pub fn wrap(p: Vec3) -> Vec3 {
    [wrap_coord(p[0]), wrap_coord(p[1]), wrap_coord(p[2])]
}

/// Signed displacement from `b` to `a` along the shortest periodic path;
/// each component lies in `[-1/2, 1/2)`.
pub fn periodic_delta(a: Vec3, b: Vec3) -> Vec3 {
    let mut d = sub(a, b);
    for c in &mut d {
        *c -= c.round();
        if *c >= 0.5 {
            *c -= 1.0;
        }
    }
    d
}

/// Distance between two points of the torus.
pub fn periodic_dist(a: Vec3, b: Vec3) -> f64 {
    norm(periodic_delta(a, b))
}

/// Distance from a point to an axis-aligned closed box `[lo, hi]^3` under the
/// periodic metric. The box is assumed to fit inside one fundamental cell
/// (side < 1), so per-coordinate nearest images suffice.
pub fn periodic_dist_to_box(p: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        let mid = 0.5 * (lo[i] + hi[i]);
        let half = 0.5 * (hi[i] - lo[i]);
        let mut d = (p[i] - mid) - (p[i] - mid).round();
        if d >= 0.5 {
            d -= 1.0;
        }
        let excess = (d.abs() - half).max(0.0);
        s += excess * excess;
    }
    s.sqrt()
}

/// The 27 lattice offsets `{-1,0,1}^3`.
pub fn lattice_offsets() -> impl Iterator<Item = Vec3> {
    (-1..=1).flat_map(move |i| {
        (-1..=1).flat_map(move |j| (-1..=1).map(move |k| [i as f64, j as f64, k as f64]))
    })
}
