//! Tricubic (Catmull-Rom tensor product) interpolation on periodic grids.

use crate::vec3::Vec3;
use ndarray::Array3;

#[inline]
fn catmull_rom_weights(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        0.5 * (-s3 + 2.0 * s2 - s),
        0.5 * (3.0 * s3 - 5.0 * s2 + 2.0),
        0.5 * (-3.0 * s3 + 4.0 * s2 + s),
        0.5 * (s3 - s2),
    ]
}

/// Stencil indices and weights along one periodic axis for position `x`
/// (torus coordinate; nodes at i/n).
#[inline]
fn axis_stencil(x: f64, n: usize) -> ([usize; 4], [f64; 4]) {
    let xf = (x - x.floor()) * n as f64;
    let i0 = xf.floor() as i64;
    let s = xf - i0 as f64;
    let ni = n as i64;
    let wrap = |v: i64| (((v % ni) + ni) % ni) as usize;
    (
        [wrap(i0 - 1), wrap(i0), wrap(i0 + 1), wrap(i0 + 2)],
        catmull_rom_weights(s),
    )
}

/// Interpolate a periodic scalar grid (nodes at i/n) at torus point `p`.
pub fn tricubic(data: &Array3<f64>, p: Vec3) -> f64 {
    let n = data.dim().0;
    let (ix, wx) = axis_stencil(p[0], n);
    let (iy, wy) = axis_stencil(p[1], n);
    let (iz, wz) = axis_stencil(p[2], n);
    let mut acc = 0.0;
    for a in 0..4 {
        let mut plane = 0.0;
        for b in 0..4 {
            let mut line = 0.0;
            for c in 0..4 {
                line += wz[c] * data[[ix[a], iy[b], iz[c]]];
            }
            plane += wy[b] * line;
        }
        acc += wx[a] * plane;
    }
    acc
}

/// Interpolate three component grids at once.
pub fn tricubic_vec(data: &[Array3<f64>; 3], p: Vec3) -> Vec3 {
    [
        tricubic(&data[0], p),
        tricubic(&data[1], p),
        tricubic(&data[2], p),
    ]
}

#[inline]
fn catmull_rom_weights_deriv(s: f64) -> [f64; 4] {
    let s2 = s * s;
    [
        0.5 * (-3.0 * s2 + 4.0 * s - 1.0),
        0.5 * (9.0 * s2 - 10.0 * s),
        0.5 * (-9.0 * s2 + 8.0 * s + 1.0),
        0.5 * (3.0 * s2 - 2.0 * s),
    ]
}

/// Partial derivative of the tricubic interpolant along `axis`.
pub fn tricubic_partial(data: &Array3<f64>, p: Vec3, axis: usize) -> f64 {
    let n = data.dim().0;
    let mut idx = [[0usize; 4]; 3];
    let mut w = [[0f64; 4]; 3];
    for a in 0..3 {
        let (i, ww) = axis_stencil(p[a], n);
        idx[a] = i;
        w[a] = ww;
    }
    // Replace the weights along `axis` by derivative weights (chain rule
    // factor n from torus coordinate to stencil parameter).
    {
        let xf = (p[axis] - p[axis].floor()) * n as f64;
        let s = xf - xf.floor();
        w[axis] = catmull_rom_weights_deriv(s);
        for v in &mut w[axis] {
            *v *= n as f64;
        }
    }
    let mut acc = 0.0;
    for a in 0..4 {
        let mut plane = 0.0;
        for b in 0..4 {
            let mut line = 0.0;
            for c in 0..4 {
                line += w[2][c] * data[[idx[0][a], idx[1][b], idx[2][c]]];
            }
            plane += w[1][b] * line;
        }
        acc += w[0][a] * plane;
    }
    acc
}
