//! Periodic pseudo-spectral utilities: 3d FFTs, derivatives, the Leray
//! projector, dealiasing, and spectral norms on the unit torus.
//!
//! Conventions: a real field `u` on the collocated grid `x_i = i/n` is
//! expanded as `u(x) = sum_k uhat(k) exp(2 pi i k.x)` with integer
//! wavenumbers `k in [-n/2, n/2)`. `forward` returns the coefficients
//! `uhat` (normalized), `inverse` evaluates the sum on the grid.

use ndarray::{Array3, Zip};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

/// Integer wavenumber for index `i` on an `n`-point grid.
#[inline]
pub fn freq(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Cached FFT plans for one cubic resolution.
pub struct Fft3 {
    pub n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft3 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft3 {
            n,
            fwd: planner.plan_fft(n, FftDirection::Forward),
            inv: planner.plan_fft(n, FftDirection::Inverse),
        }
    }

    fn lanes_in_place(&self, data: &mut Array3<Complex64>, fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let slice = data.as_slice_mut().expect("standard layout");
        let scratch_len = fft.get_inplace_scratch_len();
        slice
            .par_chunks_mut(n)
            .for_each_init(
                || vec![Complex64::default(); scratch_len],
                |scratch, lane| fft.process_with_scratch(lane, scratch),
            );
    }

    /// In-place complex transform along every axis. `forward = true` applies
    /// exp(-2 pi i k.x) sums, without normalization.
    fn transform(&self, data: &mut Array3<Complex64>, forward: bool) {
        let fft = if forward { &self.fwd } else { &self.inv };
        for _ in 0..3 {
            self.lanes_in_place(data, fft);
            // Cycle axes so each one takes a turn as the contiguous last axis.
            let rotated = data.view().permuted_axes([2, 0, 1]).to_owned();
            *data = rotated.as_standard_layout().to_owned();
        }
    }

    /// Fourier coefficients of a real field.
    pub fn forward(&self, field: &Array3<f64>) -> Array3<Complex64> {
        let mut c = field.mapv(|v| Complex64::new(v, 0.0));
        self.transform(&mut c, true);
        let norm = 1.0 / (self.n as f64).powi(3);
        c.mapv_inplace(|v| v * norm);
        c
    }

    /// Evaluate a coefficient array on the grid, returning the real part.
    pub fn inverse(&self, spec: &Array3<Complex64>) -> Array3<f64> {
        let mut c = spec.clone();
        self.transform(&mut c, false);
        c.mapv(|v| v.re)
    }

    /// Build a coefficient array from a closure over integer wavenumbers.
    pub fn from_modes<F>(&self, f: F) -> Array3<Complex64>
    where
        F: Fn([i64; 3]) -> Complex64 + Sync,
    {
        let n = self.n;
        let mut spec = Array3::zeros((n, n, n));
        let slice = spec.as_slice_mut().unwrap();
        slice
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(row, lane)| {
                let i = row / n;
                let j = row % n;
                let ki = freq(i, n);
                let kj = freq(j, n);
                for (k, v) in lane.iter_mut().enumerate() {
                    *v = f([ki, kj, freq(k, n)]);
                }
            });
        spec
    }
}

/// Zero the Nyquist planes (present for even `n`); keeps derivative
/// operators skew-symmetric.
pub fn kill_nyquist(spec: &mut Array3<Complex64>) {
    let n = spec.dim().0;
    if n % 2 != 0 {
        return;
    }
    let ny = n / 2;
    for axis in 0..3 {
        let mut view = spec.index_axis_mut(ndarray::Axis(axis), ny);
        view.fill(Complex64::new(0.0, 0.0));
    }
}

/// Spectral partial derivative along `axis`.
pub fn derivative(spec: &Array3<Complex64>, axis: usize) -> Array3<Complex64> {
    let n = spec.dim().0;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut out = spec.clone();
    kill_nyquist(&mut out);
    for ((i, j, k), v) in out.indexed_iter_mut() {
        let kk = [freq(i, n), freq(j, n), freq(k, n)];
        *v *= Complex64::new(0.0, two_pi * kk[axis] as f64);
    }
    out
}

/// Spectral divergence of a vector spectrum.
pub fn divergence_spec(spec: &[Array3<Complex64>; 3]) -> Array3<Complex64> {
    let n = spec[0].dim().0;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut out: Array3<Complex64> = Array3::zeros(spec[0].raw_dim());
    for ((i, j, k), v) in out.indexed_iter_mut() {
        let kk = [freq(i, n), freq(j, n), freq(k, n)];
        let mut s = Complex64::new(0.0, 0.0);
        for a in 0..3 {
            let kf = kk[a];
            if 2 * kf.unsigned_abs() as usize == n {
                continue;
            }
            s += Complex64::new(0.0, two_pi * kf as f64) * spec[a][[i, j, k]];
        }
        *v = s;
    }
    out
}

/// Project a vector spectrum onto its divergence-free part (in place).
/// The mean (k = 0) component is untouched; Nyquist planes are zeroed.
pub fn leray_project(spec: &mut [Array3<Complex64>; 3]) {
    let n = spec[0].dim().0;
    for a in spec.iter_mut() {
        kill_nyquist(a);
    }
    // Safe split: operate index-wise.
    let dims = spec[0].raw_dim();
    let mut proj: Vec<Array3<Complex64>> = spec.to_vec();
    for ((i, j, k), _) in Array3::<f64>::zeros(dims).indexed_iter() {
        let kk = [
            freq(i, n) as f64,
            freq(j, n) as f64,
            freq(k, n) as f64,
        ];
        let k2 = kk[0] * kk[0] + kk[1] * kk[1] + kk[2] * kk[2];
        if k2 == 0.0 {
            continue;
        }
        let dot = kk[0] * proj[0][[i, j, k]] + kk[1] * proj[1][[i, j, k]]
            + kk[2] * proj[2][[i, j, k]];
        for a in 0..3 {
            proj[a][[i, j, k]] -= kk[a] / k2 * dot;
        }
    }
    for (a, p) in spec.iter_mut().zip(proj) {
        *a = p;
    }
}

/// Zero all modes with any |k_a| > n/3 (2/3-rule dealiasing).
pub fn dealias(spec: &mut Array3<Complex64>) {
    let n = spec.dim().0;
    let cut = n as i64 / 3;
    for ((i, j, k), v) in spec.indexed_iter_mut() {
        if freq(i, n).abs() > cut || freq(j, n).abs() > cut || freq(k, n).abs() > cut {
            *v = Complex64::new(0.0, 0.0);
        }
    }
}

/// Grid L2 norm over the unit torus (cell-weighted).
pub fn l2_norm(field: &Array3<f64>) -> f64 {
    let n3 = field.len() as f64;
    (field.iter().map(|v| v * v).sum::<f64>() / n3).sqrt()
}

/// Weighted grid L2 norm: `sqrt(sum w u^2 / n^3)`.
pub fn l2_norm_weighted(field: &Array3<f64>, weight: &Array3<f64>) -> f64 {
    let n3 = field.len() as f64;
    let mut s = 0.0;
    Zip::from(field).and(weight).for_each(|u, w| s += w * u * u);
    (s / n3).sqrt()
}

/// Spectral Sobolev seminorm of order `s` of a vector spectrum:
/// `sqrt(sum_k |2 pi k|^{2s} |uhat|^2)`.
pub fn sobolev_norm(spec: &[Array3<Complex64>; 3], s: i32) -> f64 {
    let n = spec[0].dim().0;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut acc = 0.0;
    for a in 0..3 {
        for ((i, j, k), v) in spec[a].indexed_iter() {
            let kk = [freq(i, n) as f64, freq(j, n) as f64, freq(k, n) as f64];
            let k2 = (two_pi * two_pi) * (kk[0] * kk[0] + kk[1] * kk[1] + kk[2] * kk[2]);
            acc += k2.powi(s) * v.norm_sqr();
        }
    }
    acc.sqrt()
}

/// Relative spectral divergence of a vector field given in physical space:
/// `||div u||_{L2} / ||grad u||_{L2}` (zero fields give zero).
pub fn relative_divergence(fft: &Fft3, u: &[Array3<f64>; 3]) -> f64 {
    let spec = [fft.forward(&u[0]), fft.forward(&u[1]), fft.forward(&u[2])];
    let div = divergence_spec(&spec);
    let div_l2: f64 = div.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let grad_l2 = sobolev_norm(&spec, 1);
    if grad_l2 == 0.0 {
        0.0
    } else {
        div_l2 / grad_l2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn grid_fn(n: usize, f: impl Fn(f64, f64, f64) -> f64) -> Array3<f64> {
        let mut a = Array3::zeros((n, n, n));
        for ((i, j, k), v) in a.indexed_iter_mut() {
            let h = 1.0 / n as f64;
            *v = f(i as f64 * h, j as f64 * h, k as f64 * h);
        }
        a
    }

    #[test]
    fn roundtrip_and_coefficients() {
        let n = 16;
        let fft = Fft3::new(n);
        let tau = 2.0 * std::f64::consts::PI;
        let field = grid_fn(n, |x, y, _z| (tau * x).cos() + 0.5 * (tau * 2.0 * y).sin());
        let spec = fft.forward(&field);
        // cos(2 pi x) -> 1/2 at k = (1,0,0) and (-1,0,0).
        assert!((spec[[1, 0, 0]].re - 0.5).abs() < 1e-12);
        assert!((spec[[n - 1, 0, 0]].re - 0.5).abs() < 1e-12);
        // 0.5 sin(4 pi y) -> -+ i/4 at k_y = +-2.
        assert!((spec[[0, 2, 0]].im + 0.25).abs() < 1e-12);
        let back = fft.inverse(&spec);
        for (a, b) in field.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_sine() {
        let n = 32;
        let fft = Fft3::new(n);
        let tau = 2.0 * std::f64::consts::PI;
        let field = grid_fn(n, |x, _y, _z| (tau * 3.0 * x).sin());
        let spec = fft.forward(&field);
        let dx = fft.inverse(&derivative(&spec, 0));
        let want = grid_fn(n, |x, _y, _z| 3.0 * tau * (tau * 3.0 * x).cos());
        for (a, b) in dx.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn projector_kills_gradients_and_is_idempotent() {
        let n = 24;
        let fft = Fft3::new(n);
        let tau = 2.0 * std::f64::consts::PI;
        // Gradient of a scalar: projection must vanish (up to mean, zero here).
        let phi = grid_fn(n, |x, y, z| (tau * x).sin() * (tau * y).cos() * (tau * z).cos());
        let phis = fft.forward(&phi);
        let mut grad = [
            derivative(&phis, 0),
            derivative(&phis, 1),
            derivative(&phis, 2),
        ];
        leray_project(&mut grad);
        let back = fft.inverse(&grad[0]);
        assert!(back.iter().all(|v| v.abs() < 1e-10));

        // A solenoidal field is untouched; projection is idempotent.
        let u = [
            grid_fn(n, |x, y, _| (tau * x).sin() * (tau * y).cos()),
            grid_fn(n, |x, y, _| -(tau * x).cos() * (tau * y).sin()),
            grid_fn(n, |_, _, _| 0.0),
        ];
        let mut spec = [fft.forward(&u[0]), fft.forward(&u[1]), fft.forward(&u[2])];
        leray_project(&mut spec);
        let once = [
            fft.inverse(&spec[0]),
            fft.inverse(&spec[1]),
            fft.inverse(&spec[2]),
        ];
        for a in 0..3 {
            for (x, y) in once[a].iter().zip(u[a].iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let mut spec2 = spec.clone();
        leray_project(&mut spec2);
        for a in 0..3 {
            for (x, y) in spec2[a].iter().zip(spec[a].iter()) {
                assert!((x - y).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn projected_fields_are_divergence_free() {
        let n = 16;
        let fft = Fft3::new(n);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut u = [
            Array3::zeros((n, n, n)),
            Array3::zeros((n, n, n)),
            Array3::zeros((n, n, n)),
        ];
        for a in 0..3 {
            for v in u[a].iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let mut spec = [fft.forward(&u[0]), fft.forward(&u[1]), fft.forward(&u[2])];
        leray_project(&mut spec);
        let proj = [
            fft.inverse(&spec[0]),
            fft.inverse(&spec[1]),
            fft.inverse(&spec[2]),
        ];
        assert!(relative_divergence(&fft, &proj) < 1e-12);
    }
}
