//! Periodic fundamental solutions for the Laplace and anisotropic
//! divergence-form operators, driven by compactly supported radial sources.
//!
//! A "charge" is a unit-mass C-infinity bump `gamma` of small metric radius.
//! The potential `G` solves `div(B grad G) = gamma - 1` on the torus, where
//! `B = A^{-1}` (B = Id for the Laplace operator). Outside the bump support
//! the field coincides exactly with the one of a point source (Newton's
//! theorem in the transformed coordinates), so sums of such potentials with
//! zero total weight are exactly harmonic / A-harmonic away from the bumps.
//!
//! Evaluation splits `G = S + R` in Ewald fashion: `S` carries a Gaussian
//! screen and is band-limited, hence tabulated on a periodic grid and read by
//! tricubic interpolation; `R` is a radial difference of near-field profiles
//! that vanishes identically beyond a few screen widths, summed over the 27
//! nearest lattice images.

use crate::error::{Error, Result};
use crate::interp;
use crate::spectral::Fft3;
use crate::vec3::{self, Vec3};
use nalgebra::Matrix3;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Governing operator of the potential: `div grad` or `div(A^{-1} grad)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OperatorKind {
    Laplace,
    /// Darcy resistance matrix `A` (symmetric positive definite).
    AHarmonic([[f64; 3]; 3]),
}

/// Derived metric data for one operator.
#[derive(Debug, Clone)]
pub struct Operator {
    pub kind: OperatorKind,
    /// `A` itself (identity in Laplace mode).
    pub a: Matrix3<f64>,
    /// `B = A^{-1}`.
    pub b: Matrix3<f64>,
    /// Inverse Cholesky factor of `B`; metric radius is `|l_inv z|`.
    l_inv: Matrix3<f64>,
    pub sqrt_det_b: f64,
    pub lam_min_b: f64,
    pub lam_max_b: f64,
}

impl Operator {
    pub fn new(kind: OperatorKind) -> Result<Operator> {
        let a = match kind {
            OperatorKind::Laplace => Matrix3::identity(),
            OperatorKind::AHarmonic(m) => Matrix3::from_fn(|i, j| m[i][j]),
        };
        if (a - a.transpose()).norm() > 1e-10 * a.norm() {
            return Err(Error::NonSpdMatrix("matrix is not symmetric".into()));
        }
        let b = a
            .try_inverse()
            .ok_or_else(|| Error::NonSpdMatrix("matrix is singular".into()))?;
        let chol = nalgebra::Cholesky::new(b)
            .ok_or_else(|| Error::NonSpdMatrix("matrix is not positive definite".into()))?;
        let l = chol.l();
        let l_inv = l
            .try_inverse()
            .ok_or_else(|| Error::NonSpdMatrix("Cholesky factor not invertible".into()))?;
        let eig = b.symmetric_eigen();
        let lam_min_b = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let lam_max_b = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        Ok(Operator {
            kind,
            a,
            b,
            l_inv,
            sqrt_det_b: b.determinant().sqrt(),
            lam_min_b,
            lam_max_b,
        })
    }

    /// Metric radius `s = sqrt(z^T B^{-1} z) = |L^{-1} z|`.
    #[inline]
    pub fn metric_radius(&self, z: Vec3) -> f64 {
        let v = self.l_inv * nalgebra::Vector3::new(z[0], z[1], z[2]);
        v.norm()
    }

    /// Gradient of the metric radius, `A z / s`.
    #[inline]
    pub fn metric_radius_grad(&self, z: Vec3, s: f64) -> Vec3 {
        let v = self.a * nalgebra::Vector3::new(z[0], z[1], z[2]);
        [v[0] / s, v[1] / s, v[2] / s]
    }

    /// Quadratic form `k^T B k` for an integer mode.
    #[inline]
    pub fn mode_quadratic(&self, k: [i64; 3]) -> f64 {
        let v = nalgebra::Vector3::new(k[0] as f64, k[1] as f64, k[2] as f64);
        (self.b * v).dot(&v)
    }
}

/// Cubic interpolation on a uniform 1d table (clamped ends).
fn cubic_1d(table: &[f64], dx: f64, x: f64) -> f64 {
    let m = table.len();
    let xf = (x / dx).clamp(0.0, (m - 1) as f64);
    let i = (xf.floor() as usize).min(m - 2);
    let s = xf - i as f64;
    let at = |j: i64| table[(j.clamp(0, m as i64 - 1)) as usize];
    let (f0, f1, f2, f3) = (at(i as i64 - 1), at(i as i64), at(i as i64 + 1), at(i as i64 + 2));
    let s2 = s * s;
    let s3 = s2 * s;
    0.5 * ((-s3 + 2.0 * s2 - s) * f0
        + (3.0 * s3 - 5.0 * s2 + 2.0) * f1
        + (-3.0 * s3 + 4.0 * s2 + s) * f2
        + (s3 - s2) * f3)
}

/// Radial profiles of the unit-mass C-infinity bump of radius `rho`:
/// density, free-space potential, and Fourier transform.
#[derive(Debug, Clone)]
pub struct BumpProfile {
    pub rho: f64,
    /// Second moment `int |x|^2 gamma dx`.
    pub second_moment: f64,
    dr: f64,
    gamma: Vec<f64>,
    dgamma: Vec<f64>,
    phi: Vec<f64>,
    dphi: Vec<f64>,
    d2phi: Vec<f64>,
    dv: f64,
    hat: Vec<f64>,
}

impl BumpProfile {
    /// `vmax` bounds the metric wavenumber magnitude the transform table
    /// must cover.
    pub fn new(rho: f64, vmax: f64) -> BumpProfile {
        let m = 4096usize;
        let dr = rho / (m - 1) as f64;
        // Raw bump b(s) = exp(-1/(1-s^2)) on [0,1).
        let raw = |s: f64| {
            if s >= 1.0 {
                0.0
            } else {
                (-1.0 / (1.0 - s * s)).exp()
            }
        };
        let mut gamma: Vec<f64> = (0..m).map(|i| raw(i as f64 * dr / rho)).collect();
        // Normalize to unit mass with the same composite rule used below.
        let mut mass = 0.0;
        let mut masses = vec![0.0; m];
        for i in 1..m {
            let r0 = (i - 1) as f64 * dr;
            let r1 = i as f64 * dr;
            mass += 0.5 * dr * (gamma[i - 1] * r0 * r0 + gamma[i] * r1 * r1) * FOUR_PI;
            masses[i] = mass;
        }
        let scale = 1.0 / mass;
        for g in &mut gamma {
            *g *= scale;
        }
        for msr in &mut masses {
            *msr *= scale;
        }
        let mut second_moment = 0.0;
        for i in 1..m {
            let r0 = (i - 1) as f64 * dr;
            let r1 = i as f64 * dr;
            second_moment +=
                0.5 * dr * (gamma[i - 1] * r0.powi(4) + gamma[i] * r1.powi(4)) * FOUR_PI;
        }
        // Density derivative (central differences on the fine grid).
        let mut dgamma = vec![0.0; m];
        for i in 1..m - 1 {
            dgamma[i] = (gamma[i + 1] - gamma[i - 1]) / (2.0 * dr);
        }
        dgamma[m - 1] = (gamma[m - 1] - gamma[m - 2]) / dr;
        // Potential: phi'(r) = M(r)/(4 pi r^2), phi(rho) = -1/(4 pi rho).
        let mut dphi = vec![0.0; m];
        for i in 1..m {
            let r = i as f64 * dr;
            dphi[i] = masses[i] / (FOUR_PI * r * r);
        }
        let mut phi = vec![0.0; m];
        phi[m - 1] = -1.0 / (FOUR_PI * rho);
        for i in (0..m - 1).rev() {
            phi[i] = phi[i + 1] - 0.5 * dr * (dphi[i] + dphi[i + 1]);
        }
        // phi''(r) = gamma(r) - 2 phi'(r)/r, with the r -> 0 limit gamma(0)/3.
        let mut d2phi = vec![0.0; m];
        d2phi[0] = gamma[0] / 3.0;
        for i in 1..m {
            let r = i as f64 * dr;
            d2phi[i] = gamma[i] - 2.0 * dphi[i] / r;
        }
        // Fourier transform gamma_hat(v) = 4 pi int gamma(r) r^2 sinc(2 pi v r) dr.
        let mv = 8192usize;
        let dv = vmax / (mv - 1) as f64;
        let (nodes, weights) = gauss_legendre_01(48);
        let hat: Vec<f64> = (0..mv)
            .map(|iv| {
                let v = iv as f64 * dv;
                let mut acc = 0.0;
                for (&t, &w) in nodes.iter().zip(weights.iter()) {
                    let r = t * rho;
                    let g = cubic_1d(&gamma, dr, r);
                    let arg = 2.0 * std::f64::consts::PI * v * r;
                    let sinc = if arg.abs() < 1e-8 { 1.0 } else { arg.sin() / arg };
                    acc += w * g * r * r * sinc;
                }
                FOUR_PI * rho * acc
            })
            .collect();
        BumpProfile {
            rho,
            second_moment,
            dr,
            gamma,
            dgamma,
            phi,
            dphi,
            d2phi,
            dv,
            hat,
        }
    }

    /// Unit-mass density at radius `r` (zero beyond `rho`).
    pub fn density(&self, r: f64) -> f64 {
        if r >= self.rho {
            0.0
        } else {
            cubic_1d(&self.gamma, self.dr, r)
        }
    }

    pub fn density_deriv(&self, r: f64) -> f64 {
        if r >= self.rho {
            0.0
        } else {
            cubic_1d(&self.dgamma, self.dr, r)
        }
    }

    /// Free-space potential of the bump; `-1/(4 pi r)` beyond `rho`.
    pub fn potential(&self, r: f64) -> f64 {
        if r >= self.rho {
            -1.0 / (FOUR_PI * r)
        } else {
            cubic_1d(&self.phi, self.dr, r)
        }
    }

    pub fn potential_deriv(&self, r: f64) -> f64 {
        if r >= self.rho {
            1.0 / (FOUR_PI * r * r)
        } else {
            cubic_1d(&self.dphi, self.dr, r)
        }
    }

    pub fn potential_second_deriv(&self, r: f64) -> f64 {
        if r >= self.rho {
            -2.0 / (FOUR_PI * r * r * r)
        } else {
            cubic_1d(&self.d2phi, self.dr, r)
        }
    }

    /// Fourier transform at wavenumber magnitude `v`; `hat(0) = 1`.
    pub fn transform(&self, v: f64) -> f64 {
        cubic_1d(&self.hat, self.dv, v)
    }
}

/// Gauss-Legendre nodes/weights on [0,1].
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Newton iteration on Legendre polynomials over [-1,1], then map.
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0f64, x);
        for j in 2..=n {
            let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes.push(x);
        weights.push(w);
    }
    let mut xs = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    for i in 0..n {
        let (x, w) = if i < m {
            (-nodes[i], weights[i])
        } else {
            (nodes[n - 1 - i], weights[n - 1 - i])
        };
        xs.push(0.5 * (x + 1.0));
        ws.push(0.5 * w);
    }
    (xs, ws)
}

/// Screened Gaussian potential `-erf(s / (sqrt(2) sigma)) / (4 pi s)` and its
/// radial derivative, with small-argument series.
fn gauss_potential(s: f64, sigma: f64) -> f64 {
    let a = 1.0 / (std::f64::consts::SQRT_2 * sigma);
    let as_ = a * s;
    if as_ < 1e-4 {
        let c = 2.0 / std::f64::consts::PI.sqrt();
        -(c * a) * (1.0 - as_ * as_ / 3.0) / FOUR_PI
    } else {
        -libm::erf(as_) / (FOUR_PI * s)
    }
}

fn gauss_potential_deriv(s: f64, sigma: f64) -> f64 {
    let a = 1.0 / (std::f64::consts::SQRT_2 * sigma);
    let as_ = a * s;
    let c = 2.0 / std::f64::consts::PI.sqrt();
    if as_ < 1e-4 {
        c * a * a * a * s * (2.0 / 3.0 - 0.4 * as_ * as_) / FOUR_PI
    } else {
        (libm::erf(as_) - c * as_ * (-as_ * as_).exp()) / (FOUR_PI * s * s)
    }
}

fn gauss_potential_second_deriv(s: f64, sigma: f64) -> f64 {
    let a = 1.0 / (std::f64::consts::SQRT_2 * sigma);
    let as_ = a * s;
    let c = 2.0 / std::f64::consts::PI.sqrt();
    if as_ < 1e-4 {
        (2.0 * c / 3.0) * a * a * a * (1.0 - 1.8 * as_ * as_) / FOUR_PI
    } else {
        let n = libm::erf(as_) - c * as_ * (-as_ * as_).exp();
        let np = 2.0 * c * a * a * a * s * s * (-as_ * as_).exp();
        np / (FOUR_PI * s * s) - 2.0 * n / (FOUR_PI * s * s * s)
    }
}

/// Tabulated periodic potential for one operator and one charge-bump shape.
pub struct GreensTable {
    pub op: Operator,
    pub sigma: f64,
    pub bump: BumpProfile,
    pub table_n: usize,
    s_val: Array3<f64>,
    s_grad: [Array3<f64>; 3],
    /// Mean of the free-space near-part profile, subtracted so that `G` has
    /// zero mean regardless of the screen width.
    near_mean: f64,
}

impl GreensTable {
    /// Build the table. `bump_radius` is the metric radius of the charge
    /// bump; `table_n` the tabulation grid (128 is the accuracy/memory
    /// sweet spot).
    pub fn build(kind: OperatorKind, bump_radius: f64, table_n: usize) -> Result<GreensTable> {
        // Screen width: wide enough for the table's Nyquist headroom, narrow
        // enough that the 27-image near part is exact.
        let op = Operator::new(kind.clone())?;
        let k_eff = 0.4 * table_n as f64;
        let sigma_min = 1.231 / (op.lam_min_b.sqrt() * k_eff);
        let sigma = (0.045f64).max(sigma_min);
        Self::build_with_sigma(kind, bump_radius, table_n, sigma)
    }

    /// Build with an explicit Ewald screen width (tests exercise the
    /// invariance of `G` under this choice).
    pub fn build_with_sigma(
        kind: OperatorKind,
        bump_radius: f64,
        table_n: usize,
        sigma: f64,
    ) -> Result<GreensTable> {
        let op = Operator::new(kind)?;
        if !(bump_radius > 0.0 && bump_radius < 0.25) {
            return Err(Error::InvalidSpec(format!(
                "charge bump radius {bump_radius} out of range"
            )));
        }
        let sigma_max = 0.186 / op.lam_max_b.sqrt();
        if sigma > sigma_max {
            return Err(Error::InvalidSpec(format!(
                "operator too anisotropic for the Ewald split (sigma {sigma} > {sigma_max})"
            )));
        }
        let vmax = 3.0f64.sqrt() * (table_n as f64 / 2.0 + 2.0) * op.lam_max_b.sqrt();
        let bump = BumpProfile::new(bump_radius, vmax);
        // Band-limited part S: Shat(k) = -exp(-2 pi^2 sigma^2 q)/(4 pi^2 q),
        // q = k^T B k.
        let fft = Fft3::new(table_n);
        let two_pi2 = 2.0 * std::f64::consts::PI * std::f64::consts::PI;
        let spec = fft.from_modes(|k| {
            if k == [0, 0, 0] {
                return rustfft::num_complex::Complex64::new(0.0, 0.0);
            }
            let q = op.mode_quadratic(k);
            let val = -(-two_pi2 * sigma * sigma * q).exp() / (2.0 * two_pi2 * q);
            rustfft::num_complex::Complex64::new(val, 0.0)
        });
        let s_val = fft.inverse(&spec);
        let mut s_grad = Vec::with_capacity(3);
        for axis in 0..3 {
            let d = crate::spectral::derivative(&spec, axis);
            s_grad.push(fft.inverse(&d));
        }
        let s_grad: [Array3<f64>; 3] = match s_grad.try_into() {
            Ok(g) => g,
            Err(_) => unreachable!(),
        };
        let near_mean = (bump.second_moment - 3.0 * sigma * sigma) / 6.0;
        Ok(GreensTable {
            op,
            sigma,
            bump,
            table_n,
            s_val,
            s_grad,
            near_mean,
        })
    }

    /// Euclidean radius beyond which the near part vanishes identically and a
    /// displacement cannot intersect the bump support.
    pub fn near_cutoff(&self) -> f64 {
        let s_cut = (8.06 * self.sigma).max(self.bump.rho);
        s_cut * self.op.lam_max_b.sqrt()
    }

    /// Near part `R` and its gradient at displacement `z` (any reals).
    fn near_part(&self, z: Vec3) -> (f64, Vec3) {
        let zt = vec3::periodic_delta(z, [0.0; 3]);
        let cut = self.near_cutoff();
        let mut val = -self.near_mean;
        let mut grad = [0.0; 3];
        for off in vec3::lattice_offsets() {
            let d = vec3::sub(zt, off);
            let euclid = vec3::norm(d);
            if euclid > cut + 1e-12 {
                continue;
            }
            let s = self.op.metric_radius(d);
            let f = (self.bump.potential(s) - gauss_potential(s, self.sigma)) / self.op.sqrt_det_b;
            let df =
                (self.bump.potential_deriv(s) - gauss_potential_deriv(s, self.sigma))
                    / self.op.sqrt_det_b;
            val += f;
            if s > 1e-14 {
                let gs = self.op.metric_radius_grad(d, s);
                for a in 0..3 {
                    grad[a] += df * gs[a];
                }
            }
        }
        (val, grad)
    }

    /// Periodic potential `G(z)`; `z` is the displacement from the charge.
    pub fn potential(&self, z: Vec3) -> f64 {
        let s = interp::tricubic(&self.s_val, z);
        s + self.near_part(z).0
    }

    /// Potential and gradient in one evaluation.
    pub fn potential_grad(&self, z: Vec3) -> (f64, Vec3) {
        let v = interp::tricubic(&self.s_val, z);
        let g = [
            interp::tricubic(&self.s_grad[0], z),
            interp::tricubic(&self.s_grad[1], z),
            interp::tricubic(&self.s_grad[2], z),
        ];
        let (rv, rg) = self.near_part(z);
        (v + rv, vec3::add(g, rg))
    }

    /// Gradient only, with an early exit far from the charge where the near
    /// part vanishes (the common case along particle paths).
    #[inline]
    pub fn grad(&self, z: Vec3) -> Vec3 {
        let g = [
            interp::tricubic(&self.s_grad[0], z),
            interp::tricubic(&self.s_grad[1], z),
            interp::tricubic(&self.s_grad[2], z),
        ];
        let zt = vec3::periodic_delta(z, [0.0; 3]);
        if vec3::norm(zt) > self.near_cutoff() + 0.5 {
            return g;
        }
        let (_, rg) = self.near_part(z);
        vec3::add(g, rg)
    }

    /// Hessian of the potential (row-major symmetric 3x3). The band-limited
    /// part is differentiated through the gradient-table interpolant; the
    /// near part analytically.
    pub fn potential_hess(&self, z: Vec3) -> [[f64; 3]; 3] {
        let mut h = [[0.0; 3]; 3];
        for i in 0..3 {
            for a in 0..3 {
                h[i][a] = interp::tricubic_partial(&self.s_grad[i], z, a);
            }
        }
        // Symmetrize the interpolation noise.
        for i in 0..3 {
            for a in (i + 1)..3 {
                let m = 0.5 * (h[i][a] + h[a][i]);
                h[i][a] = m;
                h[a][i] = m;
            }
        }
        let zt = vec3::periodic_delta(z, [0.0; 3]);
        let cut = self.near_cutoff();
        for off in vec3::lattice_offsets() {
            let d = vec3::sub(zt, off);
            if vec3::norm(d) > cut + 1e-12 {
                continue;
            }
            let s = self.op.metric_radius(d);
            if s < 1e-12 {
                continue;
            }
            let df = (self.bump.potential_deriv(s) - gauss_potential_deriv(s, self.sigma))
                / self.op.sqrt_det_b;
            let d2f = (self.bump.potential_second_deriv(s)
                - gauss_potential_second_deriv(s, self.sigma))
                / self.op.sqrt_det_b;
            let gs = self.op.metric_radius_grad(d, s);
            let av = self.op.a * nalgebra::Vector3::new(d[0], d[1], d[2]);
            for i in 0..3 {
                for a in 0..3 {
                    // hess s = A/s - (A z)(A z)^T / s^3
                    let hess_s = self.op.a[(i, a)] / s - av[i] * av[a] / (s * s * s);
                    h[i][a] += d2f * gs[i] * gs[a] + df * hess_s;
                }
            }
        }
        h
    }

    /// Source density `gamma_B(z)` (periodicized; bump supports never wrap).
    pub fn source_density(&self, z: Vec3) -> f64 {
        let zt = vec3::periodic_delta(z, [0.0; 3]);
        if vec3::norm(zt) > self.bump.rho * self.op.lam_max_b.sqrt() {
            return 0.0;
        }
        let s = self.op.metric_radius(zt);
        self.bump.density(s) / self.op.sqrt_det_b
    }

    /// Source density gradient.
    pub fn source_density_grad(&self, z: Vec3) -> Vec3 {
        let zt = vec3::periodic_delta(z, [0.0; 3]);
        if vec3::norm(zt) > self.bump.rho * self.op.lam_max_b.sqrt() {
            return [0.0; 3];
        }
        let s = self.op.metric_radius(zt);
        if s < 1e-14 {
            return [0.0; 3];
        }
        let d = self.bump.density_deriv(s) / self.op.sqrt_det_b;
        let gs = self.op.metric_radius_grad(zt, s);
        [d * gs[0], d * gs[1], d * gs[2]]
    }

    /// Fourier coefficient of the source bump at integer mode `k`.
    pub fn mode_source(&self, k: [i64; 3]) -> f64 {
        self.bump.transform(self.op.mode_quadratic(k).sqrt())
    }

    /// Fourier coefficient of the potential at integer mode `k` (zero mean).
    pub fn mode_potential(&self, k: [i64; 3]) -> f64 {
        if k == [0, 0, 0] {
            return 0.0;
        }
        let q = self.op.mode_quadratic(k);
        -self.mode_source(k) / (4.0 * std::f64::consts::PI * std::f64::consts::PI * q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_profile_mass_and_transform() {
        let b = BumpProfile::new(0.03, 200.0);
        assert!((b.transform(0.0) - 1.0).abs() < 1e-10);
        // Potential matches the point-source one at and beyond the radius.
        assert!((b.potential(0.03) + 1.0 / (FOUR_PI * 0.03)).abs() < 1e-12);
        assert!((b.potential(0.1) + 1.0 / (FOUR_PI * 0.1)).abs() < 1e-12);
        // Transform decays.
        assert!(b.transform(150.0).abs() < 0.05);
    }

    #[test]
    fn gauss_series_matches_closed_form() {
        let sigma = 0.04;
        let s = 1e-4 * 0.9 * std::f64::consts::SQRT_2 * sigma;
        let closed = -libm::erf(s / (std::f64::consts::SQRT_2 * sigma)) / (FOUR_PI * s);
        assert!((gauss_potential(s, sigma) - closed).abs() < 1e-12 * closed.abs());
    }

    #[test]
    fn split_is_independent_of_screen_parameters() {
        // The same G must come out of two different (sigma, table) splits.
        let t1 = GreensTable::build(OperatorKind::Laplace, 0.03, 96).unwrap();
        let t2 =
            GreensTable::build_with_sigma(OperatorKind::Laplace, 0.03, 128, 0.0675).unwrap();
        for p in [
            [0.21, 0.07, 0.93],
            [0.5, 0.5, 0.5],
            [0.02, 0.0, 0.0],
            [0.08, 0.31, 0.77],
        ] {
            let (v1, g1) = t1.potential_grad(p);
            let (v2, g2) = t2.potential_grad(p);
            assert!((v1 - v2).abs() < 1e-4, "{p:?}: {v1} vs {v2}");
            let scale = 1.0 + vec3::norm(g1);
            for a in 0..3 {
                assert!(
                    (g1[a] - g2[a]).abs() < 1e-3 * scale,
                    "{p:?} grad: {g1:?} vs {g2:?}"
                );
            }
        }
    }

    #[test]
    fn background_laplacian_far_from_charge() {
        // div(grad G) = gamma - 1, so away from the bump the finite-difference
        // Laplacian of G must be -1.
        let t = GreensTable::build(OperatorKind::Laplace, 0.03, 128).unwrap();
        let p = [0.43, 0.29, 0.61];
        // Step spanning two table cells: second differences of the tricubic
        // interpolant are only meaningful across cells.
        let h = 1.0 / 64.0;
        let mut lap = 0.0;
        for a in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[a] += h;
            lo[a] -= h;
            lap += (t.potential(hi) - 2.0 * t.potential(p) + t.potential(lo)) / (h * h);
        }
        assert!((lap + 1.0).abs() < 5e-2, "laplacian {lap}");
    }

    #[test]
    fn anisotropic_operator_round_trip() {
        let a = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let t = GreensTable::build(OperatorKind::AHarmonic(a), 0.03, 128).unwrap();
        // div(B grad G) = gamma - 1 via finite differences, B = diag(1/2,1,1).
        let p = [0.37, 0.22, 0.71];
        let h = 1.0 / 64.0;
        let b = [0.5, 1.0, 1.0];
        let mut op = 0.0;
        for ax in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[ax] += h;
            lo[ax] -= h;
            op += b[ax] * (t.potential(hi) - 2.0 * t.potential(p) + t.potential(lo)) / (h * h);
        }
        assert!((op + 1.0).abs() < 5e-2, "operator value {op}");
        assert!(t.mode_source([0, 0, 0]) > 0.999);
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let t = GreensTable::build(OperatorKind::Laplace, 0.03, 96).unwrap();
        for p in [[0.2, 0.05, 0.9], [0.04, 0.02, 0.01], [0.5, 0.25, 0.4]] {
            let h = t.potential_hess(p);
            let step = 1e-5;
            for a in 0..3 {
                let mut hi = p;
                let mut lo = p;
                hi[a] += step;
                lo[a] -= step;
                let (_, ghi) = t.potential_grad(hi);
                let (_, glo) = t.potential_grad(lo);
                for i in 0..3 {
                    let fd = (ghi[i] - glo[i]) / (2.0 * step);
                    let scale = 1.0 + fd.abs();
                    // The table part is only piecewise-smooth at cell scale;
                    // accept a few percent.
                    assert!(
                        (fd - h[i][a]).abs() < 0.05 * scale,
                        "p {p:?} h[{i}][{a}]: {fd} vs {}",
                        h[i][a]
                    );
                }
            }
        }
    }

    #[test]
    fn non_spd_matrix_rejected() {
        let bad = [[1.0, 2.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(GreensTable::build(OperatorKind::AHarmonic(bad), 0.03, 64).is_err());
        let neg = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(GreensTable::build(OperatorKind::AHarmonic(neg), 0.03, 64).is_err());
    }
}
