//! Particle resistance matrices and cell correctors.
//!
//! The resistance matrix is the drag tensor of the reference particle from
//! the exterior Stokes problem: analytic `6 pi r Id` for balls, or a
//! penalized periodic-box solve with the leading periodic-image (simple
//! cubic lattice) correction removed for general shapes.
//!
//! The corrector interpolates between no-slip on each hole and the identity
//! far away through three layers per cell: the rescaled exterior solution up
//! to radius `eta/4`, a degree-one Stokes annulus solution up to `eta/2`
//! (closed form; the boundary data is degree one for ball particles), and
//! the identity beyond.

use crate::error::{Error, Result};
use crate::geometry::{Mode, ParticleShape, PerforatedDomain};
use crate::solver::{steady_stokes_drag, HoleMask};
use crate::vec3::{self, Vec3};
use nalgebra::{Matrix3, Matrix4, Vector4};
use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Drag tensor of the reference particle.
#[derive(Debug, Clone)]
pub struct ResistanceMatrix {
    pub entries: Matrix3<f64>,
    pub shape: ParticleShape,
    pub method: String,
    /// Crude error estimate (absolute, entrywise) for numeric solves.
    pub error_bar: f64,
}

impl ResistanceMatrix {
    pub fn validate(&self) -> Result<()> {
        let m = &self.entries;
        if (m - m.transpose()).norm() > 1e-8 {
            return Err(Error::NonSpdMatrix("resistance matrix not symmetric".into()));
        }
        let eig = m.symmetric_eigen();
        if eig.eigenvalues.iter().any(|l| *l <= 0.0) {
            return Err(Error::NonSpdMatrix(
                "resistance matrix not positive definite".into(),
            ));
        }
        Ok(())
    }

    pub fn as_rows(&self) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = self.entries[(i, j)];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ResistanceMethod {
    /// Classical Stokes drag `6 pi r Id` (balls only; the oracle).
    AnalyticBall,
    /// Truncated exterior problem in a periodic box of side
    /// `box_factor * bounding_radius`, volume-penalized at `grid_n`.
    NumericExterior {
        box_factor: f64,
        grid_n: usize,
        kappa: f64,
        /// Re-solve in a smaller box and fail if the drag moves > 10%.
        check_box: bool,
    },
}

/// Simple-cubic periodic-image drag factor `F_iso = F_per * D(a)`,
/// `D = 1 - 2.8373 a + 4.19 a^3 - 27.4 a^6` (a = radius / box side).
fn hasimoto_factor(a: f64) -> f64 {
    1.0 - 2.8373 * a + 4.19 * a.powi(3) - 27.4 * a.powi(6)
}

/// Penalization mask of a single particle centered in the unit box.
fn single_particle_mask(shape: &ParticleShape, scale: f64, n: usize, kappa: f64) -> HoleMask {
    let h = 1.0 / n as f64;
    let sub = 4usize;
    let mut rate: Array3<f64> = Array3::zeros((n, n, n));
    let mut solid: Array3<f64> = Array3::zeros((n, n, n));
    let center = [0.5, 0.5, 0.5];
    let inside = |p: Vec3| -> bool {
        let d = vec3::periodic_delta(p, center);
        match shape {
            ParticleShape::Ball { radius } => vec3::dot(d, d) <= (scale * radius).powi(2),
            ParticleShape::Ellipsoid { semi_axes } => {
                let mut s = 0.0;
                for a in 0..3 {
                    let ax = scale * semi_axes[a];
                    s += (d[a] / ax) * (d[a] / ax);
                }
                s <= 1.0
            }
        }
    };
    let bound = scale * shape.bounding_radius();
    for ((i, j, k), r) in rate.indexed_iter_mut() {
        let p = [i as f64 * h, j as f64 * h, k as f64 * h];
        let d = vec3::periodic_dist(p, center);
        let frac = if d <= bound - 1.8 * h && inside(p) {
            1.0
        } else if d > bound + 1.8 * h {
            0.0
        } else {
            let mut hits = 0usize;
            for a in 0..sub {
                for b in 0..sub {
                    for c in 0..sub {
                        let q = [
                            p[0] + ((a as f64 + 0.5) / sub as f64 - 0.5) * h,
                            p[1] + ((b as f64 + 0.5) / sub as f64 - 0.5) * h,
                            p[2] + ((c as f64 + 0.5) / sub as f64 - 0.5) * h,
                        ];
                        if inside(q) {
                            hits += 1;
                        }
                    }
                }
            }
            hits as f64 / (sub * sub * sub) as f64
        };
        *r = frac / kappa;
        solid[[i, j, k]] = frac;
    }
    HoleMask {
        n,
        rate,
        solid_frac: solid,
        sigma_max: 1.0 / kappa,
    }
}

fn numeric_exterior_once(
    shape: &ParticleShape,
    box_factor: f64,
    grid_n: usize,
    kappa: f64,
) -> Result<Matrix3<f64>> {
    // Unit periodic box; particle scaled so its bounding radius is 1/box_factor.
    let r_ref = shape.bounding_radius();
    let scale = 1.0 / (box_factor * r_ref);
    let mask = single_particle_mask(shape, scale, grid_n, kappa);
    let mut entries = Matrix3::zeros();
    for dir in 0..3 {
        let (force, _iters) = steady_stokes_drag(&mask, 1.0, dir, 1e-8, 4000)?;
        for j in 0..3 {
            entries[(j, dir)] = force[j];
        }
    }
    // Remove the leading periodic-image effect and scale back to the
    // reference particle (Stokes drag is linear in length).
    let a = scale * r_ref; // bounding radius in box units = 1/box_factor
    let d = hasimoto_factor(a);
    Ok(entries * d * box_factor * r_ref)
}

/// Compute the resistance matrix of the reference particle.
pub fn resistance_matrix(
    shape: &ParticleShape,
    method: ResistanceMethod,
) -> Result<ResistanceMatrix> {
    match method {
        ResistanceMethod::AnalyticBall => {
            let ParticleShape::Ball { radius } = shape else {
                return Err(Error::InvalidSpec(
                    "analytic resistance requires a ball particle".into(),
                ));
            };
            let m = ResistanceMatrix {
                entries: Matrix3::identity() * (6.0 * std::f64::consts::PI * radius),
                shape: *shape,
                method: "analytic_ball".into(),
                error_bar: 0.0,
            };
            m.validate()?;
            Ok(m)
        }
        ResistanceMethod::NumericExterior {
            box_factor,
            grid_n,
            kappa,
            check_box,
        } => {
            if box_factor < 16.0 {
                return Err(Error::InvalidSpec(format!(
                    "box factor must be at least 16, got {box_factor}"
                )));
            }
            let entries = numeric_exterior_once(shape, box_factor, grid_n, kappa)?;
            if check_box {
                let smaller =
                    numeric_exterior_once(shape, box_factor * 0.75, grid_n / 2 * 2, kappa)?;
                let change = (entries - smaller).norm() / entries.norm() * 100.0;
                if change > 10.0 {
                    return Err(Error::BoxTooSmall { change });
                }
            }
            // Error bar: next periodic-image order + penalization slip +
            // grid staircase.
            let a = 1.0 / box_factor;
            let r_ref = shape.bounding_radius();
            let h = 1.0 / grid_n as f64;
            let rel = 27.4 * a.powi(6) + (kappa.sqrt() / (a)).min(1.0) * 0.5 + 0.5 * h / a;
            let m = ResistanceMatrix {
                entries: 0.5 * (entries + entries.transpose()),
                shape: *shape,
                method: format!("numeric_exterior(box={box_factor},n={grid_n},kappa={kappa})"),
                error_bar: rel * entries.norm() * r_ref.max(1.0),
            };
            m.validate()?;
            Ok(m)
        }
    }
}

/// Exterior Stokes flow around the unit-BC ball of radius `r`:
/// velocity coefficients of `e` and `(e.yhat) yhat` at distance `rho`,
/// plus the pressure coefficient of `(e.yhat)`.
fn stokes_ball_coeffs(r: f64, rho: f64) -> (f64, f64, f64) {
    let ce = 3.0 * r / (4.0 * rho) + r.powi(3) / (4.0 * rho.powi(3));
    let cy = 3.0 * r / (4.0 * rho) - 3.0 * r.powi(3) / (4.0 * rho.powi(3));
    let cp = 1.5 * r / (rho * rho);
    (ce, cy, cp)
}

/// Degree-one Stokes solution in the annulus `1/4 <= rho <= 1/2` (unit
/// lengthscale): coefficients of the Stokeslet, potential-dipole, uniform,
/// and quadratic interior basis fields.
#[derive(Debug, Clone, Copy)]
struct AnnulusSolution {
    a: f64,
    b: f64,
    c: f64,
    e: f64,
}

impl AnnulusSolution {
    /// Solve for boundary data: at rho1 the coefficients `(e1, y1)` of `e`
    /// and `(e.yhat) yhat`; at rho2 the coefficients `(e2, y2)`.
    fn solve(rho1: f64, rho2: f64, e1: f64, y1: f64, e2: f64, y2: f64) -> AnnulusSolution {
        let row = |rho: f64| {
            (
                [3.0 / (4.0 * rho), 1.0 / (4.0 * rho.powi(3)), 1.0, rho * rho],
                [
                    3.0 / (4.0 * rho),
                    -3.0 / (4.0 * rho.powi(3)),
                    0.0,
                    -rho * rho / 2.0,
                ],
            )
        };
        let (re1, ry1) = row(rho1);
        let (re2, ry2) = row(rho2);
        let m = Matrix4::from_rows(&[
            nalgebra::RowVector4::from_row_slice(&re1),
            nalgebra::RowVector4::from_row_slice(&ry1),
            nalgebra::RowVector4::from_row_slice(&re2),
            nalgebra::RowVector4::from_row_slice(&ry2),
        ]);
        let rhs = Vector4::new(e1, y1, e2, y2);
        let sol = m.lu().solve(&rhs).expect("annulus system is invertible");
        AnnulusSolution {
            a: sol[0],
            b: sol[1],
            c: sol[2],
            e: sol[3],
        }
    }

    /// Velocity coefficients of `e` and `(e.yhat) yhat` at radius `rho`, and
    /// the pressure coefficient of `(e.yhat)`.
    fn eval(&self, rho: f64) -> (f64, f64, f64) {
        let ce = self.a * 3.0 / (4.0 * rho) + self.b / (4.0 * rho.powi(3)) + self.c
            + self.e * rho * rho;
        let cy = self.a * 3.0 / (4.0 * rho) - self.b * 3.0 / (4.0 * rho.powi(3))
            - self.e * rho * rho / 2.0;
        let cp = self.a * 1.5 / (rho * rho) + self.e * 5.0 * rho;
        (ce, cy, cp)
    }
}

/// The three-layer corrector `(w, q)` for one perforated domain.
#[derive(Debug, Clone)]
pub struct CorrectorField {
    pub domain: PerforatedDomain,
    pub eta_eps: f64,
    particle_radius: f64,
    annulus: AnnulusSolution,
}

/// Intermediate lengthscale default `eps^(max(beta,1) + 0.1)` clamped into
/// `[eps^alpha, eps]` (a configuration choice, not mandated).
pub fn default_eta(eps: f64, alpha: f64, beta: f64) -> f64 {
    eps.powf(beta.max(1.0) + 0.1)
        .clamp(eps.powf(alpha), eps)
}

/// Build the corrector for a ball-particle domain.
pub fn build_corrector(domain: &PerforatedDomain, eta_eps: f64) -> Result<CorrectorField> {
    let eps = domain.eps();
    let lo = eps.powf(domain.spec.alpha);
    if !(eta_eps >= lo * (1.0 - 1e-12) && eta_eps <= eps * (1.0 + 1e-12)) {
        return Err(Error::LengthscaleOutOfRange {
            eta: eta_eps,
            lo,
            hi: eps,
        });
    }
    let ParticleShape::Ball { radius } = domain.spec.particle else {
        return Err(Error::InvalidSpec(
            "correctors are built for ball particles (the analytic exterior solution)".into(),
        ));
    };
    // Inner boundary of the annulus carries the rescaled exterior solution.
    let s = domain.hole_scale; // eps^alpha
    let z1 = eta_eps / (4.0 * s); // |y|/eps^alpha at rho = eta/4
    let (ce, cy, _) = stokes_ball_coeffs(radius, z1);
    // Work in units of eta: rho1 = 1/4, rho2 = 1/2.
    let annulus = AnnulusSolution::solve(0.25, 0.5, 1.0 - ce, -cy, 1.0, 0.0);
    Ok(CorrectorField {
        domain: domain.clone(),
        eta_eps,
        particle_radius: radius,
        annulus,
    })
}

impl CorrectorField {
    /// Cell-local displacement from the nearest cell center, or `None`
    /// outside `K` (partial mode).
    fn cell_delta(&self, x: Vec3) -> Option<Vec3> {
        let d = &self.domain;
        let eps = d.eps();
        let n = d.spec.n as i64;
        let mut idx = [0i64; 3];
        for a in 0..3 {
            let rel = vec3::wrap_coord(x[a]) - d.k_lo[a];
            let i = (rel / eps).floor() as i64;
            match d.spec.mode {
                Mode::Full => idx[a] = ((i % n) + n) % n,
                Mode::Partial { .. } => {
                    if i < 0 || i >= n {
                        return None;
                    }
                    idx[a] = i;
                }
            }
        }
        let center = [
            d.k_lo[0] + (idx[0] as f64 + 0.5) * eps,
            d.k_lo[1] + (idx[1] as f64 + 0.5) * eps,
            d.k_lo[2] + (idx[2] as f64 + 0.5) * eps,
        ];
        Some(vec3::periodic_delta(x, center))
    }

    /// Corrector matrix `w` (columns `w_k`) and pressure row `q` at `x`.
    pub fn eval(&self, x: Vec3) -> (Matrix3<f64>, Vec3) {
        let Some(y) = self.cell_delta(x) else {
            return (Matrix3::identity(), [0.0; 3]);
        };
        let rho = vec3::norm(y);
        let s = self.domain.hole_scale;
        let hole_r = s * self.particle_radius;
        let eta = self.eta_eps;
        if rho <= hole_r {
            // Inside the particle: zero extension.
            return (Matrix3::zeros(), [0.0; 3]);
        }
        if rho >= eta / 2.0 {
            return (Matrix3::identity(), [0.0; 3]);
        }
        let yhat = vec3::scale(y, 1.0 / rho);
        let compose = |ce: f64, cy: f64, cp: f64| {
            // Column k: ce e_k + cy (e_k . yhat) yhat; pressure cp (e_k . yhat).
            let mut w = Matrix3::zeros();
            let mut q = [0.0; 3];
            for k in 0..3 {
                for i in 0..3 {
                    w[(i, k)] = ce * if i == k { 1.0 } else { 0.0 } + cy * yhat[k] * yhat[i];
                }
                q[k] = cp * yhat[k];
            }
            (w, q)
        };
        if rho < eta / 4.0 {
            // Rescaled exterior solution: w = Id - W(y/eps^alpha),
            // q = -q_stokes(y/eps^alpha) / eps^alpha.
            let z = rho / s;
            let (ce, cy, cp) = stokes_ball_coeffs(self.particle_radius, z);
            compose(1.0 - ce, -cy, -cp / s)
        } else {
            // Annulus layer in units of eta; pressure scales as 1/eta.
            let (ce, cy, cp) = self.annulus.eval(rho / eta);
            compose(ce, cy, cp / eta)
        }
    }

    /// Finite-difference gradient magnitude of `w` at `x` (diagnostic).
    pub fn grad_norm_fd(&self, x: Vec3, h: f64) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            let mut hi = x;
            let mut lo = x;
            hi[a] += h;
            lo[a] -= h;
            let (whi, _) = self.eval(hi);
            let (wlo, _) = self.eval(lo);
            s += ((whi - wlo) / (2.0 * h)).norm_squared();
        }
        s.sqrt()
    }
}

/// Empirical constants of the corrector pointwise bounds, sampled over the
/// inner layers of random cells.
#[derive(Debug, Clone)]
pub struct CorrectorBounds {
    /// max |Id - w| |y| / eps^alpha over samples in C u D.
    pub c_w: f64,
    /// max |grad w| |y|^2 / eps^alpha.
    pub c_gw: f64,
    /// max |q| |y|^2 / eps^alpha.
    pub c_q: f64,
    /// sup |w| + eps^alpha (sup |grad w| + sup |q|).
    pub l_inf_combo: f64,
    pub samples: usize,
}

/// Monte Carlo bounds report for the pointwise corrector estimates.
pub fn corrector_bounds_report(corr: &CorrectorField, samples: usize, seed: u64) -> CorrectorBounds {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = &corr.domain;
    let s = d.hole_scale;
    let hole_r = s * corr.particle_radius;
    let eta = corr.eta_eps;
    let mut c_w = 0.0f64;
    let mut c_gw = 0.0f64;
    let mut c_q = 0.0f64;
    let mut sup_w = 0.0f64;
    let mut sup_gw = 0.0f64;
    let mut sup_q = 0.0f64;
    let fd_h = (hole_r * 0.05).max(1e-7);
    for _ in 0..samples {
        // Random cell, random radius in (hole_r, eta/2), random direction.
        let ci = rng.gen_range(0..d.centers.len());
        let rho = hole_r + (eta / 2.0 - hole_r) * rng.gen::<f64>().powf(2.0);
        let dir = loop {
            let v = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = vec3::norm(v);
            if n > 1e-3 && n <= 1.0 {
                break vec3::scale(v, 1.0 / n);
            }
        };
        let x = vec3::wrap(vec3::add(d.centers[ci], vec3::scale(dir, rho)));
        let (w, q) = corr.eval(x);
        let id_minus = (Matrix3::identity() - w).norm();
        let qn = vec3::norm(q);
        let gw = corr.grad_norm_fd(x, fd_h.min(rho * 0.1));
        c_w = c_w.max(id_minus * rho / s);
        c_gw = c_gw.max(gw * rho * rho / s);
        c_q = c_q.max(qn * rho * rho / s);
        sup_w = sup_w.max(w.norm());
        sup_gw = sup_gw.max(gw);
        sup_q = sup_q.max(qn);
    }
    CorrectorBounds {
        c_w,
        c_gw,
        c_q,
        l_inf_combo: sup_w + s * (sup_gw + sup_q),
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_perforated_domain, DomainSpec};

    #[test]
    fn analytic_ball_drag() {
        let shape = ParticleShape::Ball { radius: 1.0 };
        let r = resistance_matrix(&shape, ResistanceMethod::AnalyticBall).unwrap();
        // 6 pi = 18.84955592...
        assert!((r.entries[(0, 0)] - 18.849_555_921_538_759).abs() < 1e-12);
        assert!((r.entries[(1, 1)] - r.entries[(0, 0)]).abs() < 1e-15);
        assert!(r.entries[(0, 1)].abs() < 1e-15);
        // Linearity in the radius: r = 1/8 gives 6 pi / 8.
        let small = resistance_matrix(
            &ParticleShape::Ball { radius: 0.125 },
            ResistanceMethod::AnalyticBall,
        )
        .unwrap();
        assert!((small.entries[(0, 0)] - 2.356_194_490_192_345).abs() < 1e-12);
        assert!(resistance_matrix(
            &ParticleShape::Ellipsoid { semi_axes: [0.1, 0.1, 0.05] },
            ResistanceMethod::AnalyticBall
        )
        .is_err());
    }

    fn test_domain(n: usize, alpha: f64) -> PerforatedDomain {
        build_perforated_domain(&DomainSpec {
            mode: Mode::Full,
            n,
            alpha,
            particle: ParticleShape::Ball { radius: 0.125 },
            rng_seed: 0,
        })
        .unwrap()
    }

    #[test]
    fn corrector_regions_and_boundary_values() {
        let dom = test_domain(2, 2.0);
        let eps = dom.eps();
        let eta = default_eta(eps, 2.0, 1.0).clamp(eps.powf(2.0), eps);
        let corr = build_corrector(&dom, eta).unwrap();
        let c = dom.centers[0];
        // Deep in the identity layer.
        let far = vec3::wrap(vec3::add(c, [0.45 * eps, 0.0, 0.0]));
        let (w, q) = corr.eval(far);
        assert!((w - Matrix3::identity()).norm() == 0.0);
        assert_eq!(q, [0.0; 3]);
        // On the hole boundary: no-slip (w = 0) to solver tolerance.
        let hole_r = dom.hole_scale * 0.125;
        let on = vec3::wrap(vec3::add(c, [hole_r * (1.0 + 1e-9), 0.0, 0.0]));
        let (w_on, _) = corr.eval(on);
        assert!(w_on.norm() < 1e-6, "|w| on boundary = {}", w_on.norm());
        // Outside K is identity too (partial mode).
        let pdom = build_perforated_domain(&DomainSpec {
            mode: Mode::Partial { l: 0.5 },
            n: 2,
            alpha: 2.0,
            particle: ParticleShape::Ball { radius: 0.125 },
            rng_seed: 0,
        })
        .unwrap();
        let peps = pdom.eps();
        let pcorr = build_corrector(&pdom, peps.powf(1.5)).unwrap();
        let (w_out, q_out) = pcorr.eval([0.05, 0.05, 0.05]);
        assert!((w_out - Matrix3::identity()).norm() == 0.0);
        assert_eq!(q_out, [0.0; 3]);
    }

    #[test]
    fn corrector_continuity_across_interfaces() {
        let dom = test_domain(2, 2.0);
        let eps = dom.eps();
        let eta = eps.powf(1.4);
        let corr = build_corrector(&dom, eta).unwrap();
        let c = dom.centers[0];
        for dir in [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.577350, 0.577350, 0.577350],
            [-0.267261, 0.534522, 0.801784],
        ] {
            for rho in [eta / 4.0, eta / 2.0] {
                let lo = vec3::wrap(vec3::add(c, vec3::scale(dir, rho * (1.0 - 1e-7))));
                let hi = vec3::wrap(vec3::add(c, vec3::scale(dir, rho * (1.0 + 1e-7))));
                let (wl, _) = corr.eval(lo);
                let (wh, _) = corr.eval(hi);
                assert!(
                    (wl - wh).norm() < 1e-4,
                    "jump {} at rho {rho} dir {dir:?}",
                    (wl - wh).norm()
                );
            }
        }
    }

    #[test]
    fn corrector_scale_covariance() {
        // In the inner layer the corrector equals Id minus the reference
        // exterior solution at the rescaled coordinate.
        let dom = test_domain(3, 1.8);
        let eps = dom.eps();
        let corr = build_corrector(&dom, eps.powf(1.3)).unwrap();
        let c = dom.centers[13];
        let s = dom.hole_scale;
        let y = [2.7 * 0.125, 1.1 * 0.125, -0.6 * 0.125]; // reference coords
        let x = vec3::wrap(vec3::add(c, vec3::scale(y, s)));
        let (w, _) = corr.eval(x);
        let rho = vec3::norm(y);
        let (ce, cy, _) = stokes_ball_coeffs(0.125, rho);
        let yh = vec3::scale(y, 1.0 / rho);
        for k in 0..3 {
            for i in 0..3 {
                let want =
                    (1.0 - ce) * if i == k { 1.0 } else { 0.0 } - cy * yh[k] * yh[i];
                assert!(
                    (w[(i, k)] - want).abs() < 1e-10,
                    "w[{i}][{k}] = {} want {want}",
                    w[(i, k)]
                );
            }
        }
    }

    #[test]
    fn corrector_divergence_free_regionwise() {
        // Central-difference divergence of each column at interior points of
        // the C and D layers.
        let dom = test_domain(2, 2.0);
        let eps = dom.eps();
        let corr = build_corrector(&dom, eps.powf(1.5)).unwrap();
        let c = dom.centers[0];
        let eta = corr.eta_eps;
        let hole_r = dom.hole_scale * 0.125;
        let h = 1e-6;
        for rho in [
            hole_r * 2.0,
            0.9 * eta / 4.0,
            1.3 * eta / 4.0,
            0.95 * eta / 2.0,
        ] {
            let x = vec3::wrap(vec3::add(c, vec3::scale([0.48, 0.64, 0.6], rho)));
            for k in 0..3 {
                let mut div = 0.0;
                let mut scale = 0.0f64;
                for a in 0..3 {
                    let mut hi = x;
                    let mut lo = x;
                    hi[a] += h;
                    lo[a] -= h;
                    let (whi, _) = corr.eval(hi);
                    let (wlo, _) = corr.eval(lo);
                    let der = (whi[(a, k)] - wlo[(a, k)]) / (2.0 * h);
                    div += der;
                    scale = scale.max(der.abs());
                }
                assert!(
                    div.abs() <= 1e-3 * scale.max(1.0),
                    "div w_{k} = {div} at rho {rho}"
                );
            }
        }
    }

    #[test]
    fn bounds_report_stable_over_eps_sweep() {
        // Constants must stay within a factor 2 across the sweep.
        let mut ratios: Vec<CorrectorBounds> = Vec::new();
        for n in [2usize, 4, 8] {
            let dom = test_domain(n, 2.0);
            let eps = dom.eps();
            let eta = eps.powf(1.5);
            let corr = build_corrector(&dom, eta).unwrap();
            ratios.push(corrector_bounds_report(&corr, 4000, 11));
        }
        let max_cw = ratios.iter().map(|r| r.c_w).fold(0.0, f64::max);
        let min_cw = ratios.iter().map(|r| r.c_w).fold(f64::INFINITY, f64::min);
        assert!(max_cw / min_cw < 2.0, "c_w spread {min_cw}..{max_cw}");
        let max_q = ratios.iter().map(|r| r.c_q).fold(0.0, f64::max);
        let min_q = ratios.iter().map(|r| r.c_q).fold(f64::INFINITY, f64::min);
        assert!(max_q / min_q < 2.0, "c_q spread {min_q}..{max_q}");
        // Near-field |Id - w| at distance eps^alpha from the center is order
        // one.
        let dom = test_domain(4, 2.0);
        let corr = build_corrector(&dom, dom.eps().powf(1.5)).unwrap();
        let s = dom.hole_scale;
        let x = vec3::wrap(vec3::add(dom.centers[0], [s, 0.0, 0.0]));
        let (w, _) = corr.eval(x);
        let dev = (Matrix3::identity() - w).norm();
        assert!((0.1..10.0).contains(&dev), "near-field deviation {dev}");
    }

    #[test]
    fn eta_range_enforced() {
        let dom = test_domain(2, 2.0);
        let eps = dom.eps();
        assert!(build_corrector(&dom, eps * 2.0).is_err());
        assert!(build_corrector(&dom, eps.powf(2.0) / 2.0).is_err());
        let _ = build_corrector(&dom, eps.powf(1.2)).unwrap();
    }
}
