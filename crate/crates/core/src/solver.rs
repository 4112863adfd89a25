//! Pseudo-spectral incompressible Navier-Stokes on the periodic box with
//! no-slip holes enforced by Brinkman volume penalization.
//!
//! The integrated equation (after dividing by the frame's inertial prefactor)
//! is `du/dt + (u.grad)u + grad p = nu_eff Lap u - M(x) u + g(t,x)` with the
//! friction field `M` supported on the holes. One step applies explicit
//! SSP-RK3 to the projected advection + forcing sub-flow (rotational form),
//! the exact spectral integrating factor for diffusion, and a pointwise
//! implicit update for penalization followed by a re-projection.
//!
//! Holes smaller than the grid are represented by friction blobs of
//! grid-resolvable radius whose strength is calibrated so an isolated blob
//! exerts the exact Stokes drag `6 pi nu a` of the hole it stands for
//! (Brinkman drag closed form); resolved holes get solid-strength friction
//! `1/kappa`.

use crate::control::ControlTriplet;
use crate::error::{Error, Result};
use crate::geometry::{ParticleShape, PerforatedDomain};
use crate::spectral::{self, Fft3};
use crate::vec3::Vec3;
use ndarray::{Array3, Zip};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

/// Collocated periodic velocity snapshot.
#[derive(Debug, Clone)]
pub struct GridField {
    pub n: usize,
    pub data: [Array3<f64>; 3],
    pub time: f64,
}

impl GridField {
    pub fn zeros(n: usize, time: f64) -> GridField {
        GridField {
            n,
            data: [
                Array3::zeros((n, n, n)),
                Array3::zeros((n, n, n)),
                Array3::zeros((n, n, n)),
            ],
            time,
        }
    }

    pub fn l2_norm(&self) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            let v = spectral::l2_norm(&self.data[a]);
            s += v * v;
        }
        s.sqrt()
    }

    pub fn max_norm(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|a| a.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Divergence-free projection of a grid field (idempotent).
pub fn leray_project(field: &GridField) -> GridField {
    let fft = Fft3::new(field.n);
    let mut spec = [
        fft.forward(&field.data[0]),
        fft.forward(&field.data[1]),
        fft.forward(&field.data[2]),
    ];
    spectral::leray_project(&mut spec);
    GridField {
        n: field.n,
        data: [
            fft.inverse(&spec[0]),
            fft.inverse(&spec[1]),
            fft.inverse(&spec[2]),
        ],
        time: field.time,
    }
}

/// Friction field for the hole lattice at one grid resolution.
#[derive(Debug, Clone)]
pub struct HoleMask {
    pub n: usize,
    /// Penalization rate `M(x)` (units 1/time in the integrated frame).
    pub rate: Array3<f64>,
    /// Solid indicator fraction per cell (for fluid-weighted norms).
    pub solid_frac: Array3<f64>,
    /// Largest rate (sets the implicit update and the dt guard).
    pub sigma_max: f64,
}

/// Brinkman drag factor of a uniform-friction ball: `F = 6 pi nu a_b G(lam)`
/// with `lam = a_b sqrt(sigma/nu)`.
fn brinkman_drag_factor(lam: f64) -> f64 {
    if lam < 1e-4 {
        return 2.0 * lam * lam / 9.0;
    }
    let t = 1.0 - lam.tanh() / lam;
    2.0 * lam * lam * t / (2.0 * lam * lam + 3.0 * t)
}

/// Invert `G(lam) = target` (monotone) by bisection.
fn brinkman_lambda(target: f64) -> f64 {
    let (mut lo, mut hi) = (1e-6, 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if brinkman_drag_factor(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Build the penalization mask. `kappa_eff` is the solid relaxation time in
/// the integrated frame; `nu_eff` its viscosity (used for drag calibration of
/// sub-grid holes).
pub fn build_hole_mask(
    domain: &PerforatedDomain,
    n: usize,
    kappa_eff: f64,
    nu_eff: f64,
) -> HoleMask {
    let h = 1.0 / n as f64;
    let mut rate: Array3<f64> = Array3::zeros((n, n, n));
    let mut solid: Array3<f64> = Array3::zeros((n, n, n));
    let hole_r = match domain.spec.particle {
        ParticleShape::Ball { radius } => domain.hole_scale * radius,
        ParticleShape::Ellipsoid { semi_axes } => {
            domain.hole_scale * semi_axes.iter().cloned().fold(0.0, f64::max)
        }
    };
    let resolved = hole_r >= 1.5 * h;
    let (blob_r, sigma) = if resolved {
        (hole_r, 1.0 / kappa_eff)
    } else {
        // Calibrated blob: same isolated Stokes drag as the true hole.
        let rb = 1.5 * h;
        let lam = brinkman_lambda(hole_r / rb);
        let sigma = (nu_eff * lam * lam / (rb * rb)).min(1.0 / kappa_eff);
        (rb, sigma)
    };
    // Cell-averaged blob indicator by 4x4x4 subsampling near interfaces.
    let sub = 4usize;
    for ((i, j, k), r) in rate.indexed_iter_mut() {
        let p = [i as f64 * h, j as f64 * h, k as f64 * h];
        // Distance from the cell center to the nearest blob surface.
        let d = nearest_center_dist(domain, p) - blob_r;
        let frac = if d <= -h {
            1.0
        } else if d >= h {
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
                        if nearest_center_dist(domain, q) <= blob_r {
                            hits += 1;
                        }
                    }
                }
            }
            hits as f64 / (sub * sub * sub) as f64
        };
        *r = sigma * frac;
        solid[[i, j, k]] = frac;
    }
    HoleMask {
        n,
        rate,
        solid_frac: solid,
        sigma_max: sigma,
    }
}

fn nearest_center_dist(domain: &PerforatedDomain, p: Vec3) -> f64 {
    // signed_distance is distance to hole surface for balls; recover the
    // center distance by adding the hole radius (ball case). For ellipsoids
    // fall back to the signed distance against the bounding sphere.
    let r = domain.hole_scale * domain.spec.particle.bounding_radius();
    domain.signed_distance(p) + r
}

/// Fluid weight `1 - solid fraction` for masked norms.
pub fn fluid_weight(mask: &HoleMask) -> Array3<f64> {
    mask.solid_frac.mapv(|s| 1.0 - s)
}

/// Initial data specification.
#[derive(Debug, Clone)]
pub enum InitialData {
    Zero,
    /// Random solenoidal field with the prescribed grid L2 norm.
    RandomSolenoidal { l2_norm: f64, seed: u64 },
}

/// Integration frame: which scaling of the equations is being run.
#[derive(Debug, Clone, Copy)]
pub enum Frame {
    /// `du/dt - eps^beta Lap u + u.grad u + grad p = f` on [0,1].
    ScaledEuler { eps: f64, beta: f64 },
    /// `eps^(6-2a-2b)(du/dt + u.grad u) - eps^(3-a) Lap u + grad p = f` on [0,1].
    ScaledDarcy { eps: f64, alpha: f64, beta: f64 },
    /// Unit viscosity on [0, eps^beta]; forcing `eps^(-2 beta) f(t/eps^beta)`.
    UnitEuler { eps: f64, beta: f64 },
    /// Unit viscosity on [0, eps^(a+2b-3)].
    UnitDarcy { eps: f64, alpha: f64, beta: f64 },
}

impl Frame {
    /// Inertial prefactor multiplying `du/dt + u.grad u`.
    pub fn inertia(&self) -> f64 {
        match self {
            Frame::ScaledDarcy { eps, alpha, beta } => {
                eps.powf(6.0 - 2.0 * alpha - 2.0 * beta)
            }
            _ => 1.0,
        }
    }

    /// Viscosity multiplying `-Lap u` (before dividing by the inertia).
    pub fn viscosity(&self) -> f64 {
        match self {
            Frame::ScaledEuler { eps, beta } => eps.powf(*beta),
            Frame::ScaledDarcy { eps, alpha, .. } => eps.powf(3.0 - alpha),
            Frame::UnitEuler { .. } | Frame::UnitDarcy { .. } => 1.0,
        }
    }

    /// End of the run interval.
    pub fn horizon(&self) -> f64 {
        match self {
            Frame::ScaledEuler { .. } | Frame::ScaledDarcy { .. } => 1.0,
            Frame::UnitEuler { eps, beta } => eps.powf(*beta),
            Frame::UnitDarcy { eps, alpha, beta } => eps.powf(alpha + 2.0 * beta - 3.0),
        }
    }

    /// Map a run time to the control's unit interval.
    pub fn control_time(&self, t: f64) -> f64 {
        match self {
            Frame::ScaledEuler { .. } | Frame::ScaledDarcy { .. } => t,
            _ => t / self.horizon(),
        }
    }

    /// Factor scaling the control forcing into this frame.
    pub fn forcing_scale(&self) -> f64 {
        match self {
            Frame::ScaledEuler { .. } | Frame::ScaledDarcy { .. } => 1.0,
            Frame::UnitEuler { eps, beta } | Frame::UnitDarcy { eps, beta, .. } => {
                eps.powf(-2.0 * beta)
            }
        }
    }
}

/// Solver parameters (frame-independent).
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub n: usize,
    /// Solid relaxation time for the penalization (in the integrated frame).
    pub kappa: f64,
    /// Advective CFL number.
    pub cfl: f64,
    pub dt_max: f64,
    /// Explicit dt (0 = adaptive from CFL); must satisfy the stability
    /// bounds or the run fails with `CflViolation`.
    pub dt_fixed: f64,
    pub initial: InitialData,
    /// Times (fractions of the horizon) at which snapshots are stored.
    pub output_times: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n: 64,
            kappa: 8e-3,
            cfl: 0.3,
            dt_max: 5e-3,
            dt_fixed: 0.0,
            initial: InitialData::Zero,
            output_times: (0..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

/// Stored run output: snapshots plus interpolation support.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub velocity: Vec<[Array3<f64>; 3]>,
    pub pressure: Vec<Array3<f64>>,
    pub forcing: Vec<[Array3<f64>; 3]>,
    pub n: usize,
}

impl Trajectory {
    pub fn span(&self) -> (f64, f64) {
        (
            *self.times.first().unwrap_or(&0.0),
            *self.times.last().unwrap_or(&0.0),
        )
    }

    /// Tricubic-in-space, linear-in-time velocity evaluation.
    pub fn velocity_at(&self, t: f64, x: Vec3) -> Vec3 {
        let m = self.times.len();
        assert!(m > 0, "empty trajectory");
        if m == 1 {
            return crate::interp::tricubic_vec(&self.velocity[0], x);
        }
        let (lo, hi) = self.span();
        let tc = t.clamp(lo.min(hi), hi.max(lo));
        let i = match self.times.windows(2).position(|w| {
            (tc >= w[0] && tc <= w[1]) || (tc <= w[0] && tc >= w[1])
        }) {
            Some(i) => i,
            None => m - 2,
        };
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let s = if t1 == t0 { 0.0 } else { (tc - t0) / (t1 - t0) };
        let a = crate::interp::tricubic_vec(&self.velocity[i], x);
        let b = crate::interp::tricubic_vec(&self.velocity[i + 1], x);
        [
            (1.0 - s) * a[0] + s * b[0],
            (1.0 - s) * a[1] + s * b[1],
            (1.0 - s) * a[2] + s * b[2],
        ]
    }
}

impl crate::flow::VelocityField for Trajectory {
    fn velocity(&self, t: f64, x: Vec3) -> Vec3 {
        self.velocity_at(t, x)
    }
}

/// Per-step energy accounting.
#[derive(Debug, Clone, Default)]
pub struct EnergyLedger {
    pub times: Vec<f64>,
    pub kinetic: Vec<f64>,
    pub dissipation_cum: Vec<f64>,
    pub forcing_work_cum: Vec<f64>,
    pub penalization_cum: Vec<f64>,
    /// `E(t) + D + P - E(0) - W` (should be <= tolerance * max energy).
    pub inequality_residual: Vec<f64>,
}

impl EnergyLedger {
    pub fn max_energy(&self) -> f64 {
        self.kinetic.iter().cloned().fold(0.0, f64::max)
    }

    pub fn worst_residual(&self) -> f64 {
        self.inequality_residual.iter().cloned().fold(0.0, f64::max)
    }

    /// The discrete energy inequality holds within `tol * max energy`.
    pub fn inequality_ok(&self, tol: f64) -> bool {
        self.worst_residual() <= tol * self.max_energy().max(1e-300)
    }
}

struct Stepper<'a> {
    fft: Fft3,
    n: usize,
    nu: f64,
    mask: Option<&'a HoleMask>,
    forcing: Option<(&'a ControlTriplet, f64, f64)>, // (control, scale, time map)
    inertia: f64,
}

impl<'a> Stepper<'a> {
    /// Projected advection + forcing right-hand side in spectral space
    /// (rotational form; the gradient part is absorbed by the projection).
    fn rhs(&self, spec: &[Array3<Complex64>; 3], t: f64) -> [Array3<Complex64>; 3] {
        let u = [
            self.fft.inverse(&spec[0]),
            self.fft.inverse(&spec[1]),
            self.fft.inverse(&spec[2]),
        ];
        // Vorticity.
        let om = [
            self.fft
                .inverse(&sub_c(&spectral::derivative(&spec[2], 1), &spectral::derivative(&spec[1], 2))),
            self.fft
                .inverse(&sub_c(&spectral::derivative(&spec[0], 2), &spectral::derivative(&spec[2], 0))),
            self.fft
                .inverse(&sub_c(&spectral::derivative(&spec[1], 0), &spectral::derivative(&spec[0], 1))),
        ];
        // u x omega + g.
        let mut rhs_phys = [
            Array3::zeros((self.n, self.n, self.n)),
            Array3::zeros((self.n, self.n, self.n)),
            Array3::zeros((self.n, self.n, self.n)),
        ];
        let g = self.forcing.map(|(ctrl, scale, tmap)| {
            let mut f = ctrl.forcing_grid(tmap * t, self.fft.n);
            let s = scale / self.inertia;
            for a in 0..3 {
                f[a].mapv_inplace(|v| v * s);
            }
            f
        });
        for i in 0..3 {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            Zip::from(&mut rhs_phys[i])
                .and(&u[j])
                .and(&om[k])
                .and(&u[k])
                .and(&om[j])
                .for_each(|r, &uj, &ok, &uk, &oj| {
                    *r = uj * ok - uk * oj;
                });
            if let Some(f) = &g {
                rhs_phys[i].zip_mut_with(&f[i], |r, &fv| *r += fv);
            }
        }
        let mut out = [
            self.fft.forward(&rhs_phys[0]),
            self.fft.forward(&rhs_phys[1]),
            self.fft.forward(&rhs_phys[2]),
        ];
        for a in out.iter_mut() {
            spectral::dealias(a);
        }
        spectral::leray_project(&mut out);
        out
    }

    fn diffuse(&self, spec: &mut [Array3<Complex64>; 3], dt: f64) {
        let n = self.n;
        let two_pi = 2.0 * std::f64::consts::PI;
        for comp in spec.iter_mut() {
            for ((i, j, k), v) in comp.indexed_iter_mut() {
                let kk = [
                    spectral::freq(i, n) as f64,
                    spectral::freq(j, n) as f64,
                    spectral::freq(k, n) as f64,
                ];
                let k2 = (two_pi * two_pi) * (kk[0] * kk[0] + kk[1] * kk[1] + kk[2] * kk[2]);
                *v *= (-self.nu * k2 * dt).exp();
            }
        }
    }
}

fn sub_c(a: &Array3<Complex64>, b: &Array3<Complex64>) -> Array3<Complex64> {
    let mut out = a.clone();
    out.zip_mut_with(b, |x, y| *x -= y);
    out
}

fn spec_energy(fft: &Fft3, spec: &[Array3<Complex64>; 3]) -> f64 {
    // 0.5 ||u||^2 via Parseval (coefficients are already normalized).
    let mut s = 0.0;
    for a in spec {
        s += a.iter().map(|v| v.norm_sqr()).sum::<f64>();
    }
    let _ = fft;
    0.5 * s
}

/// One full step: SSP-RK3 advection/forcing, exact diffusion, implicit
/// penalization with re-projection. Returns the energy removed by diffusion
/// and penalization+projection, and the forcing work.
#[allow(clippy::too_many_arguments)]
fn step_once(
    stepper: &Stepper,
    spec: &mut [Array3<Complex64>; 3],
    t: f64,
    dt: f64,
) -> (f64, f64, f64) {
    let fft = &stepper.fft;
    // Forcing work accumulates as dt * <g, u> at the initial stage (first
    // order in dt is enough for the ledger's tolerance checks).
    let work = if stepper.forcing.is_some() {
        let (ctrl, scale, tmap) = stepper.forcing.unwrap();
        let g = ctrl.forcing_grid(tmap * t, fft.n);
        let u = [
            fft.inverse(&spec[0]),
            fft.inverse(&spec[1]),
            fft.inverse(&spec[2]),
        ];
        let mut s = 0.0;
        for a in 0..3 {
            Zip::from(&u[a]).and(&g[a]).for_each(|uu, gg| s += uu * gg);
        }
        dt * s * (scale / stepper.inertia) / (fft.n as f64).powi(3)
    } else {
        0.0
    };
    // SSP-RK3 (Shu-Osher) on the projected advection + forcing sub-flow.
    let r1 = stepper.rhs(spec, t);
    let mut u1 = spec.clone();
    for a in 0..3 {
        u1[a].zip_mut_with(&r1[a], |x, y| *x += dt * y);
    }
    let r2 = stepper.rhs(&u1, t + dt);
    let mut u2 = spec.clone();
    for a in 0..3 {
        Zip::from(&mut u2[a])
            .and(&u1[a])
            .and(&r2[a])
            .for_each(|x, &y1, &ry| {
                *x = 0.75 * *x + 0.25 * (y1 + dt * ry);
            });
    }
    let r3 = stepper.rhs(&u2, t + 0.5 * dt);
    for a in 0..3 {
        Zip::from(&mut spec[a])
            .and(&u2[a])
            .and(&r3[a])
            .for_each(|x, &y2, &ry| {
                *x = *x / 3.0 + 2.0 / 3.0 * (y2 + dt * ry);
            });
    }
    // Exact diffusion; measure removed energy.
    let e_before = spec_energy(fft, spec);
    stepper.diffuse(spec, dt);
    let e_mid = spec_energy(fft, spec);
    let dissipation = e_before - e_mid;
    // Implicit penalization + projection; measure removed energy.
    let mut penalization = 0.0;
    if let Some(mask) = stepper.mask {
        let mut u = [
            fft.inverse(&spec[0]),
            fft.inverse(&spec[1]),
            fft.inverse(&spec[2]),
        ];
        for a in 0..3 {
            Zip::from(&mut u[a]).and(&mask.rate).for_each(|v, &m| {
                *v /= 1.0 + dt * m;
            });
        }
        let mut after = [
            fft.forward(&u[0]),
            fft.forward(&u[1]),
            fft.forward(&u[2]),
        ];
        spectral::leray_project(&mut after);
        let e_after = spec_energy(fft, &after);
        penalization = e_mid - e_after;
        *spec = after;
    }
    (dissipation, penalization, work)
}

/// Run the penalized Navier-Stokes in the given frame with the control's
/// forcing restricted to the fluid (it is supported in the zone, away from
/// all holes).
pub fn run_ns(
    cfg: &SolverConfig,
    domain: Option<&PerforatedDomain>,
    control: Option<&ControlTriplet>,
    frame: Frame,
) -> Result<(Trajectory, EnergyLedger)> {
    let n = cfg.n;
    let fft = Fft3::new(n);
    let inertia = frame.inertia();
    let nu_eff = frame.viscosity() / inertia;
    let horizon = frame.horizon();
    let mask = domain.map(|d| build_hole_mask(d, n, cfg.kappa, nu_eff));
    let tmap = match frame {
        Frame::ScaledEuler { .. } | Frame::ScaledDarcy { .. } => 1.0,
        _ => 1.0 / horizon,
    };
    let stepper = Stepper {
        fft,
        n,
        nu: nu_eff,
        mask: mask.as_ref(),
        forcing: control.map(|c| (c, frame.forcing_scale(), tmap)),
        inertia,
    };
    // Initial data.
    let mut spec = match &cfg.initial {
        InitialData::Zero => [
            Array3::zeros((n, n, n)),
            Array3::zeros((n, n, n)),
            Array3::zeros((n, n, n)),
        ],
        InitialData::RandomSolenoidal { l2_norm, seed } => {
            let f = random_solenoidal(n, *l2_norm, *seed);
            let fftl = Fft3::new(n);
            [
                fftl.forward(&f.data[0]),
                fftl.forward(&f.data[1]),
                fftl.forward(&f.data[2]),
            ]
        }
    };
    spectral::leray_project(&mut spec);

    let mut ledger = EnergyLedger::default();
    let e0 = spec_energy(&stepper.fft, &spec);
    let mut diss_cum = 0.0;
    let mut work_cum = 0.0;
    let mut pen_cum = 0.0;
    ledger.times.push(0.0);
    ledger.kinetic.push(e0);
    ledger.dissipation_cum.push(0.0);
    ledger.forcing_work_cum.push(0.0);
    ledger.penalization_cum.push(0.0);
    ledger.inequality_residual.push(0.0);

    let mut out_times: Vec<f64> = cfg.output_times.iter().map(|f| f * horizon).collect();
    out_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut traj = Trajectory {
        times: Vec::new(),
        velocity: Vec::new(),
        pressure: Vec::new(),
        forcing: Vec::new(),
        n,
    };
    let store = |t: f64, spec: &[Array3<Complex64>; 3], traj: &mut Trajectory| {
        let fftl = Fft3::new(n);
        traj.times.push(t);
        traj.velocity.push([
            fftl.inverse(&spec[0]),
            fftl.inverse(&spec[1]),
            fftl.inverse(&spec[2]),
        ]);
    };
    let mut next_out = 0usize;
    if !out_times.is_empty() && out_times[0] <= 0.0 {
        store(0.0, &spec, &mut traj);
        next_out = 1;
    }

    let mut t = 0.0;
    let sigma_bound = mask.as_ref().map(|m| 0.5 / m.sigma_max).unwrap_or(f64::INFINITY);
    while t < horizon - 1e-14 {
        // Advective CFL from the current max velocity.
        let umax = {
            let u0 = stepper.fft.inverse(&spec[0]);
            let u1 = stepper.fft.inverse(&spec[1]);
            let u2 = stepper.fft.inverse(&spec[2]);
            let mut m = 0.0f64;
            for ((a, b), c) in u0.iter().zip(u1.iter()).zip(u2.iter()) {
                m = m.max(a.abs()).max(b.abs()).max(c.abs());
            }
            m
        };
        let h = 1.0 / n as f64;
        let dt_cfl = if umax > 0.0 { cfg.cfl * h / umax } else { cfg.dt_max };
        let mut dt = if cfg.dt_fixed > 0.0 {
            if cfg.dt_fixed > dt_cfl * (1.0 + 1e-9) {
                return Err(Error::CflViolation {
                    dt: cfg.dt_fixed,
                    bound: dt_cfl,
                    which: "advective CFL".into(),
                });
            }
            if cfg.dt_fixed > sigma_bound * (1.0 + 1e-9) {
                return Err(Error::CflViolation {
                    dt: cfg.dt_fixed,
                    bound: sigma_bound,
                    which: "penalization kappa/2".into(),
                });
            }
            cfg.dt_fixed
        } else {
            dt_cfl.min(cfg.dt_max).min(sigma_bound)
        };
        // Land exactly on the next output time and the horizon.
        let mut target = horizon;
        if next_out < out_times.len() {
            target = target.min(out_times[next_out]);
        }
        if t + dt > target {
            dt = target - t;
        }
        if dt <= 0.0 {
            dt = 1e-12;
        }
        let (diss, pen, work) = step_once(&stepper, &mut spec, t, dt);
        t += dt;
        diss_cum += diss;
        pen_cum += pen;
        work_cum += work;
        let e = spec_energy(&stepper.fft, &spec);
        if !e.is_finite() {
            return Err(Error::NanDetected { t });
        }
        ledger.times.push(t);
        ledger.kinetic.push(e);
        ledger.dissipation_cum.push(diss_cum);
        ledger.forcing_work_cum.push(work_cum);
        ledger.penalization_cum.push(pen_cum);
        ledger
            .inequality_residual
            .push(e + diss_cum + pen_cum - e0 - work_cum);
        while next_out < out_times.len() && t >= out_times[next_out] - 1e-12 {
            store(t, &spec, &mut traj);
            next_out += 1;
        }
    }
    Ok((traj, ledger))
}

/// Random smooth solenoidal field normalized to the requested grid L2 norm.
pub fn random_solenoidal(n: usize, l2_norm: f64, seed: u64) -> GridField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fft = Fft3::new(n);
    let mut data: [Array3<f64>; 3] = [
        Array3::zeros((n, n, n)),
        Array3::zeros((n, n, n)),
        Array3::zeros((n, n, n)),
    ];
    for comp in data.iter_mut() {
        for v in comp.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let mut spec = [
        fft.forward(&data[0]),
        fft.forward(&data[1]),
        fft.forward(&data[2]),
    ];
    // Smooth spectrum: damp above k0.
    let k0 = 3.0;
    for comp in spec.iter_mut() {
        for ((i, j, k), v) in comp.indexed_iter_mut() {
            let kk = [
                spectral::freq(i, n) as f64,
                spectral::freq(j, n) as f64,
                spectral::freq(k, n) as f64,
            ];
            let k2 = kk[0] * kk[0] + kk[1] * kk[1] + kk[2] * kk[2];
            *v *= (-k2 / (k0 * k0)).exp();
        }
        // Zero mean.
        comp[[0, 0, 0]] = Complex64::new(0.0, 0.0);
    }
    spectral::leray_project(&mut spec);
    let mut out = GridField {
        n,
        data: [
            fft.inverse(&spec[0]),
            fft.inverse(&spec[1]),
            fft.inverse(&spec[2]),
        ],
        time: 0.0,
    };
    let norm = out.l2_norm();
    if norm > 0.0 {
        let s = l2_norm / norm;
        for a in 0..3 {
            out.data[a].mapv_inplace(|v| v * s);
        }
    }
    out
}

/// Exact frame rescaling of a trajectory (velocity, pressure, forcing, and
/// time stamps) between the scaled and unit frames.
pub fn apply_scaling(
    traj: &Trajectory,
    mode: crate::flow::FrameMode,
    eps: f64,
    to_unit: bool,
) -> Trajectory {
    let (beta, tfac) = match mode {
        crate::flow::FrameMode::Euler { beta } => (beta, eps.powf(beta)),
        crate::flow::FrameMode::Darcy { alpha, beta } => {
            (beta, eps.powf(alpha + 2.0 * beta - 3.0))
        }
    };
    let vfac = if to_unit { 1.0 / tfac } else { tfac };
    let pfac = if to_unit {
        eps.powf(-2.0 * beta)
    } else {
        eps.powf(2.0 * beta)
    };
    let ffac = pfac;
    let times = traj
        .times
        .iter()
        .map(|t| if to_unit { t * tfac } else { t / tfac })
        .collect();
    Trajectory {
        times,
        velocity: traj
            .velocity
            .iter()
            .map(|f| {
                [
                    f[0].mapv(|v| v * vfac),
                    f[1].mapv(|v| v * vfac),
                    f[2].mapv(|v| v * vfac),
                ]
            })
            .collect(),
        pressure: traj.pressure.iter().map(|p| p.mapv(|v| v * pfac)).collect(),
        forcing: traj
            .forcing
            .iter()
            .map(|f| {
                [
                    f[0].mapv(|v| v * ffac),
                    f[1].mapv(|v| v * ffac),
                    f[2].mapv(|v| v * ffac),
                ]
            })
            .collect(),
        n: traj.n,
    }
}

/// Steady penalized Stokes solve with prescribed mean flow `e_dir`;
/// returns the drag force vector `int M (e + u') dx` (PCG on the projected
/// operator with a spectral preconditioner).
pub fn steady_stokes_drag(
    mask: &HoleMask,
    nu: f64,
    dir: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec3, usize)> {
    let n = mask.n;
    let fft = Fft3::new(n);
    let two_pi2 = (2.0 * std::f64::consts::PI).powi(2);
    let apply_a = |x: &[Array3<Complex64>; 3]| -> [Array3<Complex64>; 3] {
        // A x = P(-nu Lap x + M x) on zero-mean divergence-free fields.
        let phys = [
            fft.inverse(&x[0]),
            fft.inverse(&x[1]),
            fft.inverse(&x[2]),
        ];
        let mut out: Vec<Array3<Complex64>> = Vec::with_capacity(3);
        for a in 0..3 {
            let mut masked = phys[a].clone();
            masked.zip_mut_with(&mask.rate, |v, &m| *v *= m);
            let mut spec_m = fft.forward(&masked);
            for ((i, j, k), v) in spec_m.indexed_iter_mut() {
                let kk = [
                    spectral::freq(i, n) as f64,
                    spectral::freq(j, n) as f64,
                    spectral::freq(k, n) as f64,
                ];
                let k2 = two_pi2 * (kk[0] * kk[0] + kk[1] * kk[1] + kk[2] * kk[2]);
                *v += nu * k2 * x[a][[i, j, k]];
            }
            spec_m[[0, 0, 0]] = Complex64::new(0.0, 0.0);
            out.push(spec_m);
        }
        let mut out: [Array3<Complex64>; 3] = match out.try_into() {
            Ok(v) => v,
            Err(_) => unreachable!(),
        };
        spectral::leray_project(&mut out);
        out
    };
    let precond = |r: &[Array3<Complex64>; 3]| -> [Array3<Complex64>; 3] {
        let c = (mask.sigma_max * nu * 4.0 * std::f64::consts::PI * std::f64::consts::PI)
            .sqrt()
            .max(1e-12);
        let mut out = r.clone();
        for comp in out.iter_mut() {
            for ((i, j, k), v) in comp.indexed_iter_mut() {
                let kk = [
                    spectral::freq(i, n) as f64,
                    spectral::freq(j, n) as f64,
                    spectral::freq(k, n) as f64,
                ];
                let k2 = two_pi2 * (kk[0] * kk[0] + kk[1] * kk[1] + kk[2] * kk[2]);
                *v /= c + nu * k2;
            }
            comp[[0, 0, 0]] = Complex64::new(0.0, 0.0);
        }
        out
    };
    let dotp = |a: &[Array3<Complex64>; 3], b: &[Array3<Complex64>; 3]| -> f64 {
        let mut s = 0.0;
        for c in 0..3 {
            for (x, y) in a[c].iter().zip(b[c].iter()) {
                s += x.re * y.re + x.im * y.im;
            }
        }
        s
    };
    // RHS: b = -P[M e_dir].
    let mut e_phys: [Array3<f64>; 3] = [
        Array3::zeros((n, n, n)),
        Array3::zeros((n, n, n)),
        Array3::zeros((n, n, n)),
    ];
    e_phys[dir].zip_mut_with(&mask.rate, |v, &m| *v = -m);
    let mut b = [
        fft.forward(&e_phys[0]),
        fft.forward(&e_phys[1]),
        fft.forward(&e_phys[2]),
    ];
    for comp in b.iter_mut() {
        comp[[0, 0, 0]] = Complex64::new(0.0, 0.0);
    }
    spectral::leray_project(&mut b);
    // PCG.
    let mut x = [
        Array3::zeros((n, n, n)),
        Array3::zeros((n, n, n)),
        Array3::zeros((n, n, n)),
    ];
    let mut r = b.clone();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dotp(&r, &z);
    let b_norm = dotp(&b, &b).sqrt().max(1e-300);
    let mut iters = 0;
    while iters < max_iter {
        let ap = apply_a(&p);
        let pap = dotp(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::SolverDiverged(format!(
                "PCG curvature {pap} at iteration {iters}"
            )));
        }
        let alpha = rz / pap;
        for a in 0..3 {
            Zip::from(&mut x[a]).and(&p[a]).for_each(|xx, &pp| *xx += alpha * pp);
            Zip::from(&mut r[a]).and(&ap[a]).for_each(|rr, &aa| *rr -= alpha * aa);
        }
        iters += 1;
        if dotp(&r, &r).sqrt() <= tol * b_norm {
            break;
        }
        z = precond(&r);
        let rz_new = dotp(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for a in 0..3 {
            Zip::from(&mut p[a]).and(&z[a]).for_each(|pp, &zz| *pp = zz + beta * *pp);
        }
    }
    if iters >= max_iter {
        return Err(Error::SolverDiverged(format!(
            "PCG did not converge in {max_iter} iterations"
        )));
    }
    // Drag: F_j = int M (e_dir + u')_j dx.
    let u = [
        fft.inverse(&x[0]),
        fft.inverse(&x[1]),
        fft.inverse(&x[2]),
    ];
    let n3 = (n as f64).powi(3);
    let mut force = [0.0; 3];
    for j in 0..3 {
        let mut s = 0.0;
        Zip::from(&u[j]).and(&mask.rate).for_each(|&uu, &m| {
            s += m * uu;
        });
        if j == dir {
            s += mask.rate.sum();
        }
        force[j] = s / n3;
    }
    Ok((force, iters))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_op_idempotent_and_kills_gradients() {
        let n = 16;
        let mut f = GridField::zeros(n, 0.0);
        let tau = 2.0 * std::f64::consts::PI;
        for ((i, j, k), v) in f.data[0].indexed_iter_mut() {
            let _ = k;
            *v = (tau * i as f64 / n as f64).sin() * (tau * j as f64 / n as f64).cos();
        }
        let p1 = leray_project(&f);
        let p2 = leray_project(&p1);
        let mut worst = 0.0f64;
        for a in 0..3 {
            for (x, y) in p1.data[a].iter().zip(p2.data[a].iter()) {
                worst = worst.max((x - y).abs());
            }
        }
        assert!(worst < 1e-12, "idempotence violation {worst}");
        let fft = Fft3::new(n);
        assert!(spectral::relative_divergence(&fft, &p1.data) < 1e-10);
    }

    #[test]
    fn zero_data_zero_forcing_stays_zero() {
        let cfg = SolverConfig {
            n: 16,
            output_times: vec![0.0, 1.0],
            ..SolverConfig::default()
        };
        let (traj, ledger) = run_ns(
            &cfg,
            None,
            None,
            Frame::ScaledEuler { eps: 0.5, beta: 1.0 },
        )
        .unwrap();
        assert!(ledger.max_energy() == 0.0);
        let last = traj.velocity.last().unwrap();
        assert!(last.iter().all(|c| c.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn taylor_green_viscous_decay() {
        // z-independent Taylor-Green: the nonlinear term is a gradient, so
        // the exact solution decays as exp(-8 pi^2 nu t) in amplitude.
        let n = 32;
        let nu: f64 = 0.02;
        let eps: f64 = 0.5;
        let beta = nu.ln() / eps.ln();
        let cfg = SolverConfig {
            n,
            dt_fixed: 1e-3,
            cfl: 10.0, // fixed dt drives the step here
            output_times: vec![0.0, 0.1],
            ..SolverConfig::default()
        };
        let tau = 2.0 * std::f64::consts::PI;
        let mut init = GridField::zeros(n, 0.0);
        for ((i, j, _k), v) in init.data[0].indexed_iter_mut() {
            let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
            *v = (tau * x).sin() * (tau * y).cos();
        }
        for ((i, j, _k), v) in init.data[1].indexed_iter_mut() {
            let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
            *v = -(tau * x).cos() * (tau * y).sin();
        }
        // Run via the random-initial hook replaced by a manual seed of spec.
        let fft = Fft3::new(n);
        let mut spec = [
            fft.forward(&init.data[0]),
            fft.forward(&init.data[1]),
            fft.forward(&init.data[2]),
        ];
        spectral::leray_project(&mut spec);
        let stepper = Stepper {
            fft,
            n,
            nu,
            mask: None,
            forcing: None,
            inertia: 1.0,
        };
        let steps = 100;
        let dt = 1e-3;
        for s in 0..steps {
            step_once(&stepper, &mut spec, s as f64 * dt, dt);
        }
        let e_end = spec_energy(&stepper.fft, &spec);
        let e0 = 0.5 * 0.5; // mean of sin^2 cos^2 terms: ||u||^2 = 1/2
        let want = e0 * (-16.0 * std::f64::consts::PI.powi(2) * nu * 0.1).exp();
        assert!(
            (e_end - want).abs() < 0.01 * want,
            "energy {e_end} vs exact {want}"
        );
        let _ = (cfg, beta);
    }

    #[test]
    fn scaling_round_trip_exact() {
        let n = 8;
        let mut traj = Trajectory {
            times: vec![0.0, 0.5, 1.0],
            velocity: Vec::new(),
            pressure: Vec::new(),
            forcing: Vec::new(),
            n,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3 {
            let mut f = [
                Array3::zeros((n, n, n)),
                Array3::zeros((n, n, n)),
                Array3::zeros((n, n, n)),
            ];
            for a in 0..3 {
                for v in f[a].iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            traj.velocity.push(f);
            traj.pressure.push(Array3::zeros((n, n, n)));
            traj.forcing.push([
                Array3::zeros((n, n, n)),
                Array3::zeros((n, n, n)),
                Array3::zeros((n, n, n)),
            ]);
        }
        let mode = crate::flow::FrameMode::Euler { beta: 1.0 };
        let eps = 0.5;
        let unit = apply_scaling(&traj, mode, eps, true);
        // beta = 1, eps = 1/2: velocity doubles, times halve.
        assert!((unit.velocity[1][0][[1, 2, 3]] - 2.0 * traj.velocity[1][0][[1, 2, 3]]).abs() < 1e-15);
        assert!((unit.times[1] - 0.25).abs() < 1e-15);
        let back = apply_scaling(&unit, mode, eps, false);
        for s in 0..3 {
            assert!((back.times[s] - traj.times[s]).abs() < 1e-14);
            for a in 0..3 {
                for (x, y) in back.velocity[s][a].iter().zip(traj.velocity[s][a].iter()) {
                    assert!((x - y).abs() <= 1e-14 * (1.0 + y.abs()));
                }
            }
        }
    }

    #[test]
    fn brinkman_calibration_monotone() {
        // G is monotone and the inversion reproduces targets.
        for target in [0.05, 0.2, 0.5, 0.9] {
            let lam = brinkman_lambda(target);
            assert!((brinkman_drag_factor(lam) - target).abs() < 1e-9);
        }
    }

    #[test]
    fn random_solenoidal_norm_and_divergence() {
        let f = random_solenoidal(24, 0.37, 9);
        assert!((f.l2_norm() - 0.37).abs() < 1e-12);
        let fft = Fft3::new(24);
        assert!(spectral::relative_divergence(&fft, &f.data) < 1e-12);
    }
}
