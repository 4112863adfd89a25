//! Lagrangian flow maps and measure-theoretic transport diagnostics.
//!
//! Particles follow `dx/dt = u(t, x)` under classical RK4 with periodic
//! wrapping. Set images are never constructed: membership of `y` in the image
//! `Phi(T, P)` is decided by integrating `y` backward to time 0 and testing
//! membership in `P`, and Lebesgue measures are Monte Carlo estimates with
//! reported 95% half-widths.

use crate::error::{Error, Result};
use crate::geometry::{ControlZone, Patch, PerforatedDomain};
use crate::vec3::{self, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Anything that can be sampled as a velocity field.
pub trait VelocityField: Sync {
    fn velocity(&self, t: f64, x: Vec3) -> Vec3;
}

impl VelocityField for crate::control::ControlTriplet {
    fn velocity(&self, t: f64, x: Vec3) -> Vec3 {
        crate::control::ControlTriplet::velocity(self, t, x)
    }
}

/// Fast table-backed view of a control triplet.
pub struct ControlInterp<'a> {
    pub triplet: &'a crate::control::ControlTriplet,
    pub table_n: usize,
}

impl<'a> VelocityField for ControlInterp<'a> {
    fn velocity(&self, t: f64, x: Vec3) -> Vec3 {
        self.triplet.velocity_interp(t, x, self.table_n)
    }
}

/// Closed-form field for tests and oracles.
pub struct AnalyticField<F: Fn(f64, Vec3) -> Vec3 + Sync>(pub F);

impl<F: Fn(f64, Vec3) -> Vec3 + Sync> VelocityField for AnalyticField<F> {
    fn velocity(&self, t: f64, x: Vec3) -> Vec3 {
        (self.0)(t, x)
    }
}

/// One RK4 step of a batch of points (parallel over points).
pub fn rk4_step_points<F>(pts: &mut [Vec3], f: F, t0: f64, dt: f64)
where
    F: Fn(f64, Vec3) -> Vec3 + Sync,
{
    pts.par_iter_mut().for_each(|p| {
        let x = *p;
        let k1 = f(t0, x);
        let k2 = f(t0 + 0.5 * dt, vec3::wrap(vec3::add(x, vec3::scale(k1, 0.5 * dt))));
        let k3 = f(t0 + 0.5 * dt, vec3::wrap(vec3::add(x, vec3::scale(k2, 0.5 * dt))));
        let k4 = f(t0 + dt, vec3::wrap(vec3::add(x, vec3::scale(k3, dt))));
        let mut out = x;
        for a in 0..3 {
            out[a] += dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
        }
        *p = vec3::wrap(out);
    });
}

/// Integrate points from `t0` to `t1` (either direction), observing the
/// state after every step.
pub fn advect_points_with<V: VelocityField + ?Sized, O: FnMut(f64, &[Vec3])>(
    field: &V,
    pts: &mut Vec<Vec3>,
    t0: f64,
    t1: f64,
    dt: f64,
    mut observe: O,
) {
    let span = t1 - t0;
    if span == 0.0 {
        return;
    }
    let steps = (span.abs() / dt).ceil().max(1.0) as usize;
    let h = span / steps as f64;
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        rk4_step_points(pts, |tt, x| field.velocity(tt, x), t, h);
        observe(t + h, pts);
    }
}

/// Tag recording where an ensemble was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub enum OriginTag {
    Patch(Patch),
    PatchFluid(Patch),
    Uniform,
}

/// Monte Carlo particle ensemble with uniform weights.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub positions: Vec<Vec3>,
    pub origin: OriginTag,
    /// Volume of the sampled region (each particle weighs volume/len).
    pub region_volume: f64,
    pub seed: u64,
}

impl ParticleEnsemble {
    /// Uniform samples from a patch (holes ignored).
    pub fn from_patch(patch: &Patch, n: usize, seed: u64) -> ParticleEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = (0..n).map(|_| patch.sample_interior(&mut rng)).collect();
        ParticleEnsemble {
            positions,
            origin: OriginTag::Patch(*patch),
            region_volume: patch.volume(),
            seed,
        }
    }

    /// Uniform samples from `patch` intersected with the fluid domain.
    /// The region volume is the patch volume minus the (exact) expected hole
    /// content, estimated from the rejection rate.
    pub fn from_patch_fluid(
        patch: &Patch,
        domain: &PerforatedDomain,
        n: usize,
        seed: u64,
    ) -> ParticleEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut positions = Vec::with_capacity(n);
        let mut draws = 0usize;
        while positions.len() < n {
            let p = patch.sample_interior(&mut rng);
            draws += 1;
            if domain.is_fluid(p) {
                positions.push(p);
            }
        }
        let accept = n as f64 / draws as f64;
        ParticleEnsemble {
            positions,
            origin: OriginTag::PatchFluid(*patch),
            region_volume: patch.volume() * accept,
            seed,
        }
    }

    /// Uniform samples over the torus.
    pub fn uniform(n: usize, seed: u64) -> ParticleEnsemble {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = (0..n)
            .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
            .collect();
        ParticleEnsemble {
            positions,
            origin: OriginTag::Uniform,
            region_volume: 1.0,
            seed,
        }
    }
}

/// Advect an ensemble from `t0` to `t1`; returns the moved ensemble.
pub fn advect<V: VelocityField + ?Sized>(
    field: &V,
    ensemble: &ParticleEnsemble,
    t0: f64,
    t1: f64,
    dt: f64,
) -> ParticleEnsemble {
    let mut pts = ensemble.positions.clone();
    advect_points_with(field, &mut pts, t0, t1, dt, |_, _| {});
    ParticleEnsemble {
        positions: pts,
        ..ensemble.clone()
    }
}

/// Backward membership test: for each point, integrate from time `t_end`
/// back to 0 and test membership in `region0`. This characterizes points of
/// the forward image `Phi(t_end, region0)` without constructing it.
pub fn inverse_membership<V: VelocityField + ?Sized, R: Fn(Vec3) -> bool + Sync>(
    field: &V,
    region0: R,
    points: &[Vec3],
    t_end: f64,
    dt: f64,
) -> Vec<bool> {
    let mut pts = points.to_vec();
    advect_points_with(field, &mut pts, t_end, 0.0, dt, |_, _| {});
    pts.par_iter().map(|p| region0(*p)).collect()
}

/// Monte Carlo measure report for the transport defect.
#[derive(Debug, Clone)]
pub struct DefectReport {
    /// `L(P1^eps \ Phi(T, P0^eps))` estimate and 95% half-width.
    pub defect: f64,
    pub defect_half_width: f64,
    /// Defect of the limit flow `L(P1 \ phi_lim(T, P0))`, when supplied.
    pub limit_defect: Option<(f64, f64)>,
    /// Exact total hole volume (bounds `L(P0 \ P0^eps)`).
    pub hole_volume: f64,
    /// `L(phi_lim(T, P0^eps) \ Phi(T, P0^eps))` estimate, when supplied.
    pub discrepancy: Option<(f64, f64)>,
    pub samples: usize,
}

fn binomial_hw(p: f64, n: usize) -> f64 {
    1.96 * (p.max(1e-12) * (1.0 - p).max(0.0) / n as f64).sqrt()
}

/// Estimate the measure defect of the transport `P0^eps -> P1` under `flow`,
/// optionally decomposed against a limit flow.
#[allow(clippy::too_many_arguments)]
pub fn measure_defect<V: VelocityField + ?Sized>(
    flow: &V,
    limit: Option<&dyn VelocityField>,
    domain: &PerforatedDomain,
    p0: &Patch,
    p1: &Patch,
    t_end: f64,
    samples: usize,
    seed: u64,
    dt: f64,
) -> DefectReport {
    crate::geometry::check_equal_volume(p0, p1).expect("paired patches must match volumes");
    // Sample P1 uniformly; classify into: in-hole (never reachable),
    // captured (backward lands in P0^eps), missed.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec3> = (0..samples).map(|_| p1.sample_interior(&mut rng)).collect();
    let fluid: Vec<bool> = pts.par_iter().map(|p| domain.is_fluid(*p)).collect();
    let in_p0eps =
        inverse_membership(flow, |x| p0.contains(x) && domain.is_fluid(x), &pts, t_end, dt);
    let missed = fluid
        .iter()
        .zip(&in_p0eps)
        .filter(|(f, c)| **f && !**c)
        .count();
    let frac = missed as f64 / samples as f64;
    let defect = frac * p1.volume();
    let defect_half_width = binomial_hw(frac, samples) * p1.volume();

    let mut limit_defect = None;
    let mut discrepancy = None;
    if let Some(lim) = limit {
        // Limit defect over the full patches: backward under the limit flow,
        // membership in P0.
        let in_p0 = inverse_membership(lim, |x| p0.contains(x), &pts, t_end, dt);
        let missed_l = in_p0.iter().filter(|c| !**c).count();
        let frac_l = missed_l as f64 / samples as f64;
        limit_defect = Some((frac_l * p1.volume(), binomial_hw(frac_l, samples) * p1.volume()));
        // Flow discrepancy term: push P0^eps samples forward under the limit
        // flow, pull back under `flow`, test return into P0^eps.
        let ens = ParticleEnsemble::from_patch_fluid(p0, domain, samples, seed ^ 0x9e37_79b9);
        let fwd = advect(lim, &ens, 0.0, t_end, dt);
        let back = inverse_membership(
            flow,
            |x| p0.contains(x) && domain.is_fluid(x),
            &fwd.positions,
            t_end,
            dt,
        );
        let lost = back.iter().filter(|c| !**c).count();
        let frac_d = lost as f64 / samples as f64;
        discrepancy = Some((
            frac_d * ens.region_volume,
            binomial_hw(frac_d, samples) * ens.region_volume,
        ));
    }
    DefectReport {
        defect,
        defect_half_width,
        limit_defect,
        hole_volume: domain.hole_volume_total(),
        discrepancy,
        samples,
    }
}

/// Time series of the Monte Carlo L2/L1 distance of two flows and the
/// measure of the exceedance set at threshold `eta`.
#[derive(Debug, Clone)]
pub struct DiscrepancyCurve {
    pub times: Vec<f64>,
    pub l2: Vec<f64>,
    pub l1: Vec<f64>,
    pub exceedance: Vec<f64>,
    pub exceedance_half_width: Vec<f64>,
    pub eta: f64,
}

/// Advect one ensemble under two fields and compare trajectories.
pub fn flow_discrepancy<A: VelocityField + ?Sized, B: VelocityField + ?Sized>(
    field_a: &A,
    field_b: &B,
    ensemble: &ParticleEnsemble,
    t_end: f64,
    dt: f64,
    eta: f64,
    outputs: usize,
) -> DiscrepancyCurve {
    let n = ensemble.positions.len();
    let vol = ensemble.region_volume;
    let mut pa = ensemble.positions.clone();
    let mut pb = ensemble.positions.clone();
    let steps = (t_end / dt).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    let every = (steps / outputs.max(1)).max(1);
    let mut curve = DiscrepancyCurve {
        times: vec![0.0],
        l2: vec![0.0],
        l1: vec![0.0],
        exceedance: vec![0.0],
        exceedance_half_width: vec![0.0],
        eta,
    };
    for s in 0..steps {
        let t = s as f64 * h;
        rk4_step_points(&mut pa, |tt, x| field_a.velocity(tt, x), t, h);
        rk4_step_points(&mut pb, |tt, x| field_b.velocity(tt, x), t, h);
        if (s + 1) % every == 0 || s + 1 == steps {
            let mut sum2 = 0.0;
            let mut sum1 = 0.0;
            let mut exc = 0usize;
            for (a, b) in pa.iter().zip(pb.iter()) {
                let d = vec3::periodic_dist(*a, *b);
                sum2 += d * d;
                sum1 += d;
                if d > eta {
                    exc += 1;
                }
            }
            let frac = exc as f64 / n as f64;
            curve.times.push(t + h);
            curve.l2.push((vol * sum2 / n as f64).sqrt());
            curve.l1.push(vol * sum1 / n as f64);
            curve.exceedance.push(vol * frac);
            curve.exceedance_half_width.push(vol * binomial_hw(frac, n));
        }
    }
    curve
}

/// Minimum clearance of advected boundary samples from the control zone over
/// a dense time grid.
pub fn clearance<V: VelocityField + ?Sized>(
    field: &V,
    boundary: &[Vec3],
    zone: &ControlZone,
    t_end: f64,
    dt: f64,
) -> f64 {
    let mut pts = boundary.to_vec();
    let mut min = pts
        .iter()
        .map(|p| zone.signed_distance(*p))
        .fold(f64::INFINITY, f64::min);
    advect_points_with(field, &mut pts, 0.0, t_end, dt, |_, ps| {
        for p in ps {
            min = min.min(zone.signed_distance(*p));
        }
    });
    min
}

/// Exact time relabeling between the scaled and unit frames:
/// `phi_scaled(t) = Phi_unit(factor * t)` with `factor = eps^beta` (Euler) or
/// `eps^(alpha + 2 beta - 3)` (Darcy).
#[derive(Debug, Clone, Copy)]
pub enum FrameMode {
    Euler { beta: f64 },
    Darcy { alpha: f64, beta: f64 },
}

impl FrameMode {
    pub fn time_factor(&self, eps: f64) -> f64 {
        match self {
            FrameMode::Euler { beta } => eps.powf(*beta),
            FrameMode::Darcy { alpha, beta } => eps.powf(alpha + 2.0 * beta - 3.0),
        }
    }
}

/// Map a scaled-frame flow time to the unit frame.
pub fn flow_time_to_unit(mode: FrameMode, eps: f64, t_scaled: f64) -> f64 {
    t_scaled * mode.time_factor(eps)
}

/// Map a unit-frame flow time to the scaled frame.
pub fn flow_time_to_scaled(mode: FrameMode, eps: f64, t_unit: f64) -> f64 {
    t_unit / mode.time_factor(eps)
}

/// Per-particle fraction that ends inside the penalized hole region (possible
/// under smeared no-slip); flagged, not deleted.
pub fn hole_fraction(domain: &PerforatedDomain, pts: &[Vec3]) -> f64 {
    let inside = pts.iter().filter(|p| !domain.is_fluid(**p)).count();
    inside as f64 / pts.len().max(1) as f64
}

pub fn ensure_coverage(t0: f64, t1: f64, lo: f64, hi: f64) -> Result<()> {
    if t0.min(t1) < lo - 1e-12 || t0.max(t1) > hi + 1e-12 {
        return Err(Error::FieldGapped { t0, t1 });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_is_exact() {
        let c = [0.13, -0.07, 0.21];
        let f = AnalyticField(move |_t, _x| c);
        let ens = ParticleEnsemble::from_patch(
            &Patch::Ball { center: [0.5; 3], radius: 0.1 },
            100,
            1,
        );
        let moved = advect(&f, &ens, 0.0, 1.0, 0.01);
        for (a, b) in ens.positions.iter().zip(moved.positions.iter()) {
            let want = vec3::wrap(vec3::add(*a, c));
            assert!(vec3::periodic_dist(want, *b) < 1e-13);
        }
    }

    #[test]
    fn rigid_rotation_preserves_radius() {
        // Rotation about the z-axis through (1/2, 1/2): period 1 at omega = 2 pi.
        let omega = 2.0 * std::f64::consts::PI;
        let f = AnalyticField(move |_t, x: Vec3| {
            let dx = x[0] - 0.5;
            let dy = x[1] - 0.5;
            [-omega * dy, omega * dx, 0.0]
        });
        let start = [0.7, 0.5, 0.5];
        let mut pts = vec![start];
        advect_points_with(&f, &mut pts, 0.0, 1.0, 1e-3, |_, _| {});
        // One full period: back to the start, radius preserved.
        assert!(vec3::periodic_dist(pts[0], start) < 1e-8);
        let r = ((pts[0][0] - 0.5).powi(2) + (pts[0][1] - 0.5).powi(2)).sqrt();
        assert!((r - 0.2).abs() < 1e-8);
    }

    #[test]
    fn inverse_membership_constant_field() {
        let c = [0.3, 0.0, 0.0];
        let f = AnalyticField(move |_t, _x| c);
        let ball = Patch::Ball { center: [0.3, 0.5, 0.5], radius: 0.1 };
        // y is in the image iff y - Tc lies in the ball.
        let probe = [0.65, 0.5, 0.5]; // preimage 0.35: inside
        let probe2 = [0.85, 0.5, 0.5]; // preimage 0.55: outside
        let res = inverse_membership(&f, |x| ball.contains(x), &[probe, probe2], 1.0, 0.01);
        assert_eq!(res, vec![true, false]);
        // Zero field: membership equals region membership.
        let zero = AnalyticField(|_t, _x| [0.0; 3]);
        let res0 = inverse_membership(&zero, |x| ball.contains(x), &[probe, probe2], 1.0, 0.01);
        assert_eq!(res0, vec![ball.contains(probe), ball.contains(probe2)]);
    }

    #[test]
    fn forward_backward_round_trip() {
        // A smooth solenoidal field; round trip must return into the patch.
        let tau = 2.0 * std::f64::consts::PI;
        let f = AnalyticField(move |t: f64, x: Vec3| {
            let a = 0.3 * (1.0 - (t - 0.5) * (t - 0.5));
            [
                a * (tau * x[1]).sin() * (tau * x[2]).cos(),
                a * (tau * x[2]).sin() * (tau * x[0]).cos(),
                a * (tau * x[0]).sin() * (tau * x[1]).cos(),
            ]
        });
        let patch = Patch::Ball { center: [0.4, 0.5, 0.5], radius: 0.1 };
        let ens = ParticleEnsemble::from_patch(&patch, 2000, 7);
        let fwd = advect(&f, &ens, 0.0, 1.0, 1e-3);
        let back = inverse_membership(&f, |x| patch.contains(x), &fwd.positions, 1.0, 1e-3);
        let ok = back.iter().filter(|b| **b).count();
        assert!(
            ok as f64 >= 0.999 * ens.positions.len() as f64,
            "returned {ok}/{}",
            ens.positions.len()
        );
    }

    #[test]
    fn defect_trivial_cases() {
        let spec = crate::geometry::DomainSpec {
            mode: crate::geometry::Mode::Full,
            n: 3,
            alpha: 2.0,
            particle: crate::geometry::ParticleShape::Ball { radius: 0.125 },
            rng_seed: 1,
        };
        let domain = crate::geometry::build_perforated_domain(&spec).unwrap();
        let p0 = Patch::Ball { center: [0.25, 0.5, 0.5], radius: 0.08 };
        let p1 = Patch::Ball { center: [0.75, 0.5, 0.5], radius: 0.08 };
        let zero = AnalyticField(|_t, _x| [0.0; 3]);
        // T = 0-like: zero field, disjoint patches: defect = vol(P1).
        let rep = measure_defect(&zero, None, &domain, &p0, &p1, 1.0, 20_000, 3, 0.05);
        assert!(
            (rep.defect - p1.volume()).abs() <= rep.defect_half_width + 1e-6,
            "defect {} vs vol {}",
            rep.defect,
            p1.volume()
        );
        // Identity flow with P0 = P1: defect bounded by the hole content.
        let rep2 = measure_defect(&zero, None, &domain, &p1, &p1, 1.0, 20_000, 4, 0.05);
        let hole_frac_bound = domain.hole_volume_total();
        assert!(
            rep2.defect <= hole_frac_bound + rep2.defect_half_width,
            "defect {} holes {}",
            rep2.defect,
            hole_frac_bound
        );
    }

    #[test]
    fn discrepancy_constant_offset_fields() {
        let a = AnalyticField(|_t, _x| [0.2, 0.0, 0.0]);
        let b = AnalyticField(|_t, _x| [0.45, 0.0, 0.0]);
        let ens = ParticleEnsemble::uniform(2000, 5);
        let eta = 0.1;
        let curve = flow_discrepancy(&a, &b, &ens, 1.0, 1e-2, eta, 10);
        // Distance |c| t exactly (difference 0.25), volume 1.
        for (t, l2) in curve.times.iter().zip(curve.l2.iter()) {
            let want = 0.25 * t;
            // Periodic distance saturates at 1/2; stay below that.
            if want < 0.5 {
                assert!((l2 - want).abs() < 1e-10, "t={t}: {l2} vs {want}");
            }
        }
        // Exceedance jumps from 0 to full at t = eta/|c| = 0.4.
        for (t, e) in curve.times.iter().zip(curve.exceedance.iter()) {
            if *t < 0.38 {
                assert_eq!(*e, 0.0, "t={t}");
            }
            if *t > 0.42 && 0.25 * t < 0.5 {
                assert!((e - 1.0).abs() < 1e-12, "t={t}: {e}");
            }
        }
        // Identical fields: zero everywhere.
        let same = flow_discrepancy(&a, &a, &ens, 1.0, 0.05, eta, 4);
        assert!(same.l2.iter().all(|v| *v == 0.0));
        assert!(same.exceedance.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn markov_inequality_per_sample() {
        // exceedance <= L1 / eta holds sample-wise, hence for the estimates.
        let a = AnalyticField(|_t, x: Vec3| [0.1 * (x[1] * 6.0).sin(), 0.0, 0.0]);
        let b = AnalyticField(|_t, _x| [0.0, 0.0, 0.0]);
        let ens = ParticleEnsemble::uniform(1000, 11);
        let eta = 0.02;
        let curve = flow_discrepancy(&a, &b, &ens, 1.0, 0.02, eta, 8);
        for ((e, l1), _t) in curve
            .exceedance
            .iter()
            .zip(curve.l1.iter())
            .zip(curve.times.iter())
        {
            assert!(*e <= l1 / eta + 1e-12);
        }
    }

    #[test]
    fn clearance_zero_field() {
        let zone = ControlZone { center: [0.7, 0.5, 0.5], radius: 0.1 };
        let patch = Patch::Ball { center: [0.3, 0.5, 0.5], radius: 0.05 };
        let boundary: Vec<Vec3> = patch
            .boundary_fibonacci(200)
            .into_iter()
            .map(|(p, _)| p)
            .collect();
        let zero = AnalyticField(|_t, _x| [0.0; 3]);
        let c = clearance(&zero, &boundary, &zone, 1.0, 0.05);
        // dist(gamma_0, zone) = 0.4 - 0.05 - 0.1 = 0.25 (boundary samples).
        assert!((c - 0.25).abs() < 1e-3, "{c}");
    }

    #[test]
    fn frame_map_round_trip() {
        let mode = FrameMode::Darcy { alpha: 2.0, beta: 0.4 };
        let eps = 0.25;
        for &t in &[0.0, 0.17, 0.5, 1.0] {
            let u = flow_time_to_unit(mode, eps, t);
            let back = flow_time_to_scaled(mode, eps, u);
            assert!((back - t).abs() < 1e-14);
        }
        // t = 0 is a fixed point.
        assert_eq!(flow_time_to_unit(mode, eps, 0.0), 0.0);
        // Euler: scaled t = 1 maps to eps^beta.
        let em = FrameMode::Euler { beta: 1.5 };
        assert!((flow_time_to_unit(em, 0.5, 1.0) - 0.5f64.powf(1.5)).abs() < 1e-15);
    }
}
