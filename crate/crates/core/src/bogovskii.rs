//! Right inverse of the divergence with support control on the control ball.
//!
//! For a zero-mean source `g` supported in the zone, the field
//! `w(x) = int g(y) (x-y)/|x-y|^3 int_{|x-y|}^inf omega(y + s (x-y)/|x-y|) s^2 ds dy`
//! satisfies `div w = g` and `supp w` inside the zone (`omega` is a unit-mass
//! bump in the zone's core). Substituting `y = x - r n` removes the kernel
//! singularity and factorizes the inner integral, leaving for each direction
//! `n` products of backward ray integrals of `g` and forward ray integrals of
//! `omega`:
//!
//! `w(x) = int_{S^2} n [G0 W2 + 2 G1 W1 + G2 W0] dn`,
//! `Gj(n) = int g(x - r n) r^j dr`, `Wj(n) = int omega(x + s n) s^j ds`.
//!
//! Because the zone is convex, a ray can meet the support of `g` backward or
//! the support of `omega` forward, never both, once `x` leaves the zone: the
//! field vanishes there identically, by quadrature structure rather than by
//! cutoff.

use crate::error::{Error, Result};
use crate::geometry::ControlZone;
use crate::greens::{gauss_legendre_01, BumpProfile};
use crate::vec3::{self, Vec3};

/// Quadrature orders for the operator.
#[derive(Debug, Clone, Copy)]
pub struct BogQuad {
    /// Gauss-Legendre nodes per ray chord.
    pub n_radial: usize,
    /// Gauss-Legendre nodes in cos(theta).
    pub n_theta: usize,
    /// Uniform nodes in phi.
    pub n_phi: usize,
}

impl Default for BogQuad {
    fn default() -> Self {
        BogQuad {
            n_radial: 16,
            n_theta: 12,
            n_phi: 24,
        }
    }
}

impl BogQuad {
    pub fn refined(&self) -> BogQuad {
        BogQuad {
            n_radial: self.n_radial * 2,
            n_theta: self.n_theta * 2,
            n_phi: self.n_phi * 2,
        }
    }
}

/// A scalar source with known support, evaluated pointwise; sources that are
/// sums of radial blobs expose them for exact per-blob chord integration.
pub trait SourceField: Sync {
    fn eval(&self, p: Vec3) -> f64;
    /// Gradient (needed only for gradient assembly).
    fn eval_grad(&self, p: Vec3) -> Vec3;
    /// Blob decomposition: (center, Euclidean support radius) per blob.
    fn blobs(&self) -> Option<Vec<(Vec3, f64)>> {
        None
    }
    /// Value and gradient of one blob's contribution alone.
    fn eval_blob(&self, _idx: usize, _p: Vec3) -> (f64, Vec3) {
        unimplemented!("blob evaluation requires blobs()")
    }
    /// Exact mean when structurally known (e.g. zero-sum bump charges).
    fn exact_mean(&self) -> Option<f64> {
        None
    }
}

/// Bogovskii operator on one control zone.
pub struct BogovskiiOp {
    pub zone: ControlZone,
    pub quad: BogQuad,
    /// Support radius of the core bump `omega`.
    pub omega_radius: f64,
    omega: BumpProfile,
    dirs: Vec<(Vec3, f64)>,
    chord_nodes: Vec<f64>,
    chord_weights: Vec<f64>,
    blob_nodes: Vec<f64>,
    blob_weights: Vec<f64>,
}

impl BogovskiiOp {
    pub fn new(zone: ControlZone, quad: BogQuad) -> BogovskiiOp {
        let omega_radius = 0.5 * zone.radius;
        let omega = BumpProfile::new(omega_radius, 1.0);
        // Product rule on the sphere: GL in cos(theta) x uniform in phi.
        let (tn, tw) = gauss_legendre_01(quad.n_theta);
        let mut dirs = Vec::with_capacity(quad.n_theta * quad.n_phi);
        for (ct, wt) in tn.iter().zip(tw.iter()) {
            let cos_t = 2.0 * ct - 1.0;
            let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
            for ip in 0..quad.n_phi {
                let phi = 2.0 * std::f64::consts::PI * ip as f64 / quad.n_phi as f64;
                let n = [sin_t * phi.cos(), sin_t * phi.sin(), cos_t];
                // dn = 2 (GL on [0,1] for cos) * 2 pi / n_phi.
                let w = 2.0 * wt * 2.0 * std::f64::consts::PI / quad.n_phi as f64;
                dirs.push((n, w));
            }
        }
        let (cn, cw) = gauss_legendre_01(quad.n_radial);
        let (bn, bw) = gauss_legendre_01(8);
        BogovskiiOp {
            zone,
            quad,
            omega_radius,
            omega,
            dirs,
            chord_nodes: cn,
            chord_weights: cw,
            blob_nodes: bn,
            blob_weights: bw,
        }
    }

    /// Interval of `t >= 0` where `|base + t dir - center| <= radius`.
    fn chord(base: Vec3, dir: Vec3, center: Vec3, radius: f64) -> Option<(f64, f64)> {
        let d = vec3::periodic_delta(base, center);
        let b = vec3::dot(d, dir);
        let c = vec3::dot(d, d) - radius * radius;
        let disc = b * b - c;
        if disc <= 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let (t0, t1) = (-b - sq, -b + sq);
        if t1 <= 0.0 {
            return None;
        }
        Some((t0.max(0.0), t1))
    }

    /// Forward ray moments of omega: `Wj = int omega(x + s n) s^j ds`.
    fn omega_moments(&self, x: Vec3, n: Vec3) -> [f64; 3] {
        let mut m = [0.0; 3];
        if let Some((s0, s1)) = Self::chord(x, n, self.zone.center, self.omega_radius) {
            let len = s1 - s0;
            for (t, w) in self.blob_nodes.iter().zip(self.blob_weights.iter()) {
                let s = s0 + t * len;
                let p = [x[0] + s * n[0], x[1] + s * n[1], x[2] + s * n[2]];
                let r = vec3::periodic_dist(p, self.zone.center);
                let v = self.omega.density(r) * w * len;
                m[0] += v;
                m[1] += v * s;
                m[2] += v * s * s;
            }
        }
        m
    }

    /// Mean and L1 norm of a generic source by spherical-shell quadrature.
    pub fn source_moments(&self, g: &dyn SourceField) -> (f64, f64) {
        if let Some(blobs) = g.blobs() {
            // Radial quadrature per blob.
            let mut mean = 0.0;
            let mut l1 = 0.0;
            let (bn, bw) = gauss_legendre_01(24);
            for (idx, (c, r)) in blobs.iter().enumerate() {
                for (t, w) in bn.iter().zip(bw.iter()) {
                    let rr = t * r;
                    // Spherically symmetric blobs: radial sampling along x.
                    let p = vec3::wrap(vec3::add(*c, [rr, 0.0, 0.0]));
                    let (v, _) = g.eval_blob(idx, p);
                    let shell = 4.0 * std::f64::consts::PI * rr * rr * w * r;
                    mean += v * shell;
                    l1 += v.abs() * shell;
                }
            }
            (mean, l1)
        } else {
            let (rn, rw) = gauss_legendre_01(32);
            let mut mean = 0.0;
            let mut l1 = 0.0;
            for (n, wd) in &self.dirs {
                for (t, w) in rn.iter().zip(rw.iter()) {
                    let r = t * self.zone.radius;
                    let p = vec3::wrap(vec3::add(self.zone.center, vec3::scale(*n, r)));
                    let v = g.eval(p);
                    let vol = wd * w * self.zone.radius * r * r;
                    mean += v * vol;
                    l1 += v.abs() * vol;
                }
            }
            (mean, l1)
        }
    }

    /// Validate the operator preconditions: zero mean and zone support.
    pub fn check_source(&self, g: &dyn SourceField) -> Result<()> {
        let (mean, l1) = self.source_moments(g);
        if l1 == 0.0 {
            return Ok(());
        }
        let mean = g.exact_mean().unwrap_or(mean);
        let tol = if g.exact_mean().is_some() { 1e-10 } else { 1e-6 };
        if mean.abs() > tol * l1 {
            return Err(Error::MeanNotZero { mean, norm1: l1 });
        }
        // Support check: a shell just outside the zone must evaluate to zero.
        let shell = self.zone.radius * 1.001;
        for i in 0..200 {
            let a = 2.399963 * i as f64; // golden angle walk
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / 200.0;
            let s = (1.0 - z * z).max(0.0).sqrt();
            let dir = [s * a.cos(), s * a.sin(), z];
            let p = vec3::wrap(vec3::add(self.zone.center, vec3::scale(dir, shell)));
            let v = g.eval(p);
            if v != 0.0 {
                return Err(Error::SupportViolation {
                    value: v,
                    dist: shell - self.zone.radius,
                });
            }
        }
        Ok(())
    }

    /// Apply to a generic source: `w(x)` and its Jacobian `dw_i/dx_a`.
    pub fn apply(&self, g: &dyn SourceField, x: Vec3) -> (Vec3, [[f64; 3]; 3]) {
        let mut w = [0.0; 3];
        let mut dw = [[0.0; 3]; 3];
        for (n, wd) in &self.dirs {
            let om = self.omega_moments(x, *n);
            if om[0] == 0.0 && om[1] == 0.0 && om[2] == 0.0 {
                continue;
            }
            // Backward ray moments of g over the zone chord.
            let back = [-n[0], -n[1], -n[2]];
            let Some((r0, r1)) = Self::chord(x, back, self.zone.center, self.zone.radius) else {
                continue;
            };
            let len = r1 - r0;
            let mut gm = [0.0; 3];
            let mut dgm = [[0.0; 3]; 3];
            for (t, wq) in self.chord_nodes.iter().zip(self.chord_weights.iter()) {
                let r = r0 + t * len;
                let p = [x[0] - r * n[0], x[1] - r * n[1], x[2] - r * n[2]];
                let v = g.eval(vec3::wrap(p)) * wq * len;
                let gr = g.eval_grad(vec3::wrap(p));
                gm[0] += v;
                gm[1] += v * r;
                gm[2] += v * r * r;
                for a in 0..3 {
                    let gv = gr[a] * wq * len;
                    dgm[0][a] += gv;
                    dgm[1][a] += gv * r;
                    dgm[2][a] += gv * r * r;
                }
            }
            let p_scalar = gm[0] * om[2] + 2.0 * gm[1] * om[1] + gm[2] * om[0];
            for i in 0..3 {
                w[i] += n[i] * p_scalar * wd;
            }
            // Gradient: omega moments also depend on x; their derivative along
            // a is the ray integral of grad omega. Compute it analytically.
            let dom = self.omega_moment_grads(x, *n);
            for a in 0..3 {
                let dp = dgm[0][a] * om[2]
                    + gm[0] * dom[2][a]
                    + 2.0 * (dgm[1][a] * om[1] + gm[1] * dom[1][a])
                    + dgm[2][a] * om[0]
                    + gm[2] * dom[0][a];
                for i in 0..3 {
                    dw[i][a] += n[i] * dp * wd;
                }
            }
        }
        (w, dw)
    }

    /// Gradients of the omega moments with respect to the base point.
    fn omega_moment_grads(&self, x: Vec3, n: Vec3) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        if let Some((s0, s1)) = Self::chord(x, n, self.zone.center, self.omega_radius) {
            let len = s1 - s0;
            for (t, w) in self.blob_nodes.iter().zip(self.blob_weights.iter()) {
                let s = s0 + t * len;
                let p = [x[0] + s * n[0], x[1] + s * n[1], x[2] + s * n[2]];
                let d = vec3::periodic_delta(p, self.zone.center);
                let r = vec3::norm(d);
                if r >= self.omega_radius || r < 1e-14 {
                    continue;
                }
                let dv = self.omega.density_deriv(r);
                for a in 0..3 {
                    let gr = dv * d[a] / r * w * len;
                    m[0][a] += gr;
                    m[1][a] += gr * s;
                    m[2][a] += gr * s * s;
                }
            }
        }
        m
    }

    /// Per-blob fields for a blob-decomposed source with unit blob weights:
    /// returns for each blob `(w_m(x), dw_m(x))` so that the field of any
    /// weighted combination is the same combination of the returns.
    pub fn apply_per_blob(
        &self,
        g: &dyn SourceField,
        x: Vec3,
    ) -> Vec<(Vec3, [[f64; 3]; 3])> {
        let blobs = g.blobs().expect("per-blob application requires blobs()");
        let nb = blobs.len();
        let mut out = vec![([0.0; 3], [[0.0; 3]; 3]); nb];
        for (n, wd) in &self.dirs {
            let om = self.omega_moments(x, *n);
            let dom = self.omega_moment_grads(x, *n);
            if om.iter().all(|v| *v == 0.0) && dom.iter().all(|r| r.iter().all(|v| *v == 0.0)) {
                continue;
            }
            let back = [-n[0], -n[1], -n[2]];
            for (idx, (bc, br)) in blobs.iter().enumerate() {
                let Some((r0, r1)) = Self::chord(x, back, *bc, *br) else {
                    continue;
                };
                let len = r1 - r0;
                if len <= 0.0 {
                    continue;
                }
                let mut gm = [0.0; 3];
                let mut dgm = [[0.0; 3]; 3];
                for (t, wq) in self.blob_nodes.iter().zip(self.blob_weights.iter()) {
                    let r = r0 + t * len;
                    let p = vec3::wrap([x[0] - r * n[0], x[1] - r * n[1], x[2] - r * n[2]]);
                    let (v, gr) = g.eval_blob(idx, p);
                    let vv = v * wq * len;
                    gm[0] += vv;
                    gm[1] += vv * r;
                    gm[2] += vv * r * r;
                    for a in 0..3 {
                        let gv = gr[a] * wq * len;
                        dgm[0][a] += gv;
                        dgm[1][a] += gv * r;
                        dgm[2][a] += gv * r * r;
                    }
                }
                let p_scalar = gm[0] * om[2] + 2.0 * gm[1] * om[1] + gm[2] * om[0];
                let (w, dw) = &mut out[idx];
                for i in 0..3 {
                    w[i] += n[i] * p_scalar * wd;
                }
                for a in 0..3 {
                    let dp = dgm[0][a] * om[2]
                        + gm[0] * dom[2][a]
                        + 2.0 * (dgm[1][a] * om[1] + gm[1] * dom[1][a])
                        + dgm[2][a] * om[0]
                        + gm[2] * dom[0][a];
                    for i in 0..3 {
                        dw[i][a] += n[i] * dp * wd;
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::BumpProfile;

    struct TwoBumps {
        c1: Vec3,
        c2: Vec3,
        bump: BumpProfile,
    }

    impl TwoBumps {
        fn new(zone: &ControlZone) -> TwoBumps {
            let off = 0.35 * zone.radius;
            TwoBumps {
                c1: vec3::add(zone.center, [off, 0.0, 0.0]),
                c2: vec3::add(zone.center, [-off, 0.0, 0.0]),
                bump: BumpProfile::new(0.3 * zone.radius, 1.0),
            }
        }
    }

    impl SourceField for TwoBumps {
        fn eval(&self, p: Vec3) -> f64 {
            self.bump.density(vec3::periodic_dist(p, self.c1))
                - self.bump.density(vec3::periodic_dist(p, self.c2))
        }
        fn eval_grad(&self, p: Vec3) -> Vec3 {
            let mut g = [0.0; 3];
            for (c, sgn) in [(self.c1, 1.0), (self.c2, -1.0)] {
                let d = vec3::periodic_delta(p, c);
                let r = vec3::norm(d);
                if r > 1e-14 && r < self.bump.rho {
                    let dv = sgn * self.bump.density_deriv(r);
                    for a in 0..3 {
                        g[a] += dv * d[a] / r;
                    }
                }
            }
            g
        }
        fn blobs(&self) -> Option<Vec<(Vec3, f64)>> {
            Some(vec![(self.c1, self.bump.rho), (self.c2, self.bump.rho)])
        }
        fn eval_blob(&self, idx: usize, p: Vec3) -> (f64, Vec3) {
            let (c, sgn) = if idx == 0 { (self.c1, 1.0) } else { (self.c2, -1.0) };
            let d = vec3::periodic_delta(p, c);
            let r = vec3::norm(d);
            let v = sgn * self.bump.density(r);
            if r > 1e-14 && r < self.bump.rho {
                let dv = sgn * self.bump.density_deriv(r);
                (v, [dv * d[0] / r, dv * d[1] / r, dv * d[2] / r])
            } else {
                (v, [0.0; 3])
            }
        }
        fn exact_mean(&self) -> Option<f64> {
            Some(0.0)
        }
    }

    fn zone() -> ControlZone {
        ControlZone {
            center: [0.5, 0.5, 0.5],
            radius: 0.12,
        }
    }

    #[test]
    fn zero_source_zero_field() {
        struct Zero;
        impl SourceField for Zero {
            fn eval(&self, _p: Vec3) -> f64 {
                0.0
            }
            fn eval_grad(&self, _p: Vec3) -> Vec3 {
                [0.0; 3]
            }
        }
        let op = BogovskiiOp::new(zone(), BogQuad::default());
        op.check_source(&Zero).unwrap();
        let (w, _) = op.apply(&Zero, [0.5, 0.52, 0.5]);
        assert_eq!(w, [0.0; 3]);
    }

    #[test]
    fn field_vanishes_outside_zone_exactly() {
        let z = zone();
        let op = BogovskiiOp::new(z, BogQuad::default());
        let g = TwoBumps::new(&z);
        for i in 0..50 {
            let ang = i as f64;
            let dir = [
                (1.3 * ang).sin(),
                (0.7 * ang).cos(),
                (2.1 * ang).sin(),
            ];
            let n = vec3::norm(dir);
            let r = z.radius + 1e-9 + 0.3 * (i as f64 / 50.0);
            let p = vec3::wrap(vec3::add(z.center, vec3::scale(dir, r / n)));
            let (w, dw) = op.apply(&g, p);
            assert_eq!(w, [0.0; 3], "at {p:?}");
            assert!(dw.iter().all(|row| row.iter().all(|v| *v == 0.0)));
        }
    }

    #[test]
    fn divergence_matches_source() {
        // Central-difference divergence of w against g on interior points.
        let z = zone();
        let op = BogovskiiOp::new(z, BogQuad::default());
        let g = TwoBumps::new(&z);
        op.check_source(&g).unwrap();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for p in [
            [0.5, 0.5, 0.5],
            [0.53, 0.51, 0.49],
            [0.47, 0.5, 0.52],
            [0.5, 0.56, 0.5],
            [0.44, 0.46, 0.5],
        ] {
            let mut div = 0.0;
            for a in 0..3 {
                let mut hi = p;
                let mut lo = p;
                hi[a] += h;
                lo[a] -= h;
                div += (op.apply(&g, hi).0[a] - op.apply(&g, lo).0[a]) / (2.0 * h);
            }
            let gv = g.eval(p);
            worst = worst.max((div - gv).abs());
            scale = scale.max(gv.abs());
        }
        assert!(worst < 2e-2 * scale.max(1.0), "divergence error {worst} (scale {scale})");
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let z = zone();
        let op = BogovskiiOp::new(z, BogQuad::default());
        let g = TwoBumps::new(&z);
        let p = [0.52, 0.48, 0.5];
        let (_, dw) = op.apply(&g, p);
        let h = 1e-5;
        for a in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[a] += h;
            lo[a] -= h;
            let whi = op.apply(&g, hi).0;
            let wlo = op.apply(&g, lo).0;
            for i in 0..3 {
                let fd = (whi[i] - wlo[i]) / (2.0 * h);
                assert!(
                    (fd - dw[i][a]).abs() < 2e-3 * (1.0 + fd.abs()),
                    "dw[{i}][{a}]: {fd} vs {}",
                    dw[i][a]
                );
            }
        }
    }

    #[test]
    fn per_blob_sums_to_full_application() {
        let z = zone();
        let op = BogovskiiOp::new(z, BogQuad::default());
        let g = TwoBumps::new(&z);
        let p = [0.515, 0.49, 0.505];
        let (w_full, dw_full) = op.apply(&g, p);
        let parts = op.apply_per_blob(&g, p);
        let mut w_sum = [0.0; 3];
        let mut dw_sum = [[0.0; 3]; 3];
        for (w, dw) in &parts {
            for i in 0..3 {
                w_sum[i] += w[i];
                for a in 0..3 {
                    dw_sum[i][a] += dw[i][a];
                }
            }
        }
        for i in 0..3 {
            assert!((w_full[i] - w_sum[i]).abs() < 2e-4 * (1.0 + w_full[i].abs()));
            for a in 0..3 {
                assert!((dw_full[i][a] - dw_sum[i][a]).abs() < 2e-2 * (1.0 + dw_full[i][a].abs()));
            }
        }
    }

    #[test]
    fn mean_violation_detected() {
        struct OneBump {
            c: Vec3,
            bump: BumpProfile,
        }
        impl SourceField for OneBump {
            fn eval(&self, p: Vec3) -> f64 {
                self.bump.density(vec3::periodic_dist(p, self.c))
            }
            fn eval_grad(&self, _p: Vec3) -> Vec3 {
                [0.0; 3]
            }
        }
        let z = zone();
        let op = BogovskiiOp::new(z, BogQuad::default());
        let g = OneBump {
            c: z.center,
            bump: BumpProfile::new(0.3 * z.radius, 1.0),
        };
        assert!(matches!(
            op.check_source(&g),
            Err(Error::MeanNotZero { .. })
        ));
    }
}
