//! Rigid-translation isotopies between equal-volume patches.
//!
//! The patch is carried along a piecewise-linear center path (optionally
//! through user waypoints) while each segment is reparameterized by a smooth
//! step whose derivatives vanish to all orders at the segment ends. The
//! transport field is the spatially uniform `X(t,x) = cdot(t)`, which is
//! divergence-free and moves the patch rigidly.

use crate::error::{Error, Result};
use crate::geometry::{check_equal_volume, ControlZone, Patch};
use crate::vec3::{self, Vec3};

/// Smooth step on [0,1]: 0 at 0, 1 at 1, flat to all orders at both ends.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let b = (-1.0 / s).exp();
        let c = (-1.0 / (1.0 - s)).exp();
        b / (b + c)
    }
}

/// Derivative of [`smooth_step`].
pub fn smooth_step_deriv(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        0.0
    } else {
        let b = (-1.0 / s).exp();
        let c = (-1.0 / (1.0 - s)).exp();
        let db = b / (s * s);
        let dc = -c / ((1.0 - s) * (1.0 - s));
        (db * c - b * dc) / ((b + c) * (b + c))
    }
}

/// A time-sliced rigid isotopy from `p0` to `p1` avoiding the control zone.
#[derive(Debug, Clone)]
pub struct Isotopy {
    pub p0: Patch,
    pub p1: Patch,
    /// Unwrapped path nodes in the covering space (consecutive displacements
    /// follow nearest periodic images).
    nodes: Vec<Vec3>,
    /// Start time of each segment plus the final 1.0.
    times: Vec<f64>,
    /// Minimum clearance of the carried patch from the control zone closure.
    pub d0: f64,
    pub zone: ControlZone,
}

/// Build the isotopy. `waypoints` are intermediate centers (torus points);
/// without them the straight nearest-image segment is used.
pub fn build_isotopy(
    p0: &Patch,
    p1: &Patch,
    waypoints: &[Vec3],
    zone: &ControlZone,
) -> Result<Isotopy> {
    check_equal_volume(p0, p1)?;
    if (p0.bounding_radius() - p1.bounding_radius()).abs() > 1e-12 {
        return Err(Error::InvalidSpec(
            "rigid translation requires congruent patches".into(),
        ));
    }
    // Unwrap the node chain in the covering space.
    let mut nodes = vec![p0.center()];
    for w in waypoints.iter().chain(std::iter::once(&p1.center())) {
        let prev = *nodes.last().unwrap();
        let step = vec3::periodic_delta(*w, vec3::wrap(prev));
        nodes.push(vec3::add(prev, step));
    }
    // Allocate time proportionally to segment length (single span for
    // zero-length paths).
    let lens: Vec<f64> = nodes
        .windows(2)
        .map(|w| vec3::norm(vec3::sub(w[1], w[0])))
        .collect();
    let total: f64 = lens.iter().sum();
    let mut times = vec![0.0];
    if total < 1e-15 {
        nodes = vec![nodes[0], *nodes.last().unwrap()];
        times.push(1.0);
    } else {
        for l in &lens {
            let last = *times.last().unwrap();
            times.push(last + l / total);
        }
        *times.last_mut().unwrap() = 1.0;
    }
    let iso = Isotopy {
        p0: *p0,
        p1: *p1,
        nodes,
        times,
        d0: 0.0,
        zone: *zone,
    };
    let d0 = iso.min_clearance(2048);
    if d0 <= 0.0 {
        return Err(Error::PathBlocked { margin: d0 });
    }
    Ok(Isotopy { d0, ..iso })
}

impl Isotopy {
    fn segment(&self, t: f64) -> usize {
        let t = t.clamp(0.0, 1.0);
        match self.times.windows(2).position(|w| t >= w[0] && t <= w[1]) {
            Some(i) => i,
            None => self.times.len() - 2,
        }
    }

    /// Patch center at time `t` (unwrapped covering-space point).
    pub fn center_unwrapped(&self, t: f64) -> Vec3 {
        let i = self.segment(t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let s = smooth_step(((t - t0) / (t1 - t0)).clamp(0.0, 1.0));
        let a = self.nodes[i];
        let b = self.nodes[i + 1];
        vec3::add(a, vec3::scale(vec3::sub(b, a), s))
    }

    /// Patch center at time `t` on the torus.
    pub fn center(&self, t: f64) -> Vec3 {
        vec3::wrap(self.center_unwrapped(t))
    }

    /// Transport velocity `cdot(t)`; vanishes to all orders at t = 0, 1 and
    /// at every waypoint.
    pub fn velocity(&self, t: f64) -> Vec3 {
        if !(0.0..=1.0).contains(&t) {
            return [0.0; 3];
        }
        let i = self.segment(t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let ds = smooth_step_deriv((t - t0) / (t1 - t0)) / (t1 - t0);
        vec3::scale(vec3::sub(self.nodes[i + 1], self.nodes[i]), ds)
    }

    /// The carried patch at time `t`.
    pub fn patch_at(&self, t: f64) -> Patch {
        self.p0.with_center(self.center(t))
    }

    /// Minimum clearance of the carried patch from the zone over a uniform
    /// time grid of `samples` points.
    pub fn min_clearance(&self, samples: usize) -> f64 {
        let r = self.p0.bounding_radius();
        (0..=samples)
            .map(|i| {
                let t = i as f64 / samples as f64;
                vec3::periodic_dist(self.center(t), self.zone.center) - self.zone.radius - r
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Uniform knot times over [0,1] (always includes both endpoints).
    pub fn knot_times(&self, count: usize) -> Vec<f64> {
        let count = count.max(2);
        (0..count).map(|i| i as f64 / (count - 1) as f64).collect()
    }
}
