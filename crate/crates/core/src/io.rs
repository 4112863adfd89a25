//! File formats: domain manifests (text), field/trajectory dumps (binary,
//! little-endian 64-bit floats with a magic/version header), control bundles
//! (versioned text header plus binary payload), and CSV emitters.

use crate::bogovskii::BogQuad;
use crate::control::{darcy_control, euler_control, ControlTriplet};
use crate::error::{Error, Result};
use crate::geometry::{ControlZone, DomainSpec, PerforatedDomain};
use crate::greens::{GreensTable, OperatorKind};
use crate::potential::{assemble_theta, PotentialSnapshot};
use crate::solver::{EnergyLedger, Trajectory};
use ndarray::Array3;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

const FIELD_MAGIC: &[u8; 4] = b"PFLD";
const TRAJ_MAGIC: &[u8; 4] = b"PTRJ";
const BUNDLE_MAGIC: &str = "poreflow-control v1";
const MANIFEST_MAGIC: &str = "poreflow-domain v1";

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Write the domain manifest: text header plus full-precision center list.
pub fn write_domain_manifest(path: &Path, domain: &PerforatedDomain) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{MANIFEST_MAGIC}")?;
    let spec = &domain.spec;
    match spec.mode {
        crate::geometry::Mode::Partial { l } => writeln!(w, "mode partial {l:e}")?,
        crate::geometry::Mode::Full => writeln!(w, "mode full")?,
    }
    writeln!(w, "n {}", spec.n)?;
    writeln!(w, "alpha {:e}", spec.alpha)?;
    match spec.particle {
        crate::geometry::ParticleShape::Ball { radius } => {
            writeln!(w, "particle ball {radius:e}")?
        }
        crate::geometry::ParticleShape::Ellipsoid { semi_axes } => writeln!(
            w,
            "particle ellipsoid {:e} {:e} {:e}",
            semi_axes[0], semi_axes[1], semi_axes[2]
        )?,
    }
    writeln!(w, "seed {}", spec.rng_seed)?;
    writeln!(w, "centers {}", domain.centers.len())?;
    for c in &domain.centers {
        writeln!(w, "{:e} {:e} {:e}", c[0], c[1], c[2])?;
    }
    Ok(())
}

/// Read a domain manifest back into a spec (centers are re-derived and
/// checked against the stored list).
pub fn read_domain_manifest(path: &Path) -> Result<PerforatedDomain> {
    let f = std::fs::File::open(path)?;
    let mut lines = BufReader::new(f).lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| bad(path, "truncated manifest"))
    };
    if next()? != MANIFEST_MAGIC {
        return Err(bad(path, "bad magic"));
    }
    let mode_line = next()?;
    let mode = {
        let mut it = mode_line.split_whitespace();
        if it.next() != Some("mode") {
            return Err(bad(path, "expected mode"));
        }
        match it.next() {
            Some("partial") => crate::geometry::Mode::Partial {
                l: it
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(path, "bad L"))?,
            },
            Some("full") => crate::geometry::Mode::Full,
            _ => return Err(bad(path, "bad mode")),
        }
    };
    let parse_kv = |line: String, key: &str| -> Result<String> {
        let mut it = line.split_whitespace();
        if it.next() != Some(key) {
            return Err(bad(path, format!("expected {key}")));
        }
        it.next()
            .map(String::from)
            .ok_or_else(|| bad(path, format!("missing {key} value")))
    };
    let n: usize = parse_kv(next()?, "n")?.parse().map_err(|_| bad(path, "bad n"))?;
    let alpha: f64 = parse_kv(next()?, "alpha")?
        .parse()
        .map_err(|_| bad(path, "bad alpha"))?;
    let part_line = next()?;
    let particle = {
        let mut it = part_line.split_whitespace();
        if it.next() != Some("particle") {
            return Err(bad(path, "expected particle"));
        }
        match it.next() {
            Some("ball") => crate::geometry::ParticleShape::Ball {
                radius: it
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(path, "bad radius"))?,
            },
            Some("ellipsoid") => {
                let mut ax = [0.0; 3];
                for a in ax.iter_mut() {
                    *a = it
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad(path, "bad semi-axis"))?;
                }
                crate::geometry::ParticleShape::Ellipsoid { semi_axes: ax }
            }
            _ => return Err(bad(path, "bad particle")),
        }
    };
    let rng_seed: u64 = parse_kv(next()?, "seed")?
        .parse()
        .map_err(|_| bad(path, "bad seed"))?;
    let count: usize = parse_kv(next()?, "centers")?
        .parse()
        .map_err(|_| bad(path, "bad center count"))?;
    let spec = DomainSpec {
        mode,
        n,
        alpha,
        particle,
        rng_seed,
    };
    let domain = crate::geometry::build_perforated_domain(&spec)?;
    if domain.centers.len() != count {
        return Err(bad(path, "center count mismatch"));
    }
    for want in &domain.centers {
        let line = next()?;
        let mut it = line.split_whitespace();
        for wv in want {
            let got: f64 = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| bad(path, "bad center"))?;
            if (got - wv).abs() > 1e-12 {
                return Err(bad(path, "center list inconsistent with spec"));
            }
        }
    }
    Ok(domain)
}

fn write_f64s<W: Write>(w: &mut W, vals: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Write one vector field snapshot: magic, version, n, components, time,
/// then data in component-major order, little-endian f64.
pub fn write_field_dump(path: &Path, field: &[Array3<f64>; 3], time: f64) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_field_into(&mut w, field, time)
}

fn write_field_into<W: Write>(w: &mut W, field: &[Array3<f64>; 3], time: f64) -> Result<()> {
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&1u32.to_le_bytes())?;
    let n = field[0].dim().0 as u32;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&3u32.to_le_bytes())?;
    w.write_all(&time.to_le_bytes())?;
    for comp in field {
        write_f64s(w, comp.iter().cloned())?;
    }
    Ok(())
}

fn read_field_from<R: Read>(r: &mut R, path: &Path) -> Result<([Array3<f64>; 3], f64)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(bad(path, "bad field magic"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != 1 {
        return Err(bad(path, "unsupported field version"));
    }
    r.read_exact(&mut u32buf)?;
    let n = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)?;
    let ncomp = u32::from_le_bytes(u32buf) as usize;
    if ncomp != 3 {
        return Err(bad(path, "expected 3 components"));
    }
    let mut tbuf = [0u8; 8];
    r.read_exact(&mut tbuf)?;
    let time = f64::from_le_bytes(tbuf);
    let mut comps = Vec::with_capacity(3);
    for _ in 0..3 {
        let vals = read_f64s(r, n * n * n)?;
        comps.push(
            Array3::from_shape_vec((n, n, n), vals).map_err(|_| bad(path, "bad field shape"))?,
        );
    }
    let arr: [Array3<f64>; 3] = comps.try_into().map_err(|_| bad(path, "bad components"))?;
    Ok((arr, time))
}

pub fn read_field_dump(path: &Path) -> Result<([Array3<f64>; 3], f64)> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    read_field_from(&mut r, path)
}

/// Write a whole trajectory: magic, version, snapshot count, then the
/// snapshots as field dumps.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(TRAJ_MAGIC)?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&(traj.times.len() as u32).to_le_bytes())?;
    for (t, v) in traj.times.iter().zip(traj.velocity.iter()) {
        write_field_into(&mut w, v, *t)?;
    }
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TRAJ_MAGIC {
        return Err(bad(path, "bad trajectory magic"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != 1 {
        return Err(bad(path, "unsupported trajectory version"));
    }
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut traj = Trajectory {
        times: Vec::with_capacity(count),
        velocity: Vec::with_capacity(count),
        pressure: Vec::new(),
        forcing: Vec::new(),
        n: 0,
    };
    for _ in 0..count {
        let (field, t) = read_field_from(&mut r, path)?;
        traj.n = field[0].dim().0;
        traj.times.push(t);
        traj.velocity.push(field);
    }
    Ok(traj)
}

/// Control bundle: versioned text header (operator, zone, bump, quadrature,
/// counts) terminated by a `---` line, then the binary payload (charges,
/// knot times, per-snapshot weights and residuals, little-endian f64).
pub fn write_control_bundle(path: &Path, triplet: &ControlTriplet) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let theta = &triplet.theta;
    writeln!(w, "{BUNDLE_MAGIC}")?;
    match &theta.greens.op.kind {
        OperatorKind::Laplace => writeln!(w, "operator laplace")?,
        OperatorKind::AHarmonic(m) => {
            writeln!(
                w,
                "operator a_harmonic {:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e}",
                m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]
            )?;
        }
    }
    writeln!(
        w,
        "zone {:e} {:e} {:e} {:e}",
        triplet.zone.center[0], triplet.zone.center[1], triplet.zone.center[2],
        triplet.zone.radius
    )?;
    writeln!(w, "bump_radius {:e}", theta.greens.bump.rho)?;
    writeln!(w, "table_n {}", theta.greens.table_n)?;
    writeln!(w, "overlap {:e}", theta.pou.overlap)?;
    writeln!(
        w,
        "quad {} {} {}",
        triplet.bog.quad.n_radial, triplet.bog.quad.n_theta, triplet.bog.quad.n_phi
    )?;
    writeln!(w, "charges {}", theta.charges.len())?;
    writeln!(w, "snapshots {}", theta.snapshots.len())?;
    writeln!(w, "---")?;
    write_f64s(&mut w, theta.charges.iter().flat_map(|c| c.iter().cloned()))?;
    write_f64s(&mut w, theta.snapshots.iter().map(|s| s.knot_time))?;
    for s in &theta.snapshots {
        write_f64s(&mut w, s.weights.iter().cloned())?;
        write_f64s(&mut w, [s.residual_max, s.data_max])?;
    }
    Ok(())
}

/// Rebuild a control triplet from a bundle (the Green table and Bogovskii
/// bases are deterministically recomputed).
pub fn read_control_bundle(path: &Path) -> Result<ControlTriplet> {
    let f = std::fs::File::open(path)?;
    let mut r = BufReader::new(f);
    let mut header = String::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(bad(path, "missing header terminator"));
        }
        if line.trim_end() == "---" {
            break;
        }
        header.push_str(&line);
    }
    let mut kind = None;
    let mut zone = None;
    let mut bump_radius = None;
    let mut table_n = None;
    let mut overlap = None;
    let mut quad = BogQuad::default();
    let mut n_charges = None;
    let mut n_snaps = None;
    for line in header.lines() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some(m) if m == BUNDLE_MAGIC.split_whitespace().next().unwrap() => {
                if line.trim() != BUNDLE_MAGIC {
                    return Err(bad(path, "unsupported bundle version"));
                }
            }
            Some("operator") => {
                kind = Some(match it.next() {
                    Some("laplace") => OperatorKind::Laplace,
                    Some("a_harmonic") => {
                        let vals: Vec<f64> =
                            it.by_ref().filter_map(|v| v.parse().ok()).collect();
                        if vals.len() != 9 {
                            return Err(bad(path, "bad operator matrix"));
                        }
                        OperatorKind::AHarmonic([
                            [vals[0], vals[1], vals[2]],
                            [vals[3], vals[4], vals[5]],
                            [vals[6], vals[7], vals[8]],
                        ])
                    }
                    _ => return Err(bad(path, "bad operator")),
                });
            }
            Some("zone") => {
                let vals: Vec<f64> = it.by_ref().filter_map(|v| v.parse().ok()).collect();
                if vals.len() != 4 {
                    return Err(bad(path, "bad zone"));
                }
                zone = Some(ControlZone {
                    center: [vals[0], vals[1], vals[2]],
                    radius: vals[3],
                });
            }
            Some("bump_radius") => bump_radius = it.next().and_then(|v| v.parse().ok()),
            Some("table_n") => table_n = it.next().and_then(|v| v.parse().ok()),
            Some("overlap") => overlap = it.next().and_then(|v| v.parse().ok()),
            Some("quad") => {
                let vals: Vec<usize> = it.by_ref().filter_map(|v| v.parse().ok()).collect();
                if vals.len() != 3 {
                    return Err(bad(path, "bad quadrature"));
                }
                quad = BogQuad {
                    n_radial: vals[0],
                    n_theta: vals[1],
                    n_phi: vals[2],
                };
            }
            Some("charges") => n_charges = it.next().and_then(|v| v.parse().ok()),
            Some("snapshots") => n_snaps = it.next().and_then(|v| v.parse().ok()),
            _ => {}
        }
    }
    let kind = kind.ok_or_else(|| bad(path, "missing operator"))?;
    let zone = zone.ok_or_else(|| bad(path, "missing zone"))?;
    let bump_radius: f64 = bump_radius.ok_or_else(|| bad(path, "missing bump radius"))?;
    let table_n: usize = table_n.ok_or_else(|| bad(path, "missing table_n"))?;
    let overlap: f64 = overlap.ok_or_else(|| bad(path, "missing overlap"))?;
    let n_charges: usize = n_charges.ok_or_else(|| bad(path, "missing charges"))?;
    let n_snaps: usize = n_snaps.ok_or_else(|| bad(path, "missing snapshots"))?;
    let charge_vals = read_f64s(&mut r, 3 * n_charges)?;
    let charges: Vec<[f64; 3]> = charge_vals
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let knot_times = read_f64s(&mut r, n_snaps)?;
    let mut snapshots = Vec::with_capacity(n_snaps);
    for knot in knot_times {
        let weights = read_f64s(&mut r, n_charges)?;
        let meta = read_f64s(&mut r, 2)?;
        snapshots.push(PotentialSnapshot {
            knot_time: knot,
            weights,
            residual_max: meta[0],
            data_max: meta[1],
        });
    }
    let greens = GreensTable::build(kind.clone(), bump_radius, table_n)?;
    let theta = assemble_theta(greens, zone, charges, snapshots, overlap)?;
    match kind {
        OperatorKind::Laplace => euler_control(theta, quad),
        OperatorKind::AHarmonic(_) => darcy_control(theta, quad),
    }
}

/// Write the energy ledger as CSV.
pub fn write_ledger_csv(path: &Path, ledger: &EnergyLedger) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::IoFailure(e.to_string()))?;
    w.write_record([
        "t",
        "kinetic",
        "dissipation_cum",
        "forcing_work_cum",
        "penalization_cum",
        "inequality_residual",
    ])
    .map_err(|e| Error::IoFailure(e.to_string()))?;
    for i in 0..ledger.times.len() {
        w.write_record([
            ledger.times[i].to_string(),
            ledger.kinetic[i].to_string(),
            ledger.dissipation_cum[i].to_string(),
            ledger.forcing_work_cum[i].to_string(),
            ledger.penalization_cum[i].to_string(),
            ledger.inequality_residual[i].to_string(),
        ])
        .map_err(|e| Error::IoFailure(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Write a defect report as CSV.
pub fn write_defect_csv(path: &Path, report: &crate::flow::DefectReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::IoFailure(e.to_string()))?;
    w.write_record(["quantity", "value", "half_width"])
        .map_err(|e| Error::IoFailure(e.to_string()))?;
    let mut put = |k: &str, v: f64, hw: f64| {
        w.write_record([k.to_string(), v.to_string(), hw.to_string()])
            .map_err(|e| Error::IoFailure(e.to_string()))
    };
    put("defect", report.defect, report.defect_half_width)?;
    if let Some((v, hw)) = report.limit_defect {
        put("limit_defect", v, hw)?;
    }
    put("hole_volume", report.hole_volume, 0.0)?;
    if let Some((v, hw)) = report.discrepancy {
        put("discrepancy", v, hw)?;
    }
    put("samples", report.samples as f64, 0.0)?;
    w.flush()?;
    Ok(())
}

/// Dump particle positions (binary, LE f64 triplets with a count header).
pub fn write_particles(path: &Path, pts: &[crate::vec3::Vec3]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(b"PPTS")?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&(pts.len() as u64).to_le_bytes())?;
    write_f64s(&mut w, pts.iter().flat_map(|p| p.iter().cloned()))?;
    Ok(())
}
