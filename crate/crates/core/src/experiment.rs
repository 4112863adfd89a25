//! End-to-end experiment orchestration: exponent bookkeeping, eps-sweeps,
//! convergence-rate fits, hypothesis checking, and report emission.

use crate::control::{synthesize_control, ControlTriplet, SynthesisParams};
use crate::error::{Error, Result};
use crate::flow::{self, FrameMode, VelocityField};
use crate::geometry::{
    build_perforated_domain, ControlZone, DomainSpec, Mode, Patch, ParticleShape,
};
use crate::greens::OperatorKind;
use crate::homogenization::{resistance_matrix, ResistanceMethod};
use crate::isotopy::build_isotopy;
use crate::solver::{self, Frame, InitialData, SolverConfig};
use crate::spectral::{self, Fft3};
use std::path::{Path, PathBuf};

/// Euler-mode rate exponent `min(alpha + beta - 3, alpha - 3/2, beta)` and
/// its admissibility (`alpha > 3/2` and `3 - alpha < beta < alpha`, strict).
pub fn exponent_pe(alpha: f64, beta: f64) -> (f64, bool) {
    let p = (alpha + beta - 3.0).min(alpha - 1.5).min(beta);
    let admissible = alpha > 1.5 && beta > 3.0 - alpha && beta < alpha;
    (p, admissible)
}

/// Darcy-mode rate exponent
/// `min((3 - 2 beta)/3, (alpha - 1)/2, 3 - alpha, 6 - 2 alpha - 2 beta)` and
/// its admissibility (`1 < alpha < 3`, `0 < beta < min(3/2, 3 - alpha)`).
///
/// The third entry is `3 - alpha`, not the `(9 - 3 alpha)/2` variant found
/// in some earlier treatments of the same limit.
pub fn exponent_pd(alpha: f64, beta: f64) -> (f64, bool) {
    let p = ((3.0 - 2.0 * beta) / 3.0)
        .min((alpha - 1.0) / 2.0)
        .min(3.0 - alpha)
        .min(6.0 - 2.0 * alpha - 2.0 * beta);
    let admissible = alpha > 1.0 && alpha < 3.0 && beta > 0.0 && beta < (1.5f64).min(3.0 - alpha);
    (p, admissible)
}

/// Control horizon in the unit-viscosity frame: `eps^beta` (Euler) or
/// `eps^(alpha + 2 beta - 3)` (Darcy).
pub fn theorem_time(mode: FrameMode, eps: f64) -> f64 {
    mode.time_factor(eps)
}

/// Exponent bundle for one `(alpha, beta)`.
#[derive(Debug, Clone, Copy)]
pub struct Exponents {
    pub alpha: f64,
    pub beta: f64,
    pub p_e: f64,
    pub p_d: f64,
    pub euler_admissible: bool,
    pub darcy_admissible: bool,
}

impl Exponents {
    pub fn new(alpha: f64, beta: f64) -> Exponents {
        let (p_e, ea) = exponent_pe(alpha, beta);
        let (p_d, da) = exponent_pd(alpha, beta);
        Exponents {
            alpha,
            beta,
            p_e,
            p_d,
            euler_admissible: ea,
            darcy_admissible: da,
        }
    }
}

/// Snap a requested `eps` down to the nearest admissible `L/N`.
pub fn snap_eps(eps: f64, l: f64) -> f64 {
    let n = (l / eps).ceil().max(1.0);
    l / n
}

/// Least-squares line fit in log-log coordinates with a 95% CI on the slope.
#[derive(Debug, Clone, Copy)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci95: f64,
    pub points: usize,
}

fn t_quantile_975(df: usize) -> f64 {
    const TABLE: [f64; 10] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
    ];
    if df == 0 {
        f64::INFINITY
    } else if df <= 10 {
        TABLE[df - 1]
    } else if df <= 30 {
        2.11 - (df as f64 - 10.0) * 0.003
    } else {
        1.96
    }
}

/// Fit `log y = slope log x + intercept`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Option<RateFit> {
    let n = xs.len();
    if n < 2 || ys.iter().any(|y| *y <= 0.0) || xs.iter().any(|x| *x <= 0.0) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ci95 = if n > 2 {
        let ss_res: f64 = lx
            .iter()
            .zip(&ly)
            .map(|(x, y)| {
                let r = y - (slope * x + intercept);
                r * r
            })
            .sum();
        let se = (ss_res / (n as f64 - 2.0)).sqrt() / sxx.sqrt();
        t_quantile_975(n - 2) * se
    } else {
        f64::INFINITY
    };
    Some(RateFit {
        slope,
        intercept,
        ci95,
        points: n,
    })
}

/// Geometry and control description shared by the sweep rows.
#[derive(Debug, Clone)]
pub struct SweepSetup {
    pub mode: FrameMode,
    pub particle: ParticleShape,
    pub p0: Patch,
    pub p1: Patch,
    pub zone: ControlZone,
    pub waypoints: Vec<crate::vec3::Vec3>,
    pub synthesis: SynthesisParams,
}

/// Sweep run parameters.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub setup: SweepSetup,
    /// Requested eps values (snapped down to 1/N; full perforation).
    pub eps_list: Vec<f64>,
    pub grid_n: usize,
    pub kappa: f64,
    pub cfl: f64,
    pub dt_max: f64,
    /// Requested initial-data norm in the unit frame (0 = rest).
    pub initial_norm: f64,
    /// Clamp the initial norm to the theorem hypothesis `eps^(p - beta)`.
    pub theorem_check: bool,
    /// Monte Carlo samples for flow diagnostics (0 disables them).
    pub flow_samples: usize,
    pub seed: u64,
    /// Snapshot count over the scaled interval.
    pub outputs: usize,
}

/// One sweep row.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub cells: usize,
    pub grid_n: usize,
    pub field_error: f64,
    pub flow_error: f64,
    pub defect: f64,
    pub defect_half_width: f64,
    pub clearance: f64,
    pub energy_ok: bool,
    pub admissible: bool,
    pub hypothesis_ok: bool,
    pub u0_norm_unit: f64,
    pub u0_clamped: bool,
    pub forcing_c0_h0: f64,
    pub forcing_c0_h1: f64,
    pub hole_resolution_cells: f64,
    pub note: String,
}

/// Full sweep output.
#[derive(Debug)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub rate_fit: Option<RateFit>,
    pub exponent: f64,
    pub mode: FrameMode,
    /// Clearance curve (t, clearance) of the smallest-eps row.
    pub clearance_curve: Vec<(f64, f64)>,
}

/// L2 distance of a trajectory snapshot from the limit field at the same
/// time, weighted by the fluid fraction.
fn field_error_at(
    traj_vel: &[ndarray::Array3<f64>; 3],
    control: &ControlTriplet,
    t: f64,
    fft: &Fft3,
    weight: &ndarray::Array3<f64>,
) -> f64 {
    let limit = control.velocity_grid(t, fft, false);
    let mut s = 0.0;
    for a in 0..3 {
        let mut diff = traj_vel[a].clone();
        diff.zip_mut_with(&limit[a], |x, y| *x -= y);
        let v = spectral::l2_norm_weighted(&diff, weight);
        s += v * v;
    }
    s.sqrt()
}

/// Run the sweep: one synthesis (the limit control is eps-independent), one
/// penalized run per eps, field/flow/defect/clearance diagnostics per row.
/// `alpha` is the hole-size exponent of the swept domains.
pub fn run_sweep(cfg: &SweepConfig, alpha: f64) -> Result<SweepResult> {
    if cfg.eps_list.is_empty() {
        return Err(Error::EmptySweep("no eps values".into()));
    }
    let (beta, p_exp, admissible, kind, frame_of): (
        f64,
        f64,
        bool,
        OperatorKind,
        Box<dyn Fn(f64) -> Frame>,
    ) = match cfg.setup.mode {
        FrameMode::Euler { beta } => {
            let (p, adm) = exponent_pe(alpha, beta);
            (
                beta,
                p,
                adm,
                OperatorKind::Laplace,
                Box::new(move |eps| Frame::ScaledEuler { eps, beta }),
            )
        }
        FrameMode::Darcy { alpha: a2, beta } => {
            let (p, adm) = exponent_pd(a2, beta);
            let res = resistance_matrix(&cfg.setup.particle, ResistanceMethod::AnalyticBall)?;
            (
                beta,
                p,
                adm,
                OperatorKind::AHarmonic(res.as_rows()),
                Box::new(move |eps| Frame::ScaledDarcy { eps, alpha: a2, beta }),
            )
        }
    };
    // Synthesize the limit control once.
    let iso = build_isotopy(&cfg.setup.p0, &cfg.setup.p1, &cfg.setup.waypoints, &cfg.setup.zone)?;
    let control = synthesize_control(&iso, kind, &cfg.setup.synthesis)?;

    let mut rows = Vec::new();
    let mut clearance_curve = Vec::new();
    for (irow, &eps_req) in cfg.eps_list.iter().enumerate() {
        let eps = snap_eps(eps_req, 1.0);
        let n_cells = (1.0 / eps).round() as usize;
        let spec = DomainSpec {
            mode: Mode::Full,
            n: n_cells,
            alpha,
            particle: cfg.setup.particle,
            rng_seed: cfg.seed,
        };
        let domain = build_perforated_domain(&spec)?;
        let hole_r = domain.hole_scale * cfg.setup.particle.bounding_radius();
        let hole_cells = hole_r * cfg.grid_n as f64;
        let mut note = String::new();
        if hole_cells < 2.0 {
            note = format!("holes under-resolved ({hole_cells:.2} cells): drag-calibrated blobs");
        }
        // Initial data in the unit frame, clamped to the hypothesis.
        let hyp_bound = eps.powf(p_exp - beta);
        let mut u0_unit = cfg.initial_norm;
        let mut clamped = false;
        if cfg.theorem_check && u0_unit > hyp_bound {
            u0_unit = hyp_bound;
            clamped = true;
            note.push_str(&format!(
                " initial norm clamped to eps^(p-beta) = {hyp_bound:.3e};"
            ));
        }
        // Scaled-frame initial norm.
        let frame = frame_of(eps);
        let tfac = cfg.setup.mode.time_factor(eps);
        let u0_scaled = u0_unit * tfac;
        let row_seed = cfg.seed ^ eps.to_bits().rotate_left(17);
        let initial = if u0_scaled > 0.0 {
            InitialData::RandomSolenoidal {
                l2_norm: u0_scaled,
                seed: row_seed,
            }
        } else {
            InitialData::Zero
        };
        let scfg = SolverConfig {
            n: cfg.grid_n,
            kappa: cfg.kappa,
            cfl: cfg.cfl,
            dt_max: cfg.dt_max,
            dt_fixed: 0.0,
            initial,
            output_times: (0..=cfg.outputs)
                .map(|i| i as f64 / cfg.outputs as f64)
                .collect(),
        };
        let (traj, ledger) = solver::run_ns(&scfg, Some(&domain), Some(&control), frame)?;
        let fft = Fft3::new(cfg.grid_n);
        let mask = solver::build_hole_mask(
            &domain,
            cfg.grid_n,
            cfg.kappa,
            frame.viscosity() / frame.inertia(),
        );
        let weight = solver::fluid_weight(&mask);
        // Field error: pointwise-in-time at t=1 (Euler) or time-integrated
        // (Darcy).
        let field_error = match cfg.setup.mode {
            FrameMode::Euler { .. } => {
                let last = traj.velocity.last().unwrap();
                field_error_at(last, &control, 1.0, &fft, &weight)
            }
            FrameMode::Darcy { .. } => {
                // Trapezoid over the stored snapshots.
                let mut acc = 0.0;
                let errs: Vec<f64> = traj
                    .times
                    .iter()
                    .zip(traj.velocity.iter())
                    .map(|(t, v)| field_error_at(v, &control, *t, &fft, &weight))
                    .collect();
                for i in 1..errs.len() {
                    let dt = traj.times[i] - traj.times[i - 1];
                    acc += 0.5 * dt * (errs[i] * errs[i] + errs[i - 1] * errs[i - 1]);
                }
                acc.sqrt()
            }
        };
        // Forcing magnitude constants (unit frame): C0 = ||F|| eps^(2 beta)
        // equals the scaled-frame norm of f.
        let (c0_h0, c0_h1) = {
            let mut h0: f64 = 0.0;
            let mut h1: f64 = 0.0;
            for &t in &[0.25, 0.5, 0.75] {
                let f = control.forcing_grid(t, cfg.grid_n);
                let spec = [
                    fft.forward(&f[0]),
                    fft.forward(&f[1]),
                    fft.forward(&f[2]),
                ];
                h0 = h0.max(spectral::sobolev_norm(&spec, 0));
                h1 = h1.max(spectral::sobolev_norm(&spec, 1));
            }
            (h0, h1)
        };
        // Flow diagnostics.
        let mut flow_error = 0.0;
        let mut defect = 0.0;
        let mut defect_hw = 0.0;
        let mut clearance_min = f64::INFINITY;
        if cfg.flow_samples > 0 {
            let interp = flow::ControlInterp {
                triplet: &control,
                table_n: 96,
            };
            let ens = flow::ParticleEnsemble::from_patch_fluid(
                &cfg.setup.p0,
                &domain,
                cfg.flow_samples,
                row_seed,
            );
            let curve = flow::flow_discrepancy(&traj, &interp, &ens, 1.0, 2e-3, 0.05, 8);
            flow_error = *curve.l2.last().unwrap();
            let rep = flow::measure_defect(
                &traj,
                Some(&interp as &dyn VelocityField),
                &domain,
                &cfg.setup.p0,
                &cfg.setup.p1,
                1.0,
                cfg.flow_samples,
                row_seed ^ 0xabcdef,
                2e-3,
            );
            defect = rep.defect;
            defect_hw = rep.defect_half_width;
            let boundary: Vec<_> = cfg
                .setup
                .p0
                .boundary_fibonacci(256)
                .into_iter()
                .map(|(p, _)| p)
                .collect();
            clearance_min =
                flow::clearance(&traj, &boundary, &cfg.setup.zone, 1.0, 2e-3);
            if irow + 1 == cfg.eps_list.len() {
                // Clearance curve of the smallest eps: re-advect, sampling.
                let mut pts = boundary.clone();
                clearance_curve.push((
                    0.0,
                    pts.iter()
                        .map(|p| cfg.setup.zone.signed_distance(*p))
                        .fold(f64::INFINITY, f64::min),
                ));
                flow::advect_points_with(&traj, &mut pts, 0.0, 1.0, 1e-2, |t, ps| {
                    let c = ps
                        .iter()
                        .map(|p| cfg.setup.zone.signed_distance(*p))
                        .fold(f64::INFINITY, f64::min);
                    clearance_curve.push((t, c));
                });
            }
        }
        rows.push(SweepRow {
            eps,
            cells: n_cells,
            grid_n: cfg.grid_n,
            field_error,
            flow_error,
            defect,
            defect_half_width: defect_hw,
            clearance: clearance_min,
            energy_ok: ledger.inequality_ok(1e-6),
            admissible,
            hypothesis_ok: !cfg.theorem_check || u0_unit <= hyp_bound * (1.0 + 1e-12),
            u0_norm_unit: u0_unit,
            u0_clamped: clamped,
            forcing_c0_h0: c0_h0,
            forcing_c0_h1: c0_h1,
            hole_resolution_cells: hole_cells,
            note,
        });
    }
    // Sort rows by descending eps and fit the rate.
    rows.sort_by(|a, b| b.eps.partial_cmp(&a.eps).unwrap());
    let xs: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.field_error).collect();
    let rate_fit = fit_loglog(&xs, &ys);
    Ok(SweepResult {
        rows,
        rate_fit,
        exponent: p_exp,
        mode: cfg.setup.mode,
        clearance_curve,
    })
}

/// Emit the sweep artifacts: CSV table, log-log error plot with the fitted
/// line and the reference slope, defect plot, clearance curve, and a text
/// summary of the hypothesis flags.
pub fn report(sweep: &SweepResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if sweep.rows.is_empty() {
        return Err(Error::EmptySweep("report needs at least one row".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    // CSV.
    let csv_path = out_dir.join("sweep.csv");
    {
        let mut w = csv::Writer::from_path(&csv_path)
            .map_err(|e| Error::IoFailure(e.to_string()))?;
        for row in &sweep.rows {
            w.serialize(row).map_err(|e| Error::IoFailure(e.to_string()))?;
        }
        w.flush()?;
    }
    written.push(csv_path);
    // Plots.
    let xs: Vec<f64> = sweep.rows.iter().map(|r| r.eps).collect();
    let ys: Vec<f64> = sweep.rows.iter().map(|r| r.field_error).collect();
    if xs.len() >= 2 && ys.iter().all(|v| *v > 0.0) {
        let mut plot = crate::plot::SvgPlot::new(
            "field error vs eps",
            "eps",
            "L2 error",
            true,
            true,
        );
        plot.add_series("measured", &xs, &ys, "#1f6fb2", true);
        if let Some(fit) = &sweep.rate_fit {
            let fys: Vec<f64> = xs
                .iter()
                .map(|x| (fit.intercept + fit.slope * x.ln()).exp())
                .collect();
            plot.add_series(
                &format!("fit slope {:.2} +- {:.2}", fit.slope, fit.ci95),
                &xs,
                &fys,
                "#b23a1f",
                false,
            );
        }
        // Reference slope through the first point.
        let refys: Vec<f64> = xs
            .iter()
            .map(|x| ys[0] * (x / xs[0]).powf(sweep.exponent))
            .collect();
        plot.add_series(
            &format!("reference slope {:.2}", sweep.exponent),
            &xs,
            &refys,
            "#5a5a5a",
            false,
        );
        let p = out_dir.join("error_vs_eps.svg");
        plot.write(&p)?;
        written.push(p);
    }
    let ds: Vec<f64> = sweep.rows.iter().map(|r| r.defect.max(1e-16)).collect();
    if xs.len() >= 2 {
        let mut plot =
            crate::plot::SvgPlot::new("defect vs eps", "eps", "defect", true, true);
        plot.add_series("defect", &xs, &ds, "#1f8f4d", true);
        let p = out_dir.join("defect_vs_eps.svg");
        plot.write(&p)?;
        written.push(p);
    }
    if sweep.clearance_curve.len() >= 2 {
        let ts: Vec<f64> = sweep.clearance_curve.iter().map(|c| c.0).collect();
        let cs: Vec<f64> = sweep.clearance_curve.iter().map(|c| c.1).collect();
        let mut plot =
            crate::plot::SvgPlot::new("clearance vs t", "t", "clearance", false, false);
        plot.add_series("clearance", &ts, &cs, "#7a3ab2", false);
        let p = out_dir.join("clearance_vs_t.svg");
        plot.write(&p)?;
        written.push(p);
    }
    // Text summary.
    let mut summary = String::new();
    summary.push_str(&format!(
        "sweep mode {:?}, reference exponent {:.4}\n",
        sweep.mode, sweep.exponent
    ));
    match &sweep.rate_fit {
        Some(f) if f.points >= 3 => summary.push_str(&format!(
            "fitted rate {:.4} +- {:.4} (95% CI, {} points)\n",
            f.slope, f.ci95, f.points
        )),
        Some(f) => summary.push_str(&format!(
            "fitted rate {:.4} (insufficient points for a CI: {})\n",
            f.slope, f.points
        )),
        None => summary.push_str("fit skipped (insufficient points)\n"),
    }
    for r in &sweep.rows {
        summary.push_str(&format!(
            "eps {:.6}: field error {:.6e}, defect {:.3e} (hw {:.1e}), clearance {:.4}, \
             energy {}, admissible {}, initial-data hypothesis {}{}{}\n",
            r.eps,
            r.field_error,
            r.defect,
            r.defect_half_width,
            r.clearance,
            if r.energy_ok { "ok" } else { "VIOLATED" },
            r.admissible,
            if r.hypothesis_ok { "ok" } else { "VIOLATED" },
            if r.u0_clamped { " (clamped)" } else { "" },
            if r.note.is_empty() {
                String::new()
            } else {
                format!(" [{}]", r.note)
            }
        ));
    }
    let sum_path = out_dir.join("summary.txt");
    std::fs::write(&sum_path, summary)?;
    written.push(sum_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_values_from_formulas() {
        let (p, adm) = exponent_pe(2.0, 1.2);
        assert!((p - 0.2).abs() < 1e-15 && adm);
        let (p, adm) = exponent_pe(2.0, 1.0);
        assert!((p - 0.0).abs() < 1e-15 && !adm, "boundary is inadmissible");
        let (p, _) = exponent_pe(3.0, 1.5);
        assert!((p - 1.5).abs() < 1e-15);
        let (p, adm) = exponent_pd(2.0, 0.5);
        assert!((p - 0.5).abs() < 1e-15 && adm);
        let (p, _) = exponent_pd(1.5, 0.5);
        assert!((p - 0.25).abs() < 1e-15);
        let (p, _) = exponent_pd(2.5, 0.4);
        assert!((p - 0.2).abs() < 1e-12);
    }

    #[test]
    fn exponent_fuzz_matches_direct_formula() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        for _ in 0..1000 {
            let a = rng.gen_range(0.5..4.0);
            let b = rng.gen_range(-0.5..3.5);
            let (pe, ea) = exponent_pe(a, b);
            let direct_pe = [a + b - 3.0, a - 1.5, b]
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            assert_eq!(pe, direct_pe);
            assert_eq!(ea, a > 1.5 && 3.0 - a < b && b < a);
            let (pd, da) = exponent_pd(a, b);
            let direct_pd = [
                (3.0 - 2.0 * b) / 3.0,
                (a - 1.0) / 2.0,
                3.0 - a,
                6.0 - 2.0 * a - 2.0 * b,
            ]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
            assert_eq!(pd, direct_pd);
            assert_eq!(da, 1.0 < a && a < 3.0 && 0.0 < b && b < (1.5f64).min(3.0 - a));
        }
    }

    #[test]
    fn theorem_time_examples() {
        let t = theorem_time(FrameMode::Euler { beta: 1.0 }, 0.25);
        assert!((t - 0.25).abs() < 1e-15);
        let t = theorem_time(FrameMode::Darcy { alpha: 2.0, beta: 0.5 }, 0.25);
        assert!((t - 1.0).abs() < 1e-15);
        let t = theorem_time(FrameMode::Darcy { alpha: 2.5, beta: 0.4 }, 0.5);
        assert!((t - 0.5f64.powf(0.3)).abs() < 1e-12);
        assert!((t - 0.8122523963562356).abs() < 1e-12);
    }

    #[test]
    fn snap_eps_to_lattice() {
        assert!((snap_eps(0.3, 1.0) - 0.25).abs() < 1e-15);
        assert!((snap_eps(0.5, 1.0) - 0.5).abs() < 1e-15);
        assert!((snap_eps(0.26, 0.5) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn loglog_fit_recovers_slope() {
        let xs = [0.5f64, 0.25, 0.125, 0.0625];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(0.7)).collect();
        let fit = fit_loglog(&xs, &ys).unwrap();
        assert!((fit.slope - 0.7).abs() < 1e-12);
        assert!(fit.ci95 < 1e-9, "noise-free data gives a tight CI");
        // Two points: slope defined, CI infinite.
        let f2 = fit_loglog(&xs[..2], &ys[..2]).unwrap();
        assert!((f2.slope - 0.7).abs() < 1e-12);
        assert!(f2.ci95.is_infinite());
    }
}
