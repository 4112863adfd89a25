//! Experiment configuration: a structured TOML schema shared by the CLI
//! subcommands. See the repository README for the documented schema.

use crate::bogovskii::BogQuad;
use crate::error::{Error, Result};
use crate::experiment::{snap_eps, SweepConfig, SweepSetup};
use crate::flow::FrameMode;
use crate::geometry::{
    build_perforated_domain, check_equal_volume, ControlZone, DomainSpec, Mode, Patch,
    ParticleShape, PerforatedDomain,
};
use crate::potential::FitConfig;
use crate::vec3::Vec3;
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Clone, Deserialize)]
pub struct ExperimentConfig {
    pub domain: DomainSection,
    pub patches: Option<PatchesSection>,
    pub zone: Option<ZoneSection>,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub solver: SolverSection,
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub flowmap: FlowmapSection,
}

#[derive(Debug, Clone, Deserialize)]
pub struct DomainSection {
    /// "partial" or "full".
    pub mode: String,
    /// Side of K (partial mode only).
    pub l: Option<f64>,
    pub n: usize,
    pub alpha: f64,
    #[serde(default = "default_particle")]
    pub particle: ParticleSection,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ParticleSection {
    pub shape: String,
    pub radius: Option<f64>,
    pub semi_axes: Option<[f64; 3]>,
}

fn default_particle() -> ParticleSection {
    ParticleSection {
        shape: "ball".into(),
        radius: Some(0.125),
        semi_axes: None,
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct PatchesSection {
    pub p0: PatchSection,
    pub p1: PatchSection,
    #[serde(default)]
    pub waypoints: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PatchSection {
    pub shape: String,
    pub center: [f64; 3],
    pub radius: Option<f64>,
    pub radii: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ZoneSection {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ControlSection {
    /// "euler" or "darcy".
    #[serde(default = "default_operator")]
    pub operator: String,
    #[serde(default = "default_charges")]
    pub charges: usize,
    #[serde(default = "default_collocation")]
    pub collocation: usize,
    /// 0 = adaptive doubling.
    #[serde(default = "default_knots")]
    pub knots: usize,
    #[serde(default = "default_overlap")]
    pub overlap: f64,
    #[serde(default = "default_fit_tol")]
    pub fit_tol_rel: f64,
    #[serde(default = "default_tikhonov")]
    pub tikhonov: f64,
    /// 0 = automatic from the zone radius.
    #[serde(default)]
    pub bump_radius: f64,
    #[serde(default = "default_table_n")]
    pub table_n: usize,
    #[serde(default = "default_tube_margin")]
    pub tube_margin: f64,
    /// Darcy matrix: omitted = resistance matrix of the particle.
    pub darcy_matrix: Option<[[f64; 3]; 3]>,
    #[serde(default = "default_quad")]
    pub quadrature: [usize; 3],
}

fn default_operator() -> String {
    "euler".into()
}
fn default_charges() -> usize {
    96
}
fn default_collocation() -> usize {
    384
}
fn default_knots() -> usize {
    65
}
fn default_overlap() -> f64 {
    1.0
}
fn default_fit_tol() -> f64 {
    1e-3
}
fn default_tikhonov() -> f64 {
    1e-8
}
fn default_table_n() -> usize {
    128
}
fn default_tube_margin() -> f64 {
    0.05
}
fn default_quad() -> [usize; 3] {
    [16, 12, 24]
}

impl Default for ControlSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct SolverSection {
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_outputs")]
    pub outputs: usize,
    /// Requested initial-data L2 norm in the unit frame.
    #[serde(default)]
    pub initial_norm: f64,
    #[serde(default = "default_true")]
    pub theorem_check: bool,
}

fn default_grid() -> usize {
    64
}
fn default_kappa() -> f64 {
    8e-3
}
fn default_cfl() -> f64 {
    0.3
}
fn default_dt_max() -> f64 {
    5e-3
}
fn default_beta() -> f64 {
    1.5
}
fn default_outputs() -> usize {
    20
}
fn default_true() -> bool {
    true
}

impl Default for SolverSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct SweepSection {
    pub eps: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    20000
}

#[derive(Debug, Clone, Deserialize)]
pub struct FlowmapSection {
    #[serde(default = "default_fm_samples")]
    pub samples: usize,
    #[serde(default = "default_fm_dt")]
    pub dt: f64,
    #[serde(default = "default_fm_eta")]
    pub eta: f64,
}

fn default_fm_samples() -> usize {
    100_000
}
fn default_fm_dt() -> f64 {
    2e-3
}
fn default_fm_eta() -> f64 {
    0.05
}

impl Default for FlowmapSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::MalformedFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

impl ExperimentConfig {
    pub fn domain_spec(&self) -> Result<DomainSpec> {
        let d = &self.domain;
        let mode = match d.mode.as_str() {
            "partial" => Mode::Partial {
                l: d.l
                    .ok_or_else(|| Error::InvalidSpec("partial mode requires l".into()))?,
            },
            "full" => Mode::Full,
            other => {
                return Err(Error::InvalidSpec(format!(
                    "unknown domain mode '{other}' (partial|full)"
                )))
            }
        };
        Ok(DomainSpec {
            mode,
            n: d.n,
            alpha: d.alpha,
            particle: parse_particle(&d.particle)?,
            rng_seed: d.seed,
        })
    }

    pub fn build_domain(&self) -> Result<PerforatedDomain> {
        build_perforated_domain(&self.domain_spec()?)
    }

    pub fn patches(&self) -> Result<(Patch, Patch, Vec<Vec3>)> {
        let p = self
            .patches
            .as_ref()
            .ok_or_else(|| Error::InvalidSpec("missing [patches] section".into()))?;
        let p0 = parse_patch(&p.p0)?;
        let p1 = parse_patch(&p.p1)?;
        check_equal_volume(&p0, &p1)?;
        Ok((p0, p1, p.waypoints.to_vec()))
    }

    /// Control zone, validated against the domain and the patches.
    pub fn control_zone(&self, domain: &PerforatedDomain) -> Result<ControlZone> {
        let z = self
            .zone
            .as_ref()
            .ok_or_else(|| Error::InvalidSpec("missing [zone] section".into()))?;
        let (p0, p1, _) = self.patches()?;
        ControlZone::new(z.center, z.radius, domain, &p0, &p1)
    }

    pub fn synthesis_params(&self) -> crate::control::SynthesisParams {
        let c = &self.control;
        crate::control::SynthesisParams {
            fit: FitConfig {
                charges: c.charges,
                collocation: c.collocation,
                tikhonov: c.tikhonov,
                residual_tol_rel: c.fit_tol_rel,
                ..FitConfig::default()
            },
            knots: c.knots,
            overlap: c.overlap,
            bump_radius: c.bump_radius,
            table_n: c.table_n,
            quad: BogQuad {
                n_radial: c.quadrature[0],
                n_theta: c.quadrature[1],
                n_phi: c.quadrature[2],
            },
        }
    }

    pub fn frame_mode(&self) -> Result<FrameMode> {
        match self.control.operator.as_str() {
            "euler" => Ok(FrameMode::Euler {
                beta: self.solver.beta,
            }),
            "darcy" => Ok(FrameMode::Darcy {
                alpha: self.domain.alpha,
                beta: self.solver.beta,
            }),
            other => Err(Error::InvalidSpec(format!(
                "unknown operator '{other}' (euler|darcy)"
            ))),
        }
    }

    /// Assemble the sweep configuration (full-perforation sweeps).
    pub fn sweep_config(&self) -> Result<(SweepConfig, f64)> {
        let s = self
            .sweep
            .as_ref()
            .ok_or_else(|| Error::InvalidSpec("missing [sweep] section".into()))?;
        let (p0, p1, waypoints) = self.patches()?;
        let zone = {
            // Validate against the coarsest sweep domain.
            let eps0 = snap_eps(
                s.eps
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max),
                1.0,
            );
            let spec = DomainSpec {
                mode: Mode::Full,
                n: (1.0 / eps0).round() as usize,
                alpha: self.domain.alpha,
                particle: parse_particle(&self.domain.particle)?,
                rng_seed: self.domain.seed,
            };
            let dom = build_perforated_domain(&spec)?;
            self.control_zone(&dom)?
        };
        let setup = SweepSetup {
            mode: self.frame_mode()?,
            particle: parse_particle(&self.domain.particle)?,
            p0,
            p1,
            zone,
            waypoints,
            synthesis: self.synthesis_params(),
        };
        Ok((
            SweepConfig {
                setup,
                eps_list: s.eps.iter().map(|e| snap_eps(*e, 1.0)).collect(),
                grid_n: self.solver.grid,
                kappa: self.solver.kappa,
                cfl: self.solver.cfl,
                dt_max: self.solver.dt_max,
                initial_norm: self.solver.initial_norm,
                theorem_check: self.solver.theorem_check,
                flow_samples: s.samples,
                seed: self.domain.seed,
                outputs: self.solver.outputs,
            },
            self.domain.alpha,
        ))
    }
}

fn parse_particle(p: &ParticleSection) -> Result<ParticleShape> {
    match p.shape.as_str() {
        "ball" => Ok(ParticleShape::Ball {
            radius: p
                .radius
                .ok_or_else(|| Error::InvalidSpec("ball particle needs radius".into()))?,
        }),
        "ellipsoid" => Ok(ParticleShape::Ellipsoid {
            semi_axes: p
                .semi_axes
                .ok_or_else(|| Error::InvalidSpec("ellipsoid particle needs semi_axes".into()))?,
        }),
        other => Err(Error::InvalidSpec(format!(
            "unknown particle shape '{other}'"
        ))),
    }
}

fn parse_patch(p: &PatchSection) -> Result<Patch> {
    match p.shape.as_str() {
        "ball" => Ok(Patch::Ball {
            center: p.center,
            radius: p
                .radius
                .ok_or_else(|| Error::InvalidSpec("ball patch needs radius".into()))?,
        }),
        "ellipsoid" => Ok(Patch::Ellipsoid {
            center: p.center,
            radii: p
                .radii
                .ok_or_else(|| Error::InvalidSpec("ellipsoid patch needs radii".into()))?,
        }),
        other => Err(Error::InvalidSpec(format!("unknown patch shape '{other}'"))),
    }
}
