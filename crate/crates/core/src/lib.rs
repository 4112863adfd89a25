//! Remote Lagrangian control of incompressible flow in perforated tori.
//!
//! The library builds periodic domains punctured by lattices of small solid
//! particles, synthesizes potential-flow controls whose forcing is confined to
//! a prescribed control ball, integrates the associated Euler/Darcy limit
//! dynamics and penalized Navier-Stokes runs, and measures how well the
//! controlled flow transports a marked patch of fluid onto a target patch.
//!
//! Main entry points:
//! * [`geometry`] - perforated domains, patches, control zones.
//! * [`control`] - isotopies, potential fitting, Euler/Darcy control triplets.
//! * [`homogenization`] - particle resistance matrices and cell correctors.
//! * [`solver`] - pseudo-spectral Navier-Stokes with Brinkman penalization.
//! * [`flow`] - Lagrangian flow maps and measure-defect diagnostics.
//! * [`experiment`] - exponent bookkeeping, sweeps, convergence reports.

pub mod bogovskii;
pub mod config;
pub mod control;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod geometry;
pub mod greens;
pub mod homogenization;
pub mod interp;
pub mod io;
pub mod isotopy;
pub mod plot;
pub mod potential;
pub mod solver;
pub mod spectral;
pub mod vec3;

pub use error::{Error, Result};
