//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain specification: {0}")]
    InvalidSpec(String),

    #[error("hole of radius {hole_radius:.6e} exceeds the cell margin eps/8 = {margin:.6e}")]
    HoleTooLarge { hole_radius: f64, margin: f64 },

    #[error("every candidate patch path intersects the closed control zone (margin {margin:.3e}); supply waypoints")]
    PathBlocked { margin: f64 },

    #[error("potential fit residual {residual:.3e} exceeds tolerance {tol:.3e}")]
    FitResidualTooLarge { residual: f64, tol: f64 },

    #[error("mean of Neumann data {mean:.3e} violates solvability after projection")]
    SolvabilityViolation { mean: f64 },

    #[error("knot intervals fail to cover [0,1] near t = {t:.6}")]
    CoveringGap { t: f64 },

    #[error("source field mean {mean:.3e} is not zero relative to ||g||_1 = {norm1:.3e}")]
    MeanNotZero { mean: f64, norm1: f64 },

    #[error("field violates the required support: |value| = {value:.3e} at distance {dist:.3e} outside the zone")]
    SupportViolation { value: f64, dist: f64 },

    #[error("matrix is not symmetric positive definite: {0}")]
    NonSpdMatrix(String),

    #[error("iterative solver diverged: {0}")]
    SolverDiverged(String),

    #[error("drag changed by {change:.1}% between truncation boxes; box too small")]
    BoxTooSmall { change: f64 },

    #[error("intermediate lengthscale {eta:.3e} outside [eps^alpha, eps] = [{lo:.3e}, {hi:.3e}]")]
    LengthscaleOutOfRange { eta: f64, lo: f64, hi: f64 },

    #[error("time step {dt:.3e} violates the stability bound {bound:.3e} ({which})")]
    CflViolation { dt: f64, bound: f64, which: String },

    #[error("NaN detected in the solver state at t = {t:.6}")]
    NanDetected { t: f64 },

    #[error("trajectory snapshots do not cover [{t0:.6}, {t1:.6}]")]
    FieldGapped { t0: f64, t1: f64 },

    #[error("empty sweep: {0}")]
    EmptySweep(String),

    #[error("i/o failure: {0}")]
    IoFailure(String),

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::IoFailure(e.to_string())
    }
}
