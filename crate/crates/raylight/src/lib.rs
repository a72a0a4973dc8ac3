//! Forward and inverse solvers for the time-dependent nonlinear transport
//! equation
//!
//! ```text
//! ∂ₜf + Xf + σf + q fᵐ = K(f)
//! ```
//!
//! on strictly convex planar domains, optionally carrying a conformal metric
//! `e^{2c}δ`.
//!
//! The crate is organised bottom-up: [`geometry`] (exit times, geodesic flow),
//! [`grid`] (phase-space discretisation, quadrature, FFT), [`media`]
//! (coefficients and admissibility checks), [`transport`] (characteristic
//! solvers), [`go`] (geometric-optics probes), [`raytransforms`] (attenuated
//! X-ray and light-ray transforms with least-squares inversion) and
//! [`inversion`] (recovery of `q` and of sources from boundary data).

pub mod geometry;
pub mod go;
pub mod grid;
pub mod inversion;
pub mod io;
pub mod lsq;
pub mod media;
pub mod par;
pub mod profile;
pub mod raytransforms;
pub mod transport;

pub use num_complex::Complex64 as C64;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("trapping detected: geodesic from ({x:.4}, {y:.4}) at angle {theta:.4} did not exit within arclength {limit:.3}")]
    TrappingDetected { x: f64, y: f64, theta: f64, limit: f64 },
    #[error("point ({0:.6}, {1:.6}) lies outside the domain")]
    PointOutsideDomain(f64, f64),
    #[error("point ({0:.6}, {1:.6}) is not on the boundary")]
    PointNotOnBoundary(f64, f64),
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-uniform time grid")]
    NonUniformGrid,
    #[error("scattering kernel must vanish for this solver")]
    NonzeroScattering,
    #[error("no convergence after {iterations} iterations (last relative update {last_update:.3e})")]
    NoConvergence { iterations: usize, last_update: f64 },
    #[error("class M violation: {0}")]
    ClassMViolation(String),
    #[error("lambda must be nonzero")]
    ZeroLambda,
    #[error("monotonicity violated: q1 exceeds q2 by {excess:.3e} at node {node}")]
    MonotonicityViolated { excess: f64, node: usize },
    #[error("probe plan support violation: {0}")]
    PlanSupportViolation(String),
    #[error("memory budget exceeded: {needed} entries requested, cap {cap}")]
    MemoryBudgetExceeded { needed: usize, cap: usize },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
}

impl Error {
    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn at(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// True for failures of an iterative solver, as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::NoConvergence { .. } | Error::TrappingDetected { .. } => true,
            Error::Stage { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
