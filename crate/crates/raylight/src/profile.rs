//! Smooth compactly supported bumps and the boundary profiles built from them.

use crate::geometry::{wrap_angle, Domain, Point};
use std::f64::consts::PI;
use std::sync::OnceLock;

/// `exp(1 - 1/(1-u²))` on `|u| < 1`, zero outside; equals 1 at the origin.
pub fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

/// `∫ bump(u) du` over the real line.
pub fn bump_mass() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| {
        let n = 200_000;
        let h = 2.0 / n as f64;
        (0..n).map(|i| bump(-1.0 + (i as f64 + 0.5) * h)).sum::<f64>() * h
    })
}

/// Pulse `χ` with `χ(0) = 1`, unit mass and support inside `|u| ≤ 1`.
pub fn unit_pulse(u: f64) -> f64 {
    let beta = 1.0 / bump_mass();
    bump(u / beta)
}

/// Scaled pulse `χ((t - t₀)/ζ)/ζ`.
pub fn scaled_pulse(t: f64, t0: f64, zeta: f64) -> f64 {
    unit_pulse((t - t0) / zeta) / zeta
}

/// Signed angular difference in `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    if d > PI {
        d - 2.0 * PI
    } else {
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeProfile {
    Constant(f64),
    /// `bump((t - center)/half_width)`
    Bump { center: f64, half_width: f64 },
    /// `exp(-(t - center)²/2w²)`
    Gaussian { center: f64, width: f64 },
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::Constant(c) => c,
            TimeProfile::Bump { center, half_width } => bump((t - center) / half_width),
            TimeProfile::Gaussian { center, width } => (-(t - center).powi(2) / (2.0 * width * width)).exp(),
        }
    }
}

/// Profile on the incoming boundary in the chart (boundary angle φ, incidence
/// angle α measured from the inward normal).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundaryProfile {
    Uniform,
    Bump { phi0: f64, phi_half: f64, alpha0: f64, alpha_half: f64 },
    Gaussian { phi0: f64, phi_width: f64, alpha0: f64, alpha_width: f64 },
}

impl BoundaryProfile {
    /// Evaluates in chart coordinates.
    pub fn eval_chart(&self, phi: f64, alpha: f64) -> f64 {
        match *self {
            BoundaryProfile::Uniform => 1.0,
            BoundaryProfile::Bump { phi0, phi_half, alpha0, alpha_half } => {
                bump(angle_diff(phi, phi0) / phi_half) * bump(angle_diff(alpha, alpha0) / alpha_half)
            }
            BoundaryProfile::Gaussian { phi0, phi_width, alpha0, alpha_width } => {
                let a = angle_diff(phi, phi0) / phi_width;
                let b = angle_diff(alpha, alpha0) / alpha_width;
                (-0.5 * (a * a + b * b)).exp()
            }
        }
    }
}

/// Chart coordinates `(φ, α)` of a boundary point `y` with direction angle `θ`.
pub fn boundary_chart(dom: &Domain, y: Point, theta: f64) -> (f64, f64) {
    let (_, phi) = dom.scaled_polar(y);
    let alpha = angle_diff(theta, dom.inward_normal_angle(phi));
    (phi, alpha)
}

/// Tensor-product profile `φ(t, y, w) = time(t)·boundary(y, w)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Profile {
    pub time: TimeProfile,
    pub boundary: BoundaryProfile,
}

impl Profile {
    pub fn constant(c: f64) -> Self {
        Profile { time: TimeProfile::Constant(c), boundary: BoundaryProfile::Uniform }
    }

    pub fn eval(&self, dom: &Domain, t: f64, y: Point, theta: f64) -> f64 {
        let tv = self.time.eval(t);
        if tv == 0.0 {
            return 0.0;
        }
        match self.boundary {
            BoundaryProfile::Uniform => tv,
            b => {
                let (phi, alpha) = boundary_chart(dom, y, theta);
                tv * b.eval_chart(phi, alpha)
            }
        }
    }
}
