//! Strictly convex planar domains, optionally with a conformal metric
//! `g = e^{2c(x)} δ`, and their geodesic flow.
//!
//! A phase point is a position together with an angle `θ`; the unit vector it
//! describes is `v = e^{-c}(cos θ, sin θ)`. In the Euclidean case `c ≡ 0`.

use crate::{Error, Result};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

pub type Point = [f64; 2];

/// Tolerance for boundary refinement along traced geodesics.
pub const BOUNDARY_TOL: f64 = 1e-10;
/// Rays with `|⟨ν,v⟩|` below this are dropped from boundary quadratures.
pub const TANGENTIAL_CUTOFF: f64 = 1e-6;
/// Tracing aborts after this many diameters of arclength.
pub const TRAPPING_FACTOR: f64 = 100.0;

const INSIDE_TOL: f64 = 1e-9;
const ON_BOUNDARY_TOL: f64 = 1e-8;
const MAX_RK_STEP: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Disk { radius: f64 },
    Ellipse { a: f64, b: f64 },
}

impl Shape {
    fn semi_axes(&self) -> (f64, f64) {
        match *self {
            Shape::Disk { radius } => (radius, radius),
            Shape::Ellipse { a, b } => (a, b),
        }
    }
}

/// Conformal factor `c(x)` of the metric `e^{2c}δ`.
#[derive(Clone)]
pub enum Factor {
    /// `c(x) = k |x|²`
    Quadratic { k: f64 },
    /// `c(x) = A exp(-|x - x₀|² / 2w²)`
    Gaussian { amplitude: f64, center: Point, width: f64 },
    /// Arbitrary smooth factor; the gradient is taken by central differences.
    Custom(Arc<dyn Fn(Point) -> f64 + Send + Sync>),
}

impl fmt::Debug for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Factor::Quadratic { k } => write!(f, "Quadratic {{ k: {k} }}"),
            Factor::Gaussian { amplitude, center, width } => write!(
                f,
                "Gaussian {{ amplitude: {amplitude}, center: {center:?}, width: {width} }}"
            ),
            Factor::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Factor {
    pub fn value(&self, x: Point) -> f64 {
        match self {
            Factor::Quadratic { k } => k * (x[0] * x[0] + x[1] * x[1]),
            Factor::Gaussian { amplitude, center, width } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                amplitude * (-(dx * dx + dy * dy) / (2.0 * width * width)).exp()
            }
            Factor::Custom(c) => c(x),
        }
    }

    pub fn gradient(&self, x: Point) -> Point {
        match self {
            Factor::Quadratic { k } => [2.0 * k * x[0], 2.0 * k * x[1]],
            Factor::Gaussian { center, width, .. } => {
                let c = self.value(x);
                let w2 = width * width;
                [-c * (x[0] - center[0]) / w2, -c * (x[1] - center[1]) / w2]
            }
            Factor::Custom(c) => {
                let h = 1e-6;
                [
                    (c([x[0] + h, x[1]]) - c([x[0] - h, x[1]])) / (2.0 * h),
                    (c([x[0], x[1] + h]) - c([x[0], x[1] - h])) / (2.0 * h),
                ]
            }
        }
    }
}

/// Position and direction angle. The direction is `e^{-c}(cos θ, sin θ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePoint {
    pub x: Point,
    pub theta: f64,
}

impl PhasePoint {
    pub fn new(x: Point, theta: f64) -> Self {
        PhasePoint { x, theta: wrap_angle(theta) }
    }

    pub fn reversed(&self) -> Self {
        PhasePoint::new(self.x, self.theta + PI)
    }

    pub fn direction(&self) -> Point {
        [self.theta.cos(), self.theta.sin()]
    }
}

/// Maps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t >= 2.0 * PI {
        0.0
    } else {
        t
    }
}

/// Samples of a geodesic from its launch point to the forward exit.
#[derive(Clone, Debug)]
pub struct RayPath {
    /// `(s, ρ(s))`, starting at `s = 0` and ending on the boundary.
    pub nodes: Vec<(f64, PhasePoint)>,
    pub tau_fwd: f64,
    pub tau_bwd: f64,
}

/// A geodesic sampled at uniform arclength steps `ds`, either backwards
/// (`ρ(-l·ds)`) or forwards (`ρ(l·ds)`), together with its exit point.
#[derive(Clone, Debug)]
pub struct Characteristic {
    pub ds: f64,
    /// Sample `l` sits at arclength `l·ds`; `points[0]` is the launch point.
    pub points: Vec<PhasePoint>,
    /// Boundary point where the curve leaves the domain, direction of travel
    /// expressed in the orientation of the launch point.
    pub exit: PhasePoint,
    /// Arclength to the exit (τ₋ for backward, τ for forward curves).
    pub length: f64,
}

#[derive(Clone, Debug)]
pub struct Domain {
    pub shape: Shape,
    pub factor: Option<Factor>,
    pub diameter: f64,
}

impl Domain {
    pub fn disk(radius: f64) -> Result<Domain> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParameters(format!("disk radius {radius} must be positive")));
        }
        Ok(Domain { shape: Shape::Disk { radius }, factor: None, diameter: 2.0 * radius })
    }

    pub fn ellipse(a: f64, b: f64) -> Result<Domain> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidParameters(format!("ellipse semi-axes ({a}, {b}) must be positive")));
        }
        Ok(Domain { shape: Shape::Ellipse { a, b }, factor: None, diameter: 2.0 * a.max(b) })
    }

    /// Builds a conformal domain and checks that it is strictly convex and
    /// non-trapping by tracing a fan of geodesics from the boundary.
    pub fn conformal(shape: Shape, factor: Factor) -> Result<Domain> {
        let base = match shape {
            Shape::Disk { radius } => Domain::disk(radius)?,
            Shape::Ellipse { a, b } => Domain::ellipse(a, b)?,
        };
        let mut dom = Domain { shape, factor: Some(factor), diameter: base.diameter };
        let n_b = 48;
        for ib in 0..n_b {
            let phi = 2.0 * PI * (ib as f64 + 0.5) / n_b as f64;
            let y = dom.boundary_point(phi);
            let c = dom.conformal_factor(y);
            let g = dom.factor_gradient(y);
            if !c.is_finite() || !g[0].is_finite() || !g[1].is_finite() {
                return Err(Error::InvalidParameters("conformal factor is not finite on the boundary".into()));
            }
            let nu = dom.outward_normal(y);
            let kappa = dom.euclidean_curvature(phi);
            if kappa + g[0] * nu[0] + g[1] * nu[1] <= 0.0 {
                return Err(Error::InvalidParameters(format!(
                    "boundary is not strictly convex for the metric at boundary angle {phi:.3}"
                )));
            }
        }
        let mut longest: f64 = 0.0;
        let n_a = 16;
        for ib in 0..n_b {
            let phi = 2.0 * PI * (ib as f64 + 0.5) / n_b as f64;
            let y = dom.boundary_point(phi);
            let n_in = dom.inward_normal_angle(phi);
            for ia in 0..n_a {
                let alpha = -0.5 * PI + PI * (ia as f64 + 0.5) / n_a as f64;
                let p = PhasePoint::new(y, n_in + alpha);
                let (tau, _) = dom.exit_times(p)?;
                longest = longest.max(tau);
            }
        }
        dom.diameter = longest.max(1e-12);
        Ok(dom)
    }

    pub fn is_euclidean(&self) -> bool {
        self.factor.is_none()
    }

    pub fn conformal_factor(&self, x: Point) -> f64 {
        self.factor.as_ref().map_or(0.0, |f| f.value(x))
    }

    pub fn factor_gradient(&self, x: Point) -> Point {
        self.factor.as_ref().map_or([0.0, 0.0], |f| f.gradient(x))
    }

    pub fn semi_axes(&self) -> (f64, f64) {
        self.shape.semi_axes()
    }

    /// Signed boundary function, negative inside.
    pub fn level(&self, x: Point) -> f64 {
        let (a, b) = self.semi_axes();
        (x[0] / a).powi(2) + (x[1] / b).powi(2) - 1.0
    }

    pub fn contains(&self, x: Point) -> bool {
        self.level(x) <= INSIDE_TOL
    }

    /// Scaled polar coordinates `(ρ, φ)` with `x = (aρ cos φ, bρ sin φ)`.
    pub fn scaled_polar(&self, x: Point) -> (f64, f64) {
        let (a, b) = self.semi_axes();
        let u = x[0] / a;
        let v = x[1] / b;
        ((u * u + v * v).sqrt(), wrap_angle(v.atan2(u)))
    }

    pub fn from_scaled_polar(&self, rho: f64, phi: f64) -> Point {
        let (a, b) = self.semi_axes();
        [a * rho * phi.cos(), b * rho * phi.sin()]
    }

    pub fn boundary_point(&self, phi: f64) -> Point {
        self.from_scaled_polar(1.0, phi)
    }

    /// Euclidean speed `|b'(φ)|` of the boundary parametrisation.
    pub fn boundary_speed(&self, phi: f64) -> f64 {
        let (a, b) = self.semi_axes();
        (a * a * phi.sin().powi(2) + b * b * phi.cos().powi(2)).sqrt()
    }

    /// Metric length element `e^{c}|b'(φ)|` along the boundary.
    pub fn boundary_length_element(&self, phi: f64) -> f64 {
        self.conformal_factor(self.boundary_point(phi)).exp() * self.boundary_speed(phi)
    }

    pub fn outward_normal(&self, x: Point) -> Point {
        let (a, b) = self.semi_axes();
        let n = [x[0] / (a * a), x[1] / (b * b)];
        let l = (n[0] * n[0] + n[1] * n[1]).sqrt();
        if l == 0.0 {
            [1.0, 0.0]
        } else {
            [n[0] / l, n[1] / l]
        }
    }

    pub fn inward_normal_angle(&self, phi: f64) -> f64 {
        let n = self.outward_normal(self.boundary_point(phi));
        wrap_angle((-n[1]).atan2(-n[0]))
    }

    fn euclidean_curvature(&self, phi: f64) -> f64 {
        let (a, b) = self.semi_axes();
        a * b / self.boundary_speed(phi).powi(3)
    }

    fn check_inside(&self, x: Point) -> Result<()> {
        if !(x[0].is_finite() && x[1].is_finite()) || !self.contains(x) {
            return Err(Error::PointOutsideDomain(x[0], x[1]));
        }
        Ok(())
    }

    /// Forward and backward exit times `(τ, τ₋)`.
    pub fn exit_times(&self, p: PhasePoint) -> Result<(f64, f64)> {
        self.check_inside(p.x)?;
        match &self.factor {
            None => Ok(self.euclidean_exit_times(p)),
            Some(_) => {
                let tau = self.trace_exit(p, self.default_step())?.1;
                let tau_m = self.trace_exit(p.reversed(), self.default_step())?.1;
                Ok((tau, tau_m))
            }
        }
    }

    fn default_step(&self) -> f64 {
        (self.diameter / 200.0).min(MAX_RK_STEP)
    }

    fn euclidean_exit_times(&self, p: PhasePoint) -> (f64, f64) {
        let (a, b) = self.semi_axes();
        let (c, s) = (p.theta.cos(), p.theta.sin());
        let qa = c * c / (a * a) + s * s / (b * b);
        let qb = p.x[0] * c / (a * a) + p.x[1] * s / (b * b);
        let qc = (p.x[0] / a).powi(2) + (p.x[1] / b).powi(2) - 1.0;
        let qc = qc.min(0.0);
        let d = (qb * qb - qa * qc).max(0.0).sqrt();
        // stable pairs: (−B+√D)(B+√D) = −AC
        let (tau, tau_m) = if qb > 0.0 {
            let big = qb + d;
            (-qc / big, big / qa)
        } else {
            let big = -qb + d;
            (big / qa, if big > 0.0 { -qc / big } else { 0.0 })
        };
        (tau.max(0.0), tau_m.max(0.0))
    }

    /// Right-hand side of the geodesic flow in isothermal coordinates.
    fn flow_rhs(&self, y: [f64; 3]) -> [f64; 3] {
        let x = [y[0], y[1]];
        let e = (-self.conformal_factor(x)).exp();
        let g = self.factor_gradient(x);
        let (c, s) = (y[2].cos(), y[2].sin());
        [e * c, e * s, e * (-g[0] * s + g[1] * c)]
    }

    fn rk4(&self, y: [f64; 3], h: f64) -> [f64; 3] {
        let add = |a: [f64; 3], k: [f64; 3], f: f64| [a[0] + f * k[0], a[1] + f * k[1], a[2] + f * k[2]];
        let k1 = self.flow_rhs(y);
        let k2 = self.flow_rhs(add(y, k1, 0.5 * h));
        let k3 = self.flow_rhs(add(y, k2, 0.5 * h));
        let k4 = self.flow_rhs(add(y, k3, h));
        [
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            y[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        ]
    }

    /// Advances by arclength `h` using substeps no longer than `MAX_RK_STEP`.
    fn rk4_span(&self, y: [f64; 3], h: f64) -> [f64; 3] {
        let n = (h.abs() / MAX_RK_STEP).ceil().max(1.0) as usize;
        let hs = h / n as f64;
        let mut z = y;
        for _ in 0..n {
            z = self.rk4(z, hs);
        }
        z
    }

    fn starts_outgoing(&self, p: PhasePoint) -> bool {
        if self.level(p.x) < -1e-12 {
            return false;
        }
        let n = self.outward_normal(p.x);
        n[0] * p.theta.cos() + n[1] * p.theta.sin() >= 0.0
    }

    /// Refines the exit inside one step of length `h` from state `y`.
    fn bisect_exit(&self, y: [f64; 3], h: f64, span: bool) -> (f64, [f64; 3]) {
        let step = |hh: f64| if span { self.rk4_span(y, hh) } else { self.rk4(y, hh) };
        let (mut lo, mut hi) = (0.0, h);
        let mut z = step(hi);
        while hi - lo > BOUNDARY_TOL {
            let mid = 0.5 * (lo + hi);
            let zm = step(mid);
            if self.level([zm[0], zm[1]]) > 0.0 {
                hi = mid;
                z = zm;
            } else {
                lo = mid;
            }
        }
        (hi, z)
    }

    /// Integrates forward until the boundary; returns the exit state and length.
    fn trace_exit(&self, p: PhasePoint, step: f64) -> Result<(PhasePoint, f64)> {
        let mut path = Vec::new();
        self.trace_collect(p, step, &mut path, false)
    }

    fn trace_collect(
        &self,
        p: PhasePoint,
        step: f64,
        out: &mut Vec<(f64, PhasePoint)>,
        record: bool,
    ) -> Result<(PhasePoint, f64)> {
        if record {
            out.push((0.0, p));
        }
        if self.starts_outgoing(p) {
            return Ok((p, 0.0));
        }
        let limit = TRAPPING_FACTOR * self.diameter;
        let mut y = [p.x[0], p.x[1], p.theta];
        let mut s = 0.0;
        loop {
            let z = self.rk4_span(y, step);
            if self.level([z[0], z[1]]) > 0.0 {
                let (h, ze) = self.bisect_exit(y, step, true);
                let exit = PhasePoint::new([ze[0], ze[1]], ze[2]);
                if record {
                    out.push((s + h, exit));
                }
                return Ok((exit, s + h));
            }
            s += step;
            y = z;
            if record {
                out.push((s, PhasePoint::new([y[0], y[1]], y[2])));
            }
            if s > limit {
                return Err(Error::TrappingDetected { x: p.x[0], y: p.x[1], theta: p.theta, limit });
            }
        }
    }

    /// Samples the geodesic from `p` to its forward exit at spacing `step`.
    pub fn trace_geodesic(&self, p: PhasePoint, step: f64) -> Result<RayPath> {
        if !(step > 0.0) {
            return Err(Error::InvalidParameters(format!("trace step {step} must be positive")));
        }
        self.check_inside(p.x)?;
        let (tau_fwd, tau_bwd) = self.exit_times(p)?;
        let mut nodes = Vec::new();
        match &self.factor {
            None => {
                let d = p.direction();
                let n = (tau_fwd / step).floor() as usize;
                for l in 0..=n {
                    let s = l as f64 * step;
                    if tau_fwd - s < BOUNDARY_TOL && l > 0 {
                        break;
                    }
                    nodes.push((s, PhasePoint { x: [p.x[0] + s * d[0], p.x[1] + s * d[1]], theta: p.theta }));
                }
                if tau_fwd > 0.0 {
                    nodes.push((tau_fwd, PhasePoint { x: [p.x[0] + tau_fwd * d[0], p.x[1] + tau_fwd * d[1]], theta: p.theta }));
                }
            }
            Some(_) => {
                self.trace_collect(p, step, &mut nodes, true)?;
            }
        }
        Ok(RayPath { nodes, tau_fwd, tau_bwd })
    }

    /// Point reached after signed arclength `s` along the geodesic through `p`.
    /// `s` must not exceed the exit time in that direction.
    pub fn flow(&self, p: PhasePoint, s: f64) -> PhasePoint {
        match &self.factor {
            None => {
                let d = p.direction();
                PhasePoint { x: [p.x[0] + s * d[0], p.x[1] + s * d[1]], theta: p.theta }
            }
            Some(_) => {
                if s >= 0.0 {
                    let z = self.rk4_span([p.x[0], p.x[1], p.theta], s);
                    PhasePoint::new([z[0], z[1]], z[2])
                } else {
                    let r = p.reversed();
                    let z = self.rk4_span([r.x[0], r.x[1], r.theta], -s);
                    PhasePoint::new([z[0], z[1]], z[2] + PI)
                }
            }
        }
    }

    /// Samples the geodesic through `p` at arclengths `l·ds`, backwards when
    /// `backward` is set (this is how characteristics of `∂ₜ + X` are followed
    /// into the past), forwards otherwise.
    pub fn characteristic(&self, p: PhasePoint, ds: f64, backward: bool) -> Result<Characteristic> {
        self.check_inside(p.x)?;
        let start = if backward { p.reversed() } else { p };
        let mut points = Vec::new();
        let flip = |q: PhasePoint| if backward { q.reversed() } else { q };
        match &self.factor {
            None => {
                let (tau, tau_m) = self.euclidean_exit_times(p);
                let length = if backward { tau_m } else { tau };
                let d = start.direction();
                let n = (length / ds + 1e-9).floor() as usize;
                for l in 0..=n {
                    let s = l as f64 * ds;
                    points.push(PhasePoint { x: [p.x[0] + s * d[0], p.x[1] + s * d[1]], theta: p.theta });
                }
                let exit = PhasePoint { x: [p.x[0] + length * d[0], p.x[1] + length * d[1]], theta: p.theta };
                Ok(Characteristic { ds, points, exit, length })
            }
            Some(_) => {
                points.push(p);
                if self.starts_outgoing(start) {
                    return Ok(Characteristic { ds, points, exit: p, length: 0.0 });
                }
                let limit = TRAPPING_FACTOR * self.diameter;
                let mut y = [start.x[0], start.x[1], start.theta];
                let mut s = 0.0;
                loop {
                    let z = self.rk4_span(y, ds);
                    if self.level([z[0], z[1]]) > 0.0 {
                        let (h, ze) = self.bisect_exit(y, ds, true);
                        let exit = flip(PhasePoint::new([ze[0], ze[1]], ze[2]));
                        return Ok(Characteristic { ds, points, exit, length: s + h });
                    }
                    s += ds;
                    y = z;
                    points.push(flip(PhasePoint::new([y[0], y[1]], y[2])));
                    if s > limit {
                        return Err(Error::TrappingDetected { x: p.x[0], y: p.x[1], theta: p.theta, limit });
                    }
                }
            }
        }
    }

    /// Entry point `ρ_{x,v}(-τ₋)` on the boundary together with `τ₋`.
    pub fn entry_point(&self, p: PhasePoint) -> Result<(PhasePoint, f64)> {
        self.check_inside(p.x)?;
        match &self.factor {
            None => {
                let (_, tm) = self.euclidean_exit_times(p);
                let d = p.direction();
                Ok((PhasePoint { x: [p.x[0] - tm * d[0], p.x[1] - tm * d[1]], theta: p.theta }, tm))
            }
            Some(_) => {
                let (q, s) = self.trace_exit(p.reversed(), self.default_step())?;
                Ok((q.reversed(), s))
            }
        }
    }

    /// `|⟨ν(x), v⟩_g|` at a boundary point.
    pub fn boundary_measure_weight(&self, p: PhasePoint) -> Result<f64> {
        if self.level(p.x).abs() > ON_BOUNDARY_TOL {
            return Err(Error::PointNotOnBoundary(p.x[0], p.x[1]));
        }
        let n = self.outward_normal(p.x);
        let d = p.direction();
        Ok((n[0] * d[0] + n[1] * d[1]).abs().min(1.0))
    }

    /// `∂_θ τ₋(x,θ)`: closed form on disks and ellipses, central differences
    /// (step 1e-4) for conformal domains.
    pub fn vertical_tau_derivative(&self, p: PhasePoint) -> Result<f64> {
        self.check_inside(p.x)?;
        match (&self.factor, self.shape) {
            (None, Shape::Disk { radius }) => {
                let (c, s) = (p.theta.cos(), p.theta.sin());
                let b = p.x[0] * c + p.x[1] * s;
                let db = -p.x[0] * s + p.x[1] * c;
                let root = (b * b - (p.x[0] * p.x[0] + p.x[1] * p.x[1]) + radius * radius).max(0.0).sqrt();
                if root == 0.0 {
                    return Ok(db);
                }
                Ok(db * (1.0 + b / root))
            }
            (None, Shape::Ellipse { a, b }) => {
                let (c, s) = (p.theta.cos(), p.theta.sin());
                let (a2, b2) = (a * a, b * b);
                let qa = c * c / a2 + s * s / b2;
                let qb = p.x[0] * c / a2 + p.x[1] * s / b2;
                let qc = (p.x[0] * p.x[0] / a2 + p.x[1] * p.x[1] / b2 - 1.0).min(0.0);
                let da = 2.0 * c * s * (1.0 / b2 - 1.0 / a2);
                let dbq = -p.x[0] * s / a2 + p.x[1] * c / b2;
                let d = qb * qb - qa * qc;
                let dd = 2.0 * qb * dbq - da * qc;
                let rd = d.max(0.0).sqrt();
                if rd == 0.0 {
                    return Ok(0.0);
                }
                Ok(((dbq + dd / (2.0 * rd)) * qa - (qb + rd) * da) / (qa * qa))
            }
            (Some(_), _) => {
                let h = 1e-4;
                let tp = self.exit_times(PhasePoint::new(p.x, p.theta + h))?.1;
                let tm = self.exit_times(PhasePoint::new(p.x, p.theta - h))?.1;
                Ok((tp - tm) / (2.0 * h))
            }
        }
    }

    /// Inner product `⟨ν, v⟩_g` expressed through angles: the metric factors
    /// cancel, so this is the Euclidean cosine between normal and direction.
    pub fn normal_cosine(&self, y: Point, theta: f64) -> f64 {
        let n = self.outward_normal(y);
        n[0] * theta.cos() + n[1] * theta.sin()
    }

    /// Riemannian area element `e^{2c}` relative to `dx`.
    pub fn area_density(&self, x: Point) -> f64 {
        (2.0 * self.conformal_factor(x)).exp()
    }

    /// Metric area of the domain (Euclidean area for `c ≡ 0`).
    pub fn euclidean_area(&self) -> f64 {
        let (a, b) = self.semi_axes();
        PI * a * b
    }
}
