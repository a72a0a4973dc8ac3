//! Coefficients `(σ, μ, q, m)` and the admissibility checks for the classes
//! Ω (subcritical scattering) and 𝓜 (symmetric kernels supported away from
//! zeros of `∂_θ τ₋`).

use crate::geometry::{Domain, PhasePoint, Point};
use crate::grid::{PhaseGrid, SpacetimeField};
use crate::{par, Error, Result};
use std::fmt;
use std::sync::Arc;

pub type SigmaFn = Arc<dyn Fn(Point, f64) -> f64 + Send + Sync>;
pub type KernelFn = Arc<dyn Fn(Point, f64, f64) -> f64 + Send + Sync>;

/// Absorption `σ(x, θ)`.
#[derive(Clone)]
pub enum Sigma {
    Constant(f64),
    Func(SigmaFn),
}

impl Sigma {
    #[inline]
    pub fn eval(&self, x: Point, theta: f64) -> f64 {
        match self {
            Sigma::Constant(c) => *c,
            Sigma::Func(f) => f(x, theta),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Sigma::Constant(c) if *c == 0.0)
    }
}

impl fmt::Debug for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sigma::Constant(c) => write!(f, "Constant({c})"),
            Sigma::Func(_) => write!(f, "Func"),
        }
    }
}

/// Scattering kernel `μ(x, θ, θ')`; `K(f)(x,θ) = ∫ μ(x,θ,θ') f(x,θ') dθ'`.
#[derive(Clone)]
pub enum Kernel {
    Zero,
    /// `μ ≡ c`
    Isotropic(f64),
    /// `μ(x,θ,θ') = c·χ(x,θ)·χ(x,θ')`
    Separable { c: f64, chi: SigmaFn },
    General(KernelFn),
}

impl Kernel {
    #[inline]
    pub fn eval(&self, x: Point, theta: f64, theta_p: f64) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::Isotropic(c) => *c,
            Kernel::Separable { c, chi } => c * chi(x, theta) * chi(x, theta_p),
            Kernel::General(f) => f(x, theta, theta_p),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Kernel::Zero => true,
            Kernel::Isotropic(c) => *c == 0.0,
            Kernel::Separable { c, .. } => *c == 0.0,
            Kernel::General(_) => false,
        }
    }

    /// Kernel with the two angular slots exchanged.
    pub fn transposed(&self) -> Kernel {
        match self {
            Kernel::General(f) => {
                let f = f.clone();
                Kernel::General(Arc::new(move |x, a, b| f(x, b, a)))
            }
            k => k.clone(),
        }
    }

    /// Multiplies the kernel by `s ≥ 0`.
    pub fn scaled(&self, s: f64) -> Kernel {
        match self {
            Kernel::Zero => Kernel::Zero,
            Kernel::Isotropic(c) => Kernel::Isotropic(c * s),
            Kernel::Separable { c, chi } => Kernel::Separable { c: c * s, chi: chi.clone() },
            Kernel::General(f) => {
                let f = f.clone();
                Kernel::General(Arc::new(move |x, a, b| s * f(x, a, b)))
            }
        }
    }
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Zero => write!(f, "Zero"),
            Kernel::Isotropic(c) => write!(f, "Isotropic({c})"),
            Kernel::Separable { c, .. } => write!(f, "Separable {{ c: {c} }}"),
            Kernel::General(_) => write!(f, "General"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Medium {
    pub sigma: Sigma,
    pub mu: Kernel,
    /// Nonlinear coefficient on the grid's `(t, x)` nodes; `None` means `q ≡ 0`.
    pub q: Option<SpacetimeField>,
    pub m: u32,
    pub sigma0: f64,
    pub mu0: f64,
}

impl Medium {
    pub fn new(sigma: Sigma, mu: Kernel, m: u32, sigma0: f64, mu0: f64) -> Result<Medium> {
        if m < 2 {
            return Err(Error::InvalidParameters(format!("power m = {m} must be at least 2")));
        }
        Ok(Medium { sigma, mu, q: None, m, sigma0, mu0 })
    }

    /// Constant absorption, constant isotropic scattering, power `m`.
    pub fn constant(sigma: f64, mu: f64, m: u32) -> Result<Medium> {
        let k = if mu == 0.0 { Kernel::Zero } else { Kernel::Isotropic(mu) };
        Medium::new(Sigma::Constant(sigma), k, m, sigma.max(0.0), mu.max(0.0))
    }

    pub fn with_q(mut self, q: SpacetimeField) -> Medium {
        self.q = Some(q);
        self
    }

    pub fn without_q(mut self) -> Medium {
        self.q = None;
        self
    }

    pub fn has_q(&self) -> bool {
        self.q.as_ref().is_some_and(|q| q.data.iter().any(|v| v.norm() != 0.0))
    }

    /// Medium for the reduced adjoint problem: `σ'(x,v) = σ(x,-v)` and
    /// `μ'(x,v,v') = μ(x,-v',-v)`.
    pub fn reversed(&self) -> Medium {
        use std::f64::consts::PI;
        let sigma = match &self.sigma {
            Sigma::Constant(c) => Sigma::Constant(*c),
            Sigma::Func(f) => {
                let f = f.clone();
                Sigma::Func(Arc::new(move |x, t| f(x, t + PI)))
            }
        };
        let mu = match &self.mu {
            Kernel::Zero => Kernel::Zero,
            Kernel::Isotropic(c) => Kernel::Isotropic(*c),
            Kernel::Separable { c, chi } => {
                let chi = chi.clone();
                Kernel::Separable { c: *c, chi: Arc::new(move |x, t| chi(x, t + PI)) }
            }
            Kernel::General(f) => {
                let f = f.clone();
                Kernel::General(Arc::new(move |x, a, b| f(x, b + PI, a + PI)))
            }
        };
        Medium { sigma, mu, q: None, m: self.m, sigma0: self.sigma0, mu0: self.mu0 }
    }
}

/// Outcome of the class-Ω check.
#[derive(Clone, Debug)]
pub struct OmegaReport {
    pub pass: bool,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    /// `max (∫μ(x,v,v')dv' − σ(x,v))` over samples.
    pub out_excess: f64,
    /// `max (∫μ(x,v',v)dv' − σ(x,v))` over samples.
    pub in_excess: f64,
    /// `sup ∫ μ dv' / inf σ` over samples where σ > 0; a contraction estimate.
    pub scattering_ratio: f64,
    pub worst: Option<(Point, f64)>,
    pub messages: Vec<String>,
}

/// Samples `σ` and `μ` on the grid and checks the bounds and both
/// subcriticality conditions with the uniform angular rule.
pub fn validate_omega(med: &Medium, grid: &PhaseGrid) -> OmegaReport {
    let nth = grid.ntheta;
    let per_node = par::map_range(grid.nx(), |i| {
        let x = grid.nodes.points[i];
        let sig: Vec<f64> = (0..nth).map(|j| med.sigma.eval(x, grid.theta(j))).collect();
        let mut mu_min = f64::INFINITY;
        let mut mu_max = f64::NEG_INFINITY;
        let mut out_int = vec![0.0; nth];
        let mut in_int = vec![0.0; nth];
        for j in 0..nth {
            for jp in 0..nth {
                let m = med.mu.eval(x, grid.theta(j), grid.theta(jp));
                mu_min = mu_min.min(m);
                mu_max = mu_max.max(m);
                out_int[j] += m * grid.dtheta;
                in_int[jp] += m * grid.dtheta;
            }
        }
        let mut out_ex = f64::NEG_INFINITY;
        let mut in_ex = f64::NEG_INFINITY;
        let mut worst_j = 0;
        let mut ratio_num: f64 = 0.0;
        for j in 0..nth {
            let e = out_int[j] - sig[j];
            if e > out_ex {
                out_ex = e;
                worst_j = j;
            }
            in_ex = in_ex.max(in_int[j] - sig[j]);
            ratio_num = ratio_num.max(out_int[j].max(in_int[j]));
        }
        let smin = sig.iter().cloned().fold(f64::INFINITY, f64::min);
        let smax = sig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (smin, smax, mu_min, mu_max, out_ex, in_ex, worst_j, ratio_num)
    });
    let mut r = OmegaReport {
        pass: true,
        sigma_min: f64::INFINITY,
        sigma_max: f64::NEG_INFINITY,
        mu_min: f64::INFINITY,
        mu_max: f64::NEG_INFINITY,
        out_excess: f64::NEG_INFINITY,
        in_excess: f64::NEG_INFINITY,
        scattering_ratio: 0.0,
        worst: None,
        messages: Vec::new(),
    };
    let mut max_int: f64 = 0.0;
    for (i, v) in per_node.iter().enumerate() {
        r.sigma_min = r.sigma_min.min(v.0);
        r.sigma_max = r.sigma_max.max(v.1);
        r.mu_min = r.mu_min.min(v.2);
        r.mu_max = r.mu_max.max(v.3);
        if v.4.max(v.5) > r.out_excess.max(r.in_excess) {
            r.worst = Some((grid.nodes.points[i], grid.theta(v.6)));
        }
        r.out_excess = r.out_excess.max(v.4);
        r.in_excess = r.in_excess.max(v.5);
        max_int = max_int.max(v.7);
    }
    r.scattering_ratio = if r.sigma_min > 0.0 { max_int / r.sigma_min } else if max_int == 0.0 { 0.0 } else { f64::INFINITY };
    let tol = 1e-12 * r.sigma_max.abs().max(1.0);
    if r.sigma_min < 0.0 {
        r.pass = false;
        r.messages.push(format!("sigma takes negative value {:.3e}", r.sigma_min));
    }
    if r.sigma_max > med.sigma0 + tol {
        r.pass = false;
        r.messages.push(format!("sigma {:.6} exceeds sigma0 {:.6}", r.sigma_max, med.sigma0));
    }
    if r.mu_min < 0.0 {
        r.pass = false;
        r.messages.push(format!("mu takes negative value {:.3e}", r.mu_min));
    }
    if r.mu_max > med.mu0 + tol {
        r.pass = false;
        r.messages.push(format!("mu {:.6} exceeds mu0 {:.6}", r.mu_max, med.mu0));
    }
    if r.out_excess > tol {
        r.pass = false;
        r.messages.push(format!("outgoing scattering integral exceeds sigma by {:.3e}", r.out_excess));
    }
    if r.in_excess > tol {
        r.pass = false;
        r.messages.push(format!("incoming scattering integral exceeds sigma by {:.3e}", r.in_excess));
    }
    r
}

#[derive(Clone, Debug)]
pub struct ClassMReport {
    pub symmetric: bool,
    pub support_ok: bool,
    pub max_asymmetry: f64,
    /// Largest `|μ(x,v,v')|` found where `|∂_θ τ₋(x,v')|` is below the cutoff.
    pub max_violation: f64,
    pub worst_asymmetry: Option<(Point, f64, f64)>,
    pub worst_violation: Option<(Point, f64, f64)>,
    pub cutoff: f64,
}

/// Structural check of 𝓜 membership on every grid sample. The cutoff
/// defaults to `0.05·diameter` when `None`.
pub fn validate_class_m(med: &Medium, dom: &Domain, grid: &PhaseGrid, cutoff: Option<f64>) -> Result<ClassMReport> {
    let cutoff = cutoff.unwrap_or(0.05 * dom.diameter);
    let nth = grid.ntheta;
    let per_node = par::map_range(grid.nx(), |i| -> Result<_> {
        let x = grid.nodes.points[i];
        let mut vt = vec![0.0; nth];
        if !med.mu.is_zero() {
            for (j, v) in vt.iter_mut().enumerate() {
                *v = dom.vertical_tau_derivative(PhasePoint { x, theta: grid.theta(j) })?;
            }
        }
        let mut asym = (0.0, 0, 0);
        let mut viol = (0.0, 0, 0);
        if med.mu.is_zero() {
            return Ok((asym, viol));
        }
        for j in 0..nth {
            for jp in 0..nth {
                let a = med.mu.eval(x, grid.theta(j), grid.theta(jp));
                let b = med.mu.eval(x, grid.theta(jp), grid.theta(j));
                if (a - b).abs() > asym.0 {
                    asym = ((a - b).abs(), j, jp);
                }
                if vt[jp].abs() < cutoff && a.abs() > viol.0 {
                    viol = (a.abs(), j, jp);
                }
            }
        }
        Ok((asym, viol))
    });
    let mut rep = ClassMReport {
        symmetric: true,
        support_ok: true,
        max_asymmetry: 0.0,
        max_violation: 0.0,
        worst_asymmetry: None,
        worst_violation: None,
        cutoff,
    };
    for (i, v) in per_node.into_iter().enumerate() {
        let (asym, viol) = v?;
        let x = grid.nodes.points[i];
        if asym.0 > rep.max_asymmetry {
            rep.max_asymmetry = asym.0;
            rep.worst_asymmetry = Some((x, grid.theta(asym.1), grid.theta(asym.2)));
        }
        if viol.0 > rep.max_violation {
            rep.max_violation = viol.0;
            rep.worst_violation = Some((x, grid.theta(viol.1), grid.theta(viol.2)));
        }
    }
    rep.symmetric = rep.max_asymmetry < 1e-12;
    rep.support_ok = rep.max_violation == 0.0;
    Ok(rep)
}

/// Smooth cutoff in `|∂_θ τ₋|`: zero below `lo`, one above `hi`.
pub fn vertical_cutoff(dom: &Domain, lo: f64, hi: f64) -> SigmaFn {
    let dom = dom.clone();
    Arc::new(move |x, theta| {
        let v = dom.vertical_tau_derivative(PhasePoint::new(x, theta)).unwrap_or(0.0).abs();
        smooth_step((v - lo) / (hi - lo))
    })
}

/// [`vertical_cutoff`] tabulated at the grid's spatial nodes on `n_angle`
/// uniform angles and interpolated linearly in θ. On conformal domains every
/// exact evaluation traces four geodesics, which is too slow inside scattering
/// quadratures. Off-node positions fall back to the exact cutoff.
///
/// Interpolation can leave small nonzero values up to one table cell beyond
/// the zero set, so pick `lo` above the class-𝓜 cutoff with some margin.
pub fn tabulated_vertical_cutoff(dom: &Domain, grid: &PhaseGrid, lo: f64, hi: f64, n_angle: usize) -> Result<SigmaFn> {
    use std::collections::HashMap;
    if n_angle < 8 {
        return Err(Error::InvalidCounts(format!("cutoff table needs at least 8 angles, got {n_angle}")));
    }
    let exact = vertical_cutoff(dom, lo, hi);
    let dth = 2.0 * std::f64::consts::PI / n_angle as f64;
    let rows = par::map_range(grid.nx(), |i| {
        let x = grid.nodes.points[i];
        (0..n_angle).map(|a| exact(x, a as f64 * dth)).collect::<Vec<f64>>()
    });
    let index: HashMap<[u64; 2], usize> = grid.nodes.points.iter().enumerate().map(|(i, x)| ([x[0].to_bits(), x[1].to_bits()], i)).collect();
    Ok(Arc::new(move |x: Point, theta: f64| match index.get(&[x[0].to_bits(), x[1].to_bits()]) {
        Some(&i) => {
            let u = crate::geometry::wrap_angle(theta) / dth;
            let a = (u.floor() as usize) % n_angle;
            let w = u - u.floor();
            rows[i][a] * (1.0 - w) + rows[i][(a + 1) % n_angle] * w
        }
        None => exact(x, theta),
    }))
}

/// `C^∞` step: 0 for `u ≤ 0`, 1 for `u ≥ 1`.
pub fn smooth_step(u: f64) -> f64 {
    let f = |s: f64| if s <= 0.0 { 0.0 } else { (-1.0 / s).exp() };
    let a = f(u);
    let b = f(1.0 - u);
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid() -> PhaseGrid {
        PhaseGrid::build(&Domain::disk(1.0).unwrap(), 1.0, 4, 120, 16).unwrap()
    }

    #[test]
    fn isotropic_at_the_critical_value_passes() {
        let m = Medium::constant(1.0, 1.0 / (2.0 * PI), 2).unwrap();
        assert!(validate_omega(&m, &grid()).pass);
        let m = Medium::constant(1.0, 1.0 / PI, 2).unwrap();
        assert!(!validate_omega(&m, &grid()).pass);
    }

    #[test]
    fn zero_kernel_is_in_class_m() {
        let g = grid();
        let m = Medium::constant(1.0, 0.0, 2).unwrap();
        let r = validate_class_m(&m, &g.domain, &g, None).unwrap();
        assert!(r.symmetric && r.support_ok);
    }

    #[test]
    fn constant_kernel_fails_support() {
        let g = grid();
        let m = Medium::constant(1.0, 0.1, 2).unwrap();
        let r = validate_class_m(&m, &g.domain, &g, None).unwrap();
        assert!(r.symmetric);
        assert!(!r.support_ok);
    }

    #[test]
    fn power_below_two_rejected() {
        assert!(Medium::constant(1.0, 0.0, 1).is_err());
    }
}
