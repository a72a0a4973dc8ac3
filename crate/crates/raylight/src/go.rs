//! Geometric-optics probes `φ_λ Θ_{±σ} + r_λ`.
//!
//! The leading term is closed form: the boundary profile transported along
//! characteristics, times the attenuation `Θ_{±σ}` and the phase
//! `e^{iλ(t + p̂)}`. The remainder solves the linear (or adjoint) problem with
//! source `K(leading)` (or `K*(leading)`) and zero data. That source is
//! computed at the nodes by a fine angular quadrature that resolves the phase
//! in `v'`, and the remainder is solved in the demodulated frame.

use crate::geometry::{Domain, PhasePoint};
use crate::grid::{PhaseField, PhaseGrid};
use crate::media::{validate_class_m, Kernel, Medium, Sigma};
use crate::profile::Profile;
use crate::transport::{
    reverse_conj, BoundaryData, Equation, Interpolated, Modulation, PhaseEval, PhaseKind, ResidualReport, SolverOptions,
    Transport,
};
use crate::{par, Error, Result, C64};
use std::sync::Arc;

/// Boundary profile `φ(t, y, w)` evaluated at an incoming boundary point.
pub type ProfileFn = Arc<dyn Fn(f64, PhasePoint) -> f64 + Send + Sync>;

/// Wraps a tensor-product [`Profile`].
pub fn profile_fn(dom: &Domain, p: Profile) -> ProfileFn {
    let dom = dom.clone();
    Arc::new(move |t, y: PhasePoint| p.eval(&dom, t, y.x, y.theta))
}

/// Geometry of the characteristic through a point, as seen by the leading term.
#[derive(Clone, Copy, Debug)]
pub struct LeadGeom {
    pub tau_minus: f64,
    pub entry: PhasePoint,
    /// `Θ_σ` (forward) or `Θ_{−σ}` (adjoint).
    pub theta: f64,
    pub phat: f64,
}

/// Closed-form leading term `φ(t−τ₋, ρ(−τ₋))·Θ_{±σ}·e^{iλ(t+p̂)}`.
#[derive(Clone)]
pub struct Leading {
    pub dom: Domain,
    pub sigma: Sigma,
    pub phi: ProfileFn,
    pub lambda: f64,
    pub kind: PhaseKind,
    pub adjoint: bool,
    pub step: f64,
}

impl Leading {
    pub fn new(grid: &PhaseGrid, med: &Medium, phi: ProfileFn, lambda: f64, kind: PhaseKind, adjoint: bool) -> Leading {
        Leading { dom: grid.domain.clone(), sigma: med.sigma.clone(), phi, lambda, kind, adjoint, step: grid.ray_step }
    }

    pub fn geometry(&self, p: PhasePoint) -> Result<LeadGeom> {
        let (tau_m, entry, integral) = match &self.sigma {
            Sigma::Constant(s) => {
                let (e, tm) = self.dom.entry_point(p)?;
                (tm, e, s * tm)
            }
            sig => {
                let ch = self.dom.characteristic(p, self.step, true)?;
                let vals: Vec<f64> = ch.points.iter().map(|q| sig.eval(q.x, q.theta)).collect();
                let mut a = 0.0;
                for w in vals.windows(2) {
                    a += 0.5 * ch.ds * (w[0] + w[1]);
                }
                let rest = ch.length - (ch.points.len() - 1) as f64 * ch.ds;
                a += 0.5 * rest.max(0.0) * (vals[vals.len() - 1] + sig.eval(ch.exit.x, ch.exit.theta));
                (ch.length, ch.exit, a)
            }
        };
        let theta = if self.adjoint { integral.exp() } else { (-integral).exp() };
        let phat = match self.kind {
            PhaseKind::Euclidean => {
                let d = p.direction();
                -(p.x[0] * d[0] + p.x[1] * d[1])
            }
            PhaseKind::Riemannian => -tau_m,
        };
        Ok(LeadGeom { tau_minus: tau_m, entry, theta, phat })
    }

    /// Demodulated value `φ(t−τ₋, entry)·Θ`.
    #[inline]
    pub fn envelope(&self, t: f64, g: &LeadGeom) -> f64 {
        (self.phi)(t - g.tau_minus, g.entry) * g.theta
    }

    #[inline]
    pub fn value(&self, t: f64, g: &LeadGeom) -> C64 {
        C64::from_polar(self.envelope(t, g), self.lambda * (t + g.phat))
    }

    pub fn eval(&self, t: f64, p: PhasePoint) -> Result<C64> {
        Ok(self.value(t, &self.geometry(p)?))
    }
}

/// `Θ_{±σ}` at the nodes, ordered `[j][i]` (`sign = +1` gives `Θ_σ`).
pub fn theta_sigma(med: &Medium, grid: &PhaseGrid, sign: f64) -> Result<Vec<f64>> {
    let lead = Leading::new(grid, med, Arc::new(|_, _| 1.0), 0.0, PhaseKind::Riemannian, sign < 0.0);
    let vals = par::map_range(grid.ntheta * grid.nx(), |s| {
        lead.geometry(grid.phase_point(s % grid.nx(), s / grid.nx())).map(|g| g.theta)
    });
    vals.into_iter().collect()
}

/// Number of angles in the fine quadrature of `K(leading)`: enough to keep
/// the phase increment near a quarter radian, and a multiple of `N_θ`.
pub fn fine_angle_count(grid: &PhaseGrid, lambda: f64) -> usize {
    let need = (24.0 * lambda.abs() * grid.domain.diameter).ceil() as usize;
    let m = need.max(4 * grid.ntheta);
    m.div_ceil(grid.ntheta) * grid.ntheta
}

/// Demodulated `K(leading)` (or `K*(leading)`) at the nodes, in the frame
/// `frame`, by the fine uniform rule in `v'`.
pub fn scattered_leading(med: &Medium, grid: &PhaseGrid, lead: &Leading, frame: &Modulation) -> Result<PhaseField> {
    let mut out = PhaseField::zeros(grid);
    if med.mu.is_zero() {
        return Ok(out);
    }
    let (nt, nx, nth) = (grid.nt, grid.nx(), grid.ntheta);
    let nf = fine_angle_count(grid, lead.lambda);
    let dth = 2.0 * std::f64::consts::PI / nf as f64;
    let lambda = lead.lambda;
    let rows = par::map_range(nx, |i| -> Result<Vec<C64>> {
        let x = grid.nodes.points[i];
        // envelope values and phases of the leading term at the fine angles
        let mut env: Vec<(usize, f64, Vec<f64>)> = Vec::new();
        for m in 0..nf {
            let th = m as f64 * dth;
            let g = lead.geometry(PhasePoint::new(x, th))?;
            let vals: Vec<f64> = (0..nt).map(|k| lead.envelope(grid.time(k), &g)).collect();
            if vals.iter().any(|v| *v != 0.0) {
                env.push((m, g.phat, vals));
            }
        }
        let mut block = vec![C64::new(0.0, 0.0); nth * nt];
        if env.is_empty() {
            return Ok(block);
        }
        let moments = |weight: &dyn Fn(f64) -> f64| {
            let mut mo = vec![C64::new(0.0, 0.0); nt];
            for (m, ph, vals) in &env {
                let w = C64::from_polar(weight(*m as f64 * dth) * dth, lambda * ph);
                for (a, v) in mo.iter_mut().zip(vals) {
                    *a += w * v;
                }
            }
            mo
        };
        match &med.mu {
            Kernel::Zero => {}
            Kernel::Isotropic(c) => {
                let mo = moments(&|_| 1.0);
                for j in 0..nth {
                    let w = C64::from_polar(*c, -lambda * frame.phat(i, j));
                    for k in 0..nt {
                        block[j * nt + k] = mo[k] * w;
                    }
                }
            }
            Kernel::Separable { c, chi } => {
                let mo = moments(&|th| chi(x, th));
                for j in 0..nth {
                    let w = C64::from_polar(c * chi(x, grid.theta(j)), -lambda * frame.phat(i, j));
                    for k in 0..nt {
                        block[j * nt + k] = mo[k] * w;
                    }
                }
            }
            Kernel::General(kf) => {
                for j in 0..nth {
                    let thj = grid.theta(j);
                    let back = C64::from_polar(1.0, -lambda * frame.phat(i, j));
                    let series = &mut block[j * nt..(j + 1) * nt];
                    for (m, ph, vals) in &env {
                        let thp = *m as f64 * dth;
                        let mu = if lead.adjoint { kf(x, thp, thj) } else { kf(x, thj, thp) };
                        if mu == 0.0 {
                            continue;
                        }
                        let w = back * C64::from_polar(mu * dth, lambda * ph);
                        for (a, v) in series.iter_mut().zip(vals) {
                            *a += w * v;
                        }
                    }
                }
            }
        }
        Ok(block)
    });
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        for j in 0..nth {
            out.series_mut(i, j).copy_from_slice(&row[j * nt..(j + 1) * nt]);
        }
    }
    Ok(out)
}

/// A GO probe on the grid. Fields are kept demodulated; the physical leading
/// term and remainder are available through [`GoProbe::leading`] and
/// [`GoProbe::remainder`].
#[derive(Clone)]
pub struct GoProbe {
    pub lambda: f64,
    pub kind: PhaseKind,
    pub adjoint: bool,
    pub lead: Leading,
    pub frame: Modulation,
    /// `φ(t−τ₋, entry)·Θ` at the nodes.
    pub envelope: PhaseField,
    /// Demodulated `r_λ`.
    pub remainder_demod: PhaseField,
    /// Demodulated `K(leading)` (or `K*(leading)`).
    pub scattered: PhaseField,
    /// `‖r_λ‖_∞ / (σ₀‖φ‖_∞)`, when `σ₀‖φ‖_∞ > 0`.
    pub remainder_constant: Option<f64>,
    pub iterations: usize,
}

impl GoProbe {
    fn physical(&self, grid: &PhaseGrid, f: &PhaseField) -> PhaseField {
        let mut out = f.clone();
        let m = &self.frame;
        par::for_each_chunk(&mut out.data, grid.nt, |s, series| {
            let ph = m.phat(s % grid.nx(), s / grid.nx());
            for (k, v) in series.iter_mut().enumerate() {
                *v *= m.factor(1.0, grid.time(k), ph);
            }
        });
        out
    }

    /// `φ_λ Θ_{±σ}` at the nodes.
    pub fn leading(&self, grid: &PhaseGrid) -> PhaseField {
        self.physical(grid, &self.envelope)
    }

    /// `r_λ` at the nodes.
    pub fn remainder(&self, grid: &PhaseGrid) -> PhaseField {
        self.physical(grid, &self.remainder_demod)
    }

    /// `‖r_λ‖_{L²(SM_T)}`.
    pub fn remainder_norm(&self, grid: &PhaseGrid) -> f64 {
        self.remainder_demod.l2(grid)
    }

    /// `‖K(φ_λΘ)‖_{L²(SM_T)}`.
    pub fn scattered_norm(&self, grid: &PhaseGrid) -> f64 {
        self.scattered.l2(grid)
    }
}

fn sup_profile(grid: &PhaseGrid, phi: &ProfileFn) -> f64 {
    let mut m = 0.0f64;
    for ray in &grid.boundary_rays.rays {
        let p = ray.incoming();
        for k in 0..grid.nt {
            m = m.max(phi(grid.time(k), p).abs());
        }
    }
    m
}

/// Builds the probe `φ_λΘ_{±σ} + r_λ`. The adjoint remainder solves
/// `(∂ₜ + X − σ)r = −K*r − K*(leading)` with `r = 0` at `t = T` and on `∂₊SM_T`.
pub fn build_go(
    med: &Medium,
    grid: &PhaseGrid,
    lambda: f64,
    phi: ProfileFn,
    kind: PhaseKind,
    adjoint: bool,
    opts: &SolverOptions,
) -> Result<GoProbe> {
    if lambda == 0.0 {
        return Err(Error::ZeroLambda);
    }
    if kind == PhaseKind::Riemannian && !med.mu.is_zero() {
        let rep = validate_class_m(med, &grid.domain, grid, None)?;
        if !rep.symmetric || !rep.support_ok {
            return Err(Error::ClassMViolation(format!(
                "asymmetry {:.3e}, kernel {:.3e} where |d tau/d theta| < {:.3}",
                rep.max_asymmetry, rep.max_violation, rep.cutoff
            )));
        }
    }
    let lin = med.clone().without_q();
    let lead = Leading::new(grid, &lin, phi.clone(), lambda, kind, adjoint);
    let frame = Modulation::new(grid, lambda, kind)?;
    let geoms = par::map_range(grid.nx() * grid.ntheta, |s| lead.geometry(grid.phase_point(s % grid.nx(), s / grid.nx())));
    let geoms = geoms.into_iter().collect::<Result<Vec<_>>>()?;
    let mut envelope = PhaseField::zeros(grid);
    par::for_each_chunk(&mut envelope.data, grid.nt, |s, series| {
        for (k, v) in series.iter_mut().enumerate() {
            *v = C64::new(lead.envelope(grid.time(k), &geoms[s]), 0.0);
        }
    });
    let scattered = scattered_leading(&lin, grid, &lead, &frame)?;
    let (remainder_demod, iterations) = if lin.mu.is_zero() {
        (PhaseField::zeros(grid), 0)
    } else if !adjoint {
        let t = Transport::with_options(grid, &lin, opts.clone()).with_modulation(frame.clone());
        let sol = t.solve_linear(Some(&scattered), &BoundaryData::zero())?;
        (sol.field, sol.iterations)
    } else {
        let shift = C64::from_polar(1.0, -lambda * grid.t_final);
        let mut src = reverse_conj(grid, &scattered);
        src.scale(shift);
        let t = Transport::with_options(grid, &lin.reversed(), opts.clone()).with_modulation(frame.reversed(grid));
        let sol = t.solve_linear(Some(&src), &BoundaryData::zero())?;
        let mut r = reverse_conj(grid, &sol.field);
        r.scale(shift);
        (r, sol.iterations)
    };
    let denom = lin.sigma0 * sup_profile(grid, &phi);
    let remainder_constant = if denom > 0.0 { Some(remainder_demod.linf() / denom) } else { None };
    Ok(GoProbe { lambda, kind, adjoint, lead, frame, envelope, remainder_demod, scattered, remainder_constant, iterations })
}

struct ProbeEval<'a> {
    lead: &'a Leading,
    rem: Interpolated<'a>,
    grid: &'a PhaseGrid,
}

impl PhaseEval for ProbeEval<'_> {
    fn eval(&self, k: usize, p: PhasePoint) -> C64 {
        let e = self.lead.geometry(p).map(|g| self.lead.envelope(self.grid.time(k), &g)).unwrap_or(0.0);
        self.rem.eval(k, p) + e
    }

    fn eval_series(&self, p: PhasePoint, out: &mut [C64]) {
        let g = self.lead.geometry(p).ok();
        for (k, o) in out.iter_mut().enumerate() {
            let e = g.as_ref().map(|g| self.lead.envelope(self.grid.time(k), g)).unwrap_or(0.0);
            *o = self.rem.eval(k, p) + e;
        }
    }
}

/// Discrete residual of the full probe in its equation, computed in the
/// demodulated frame (same magnitude as the physical residual). The leading
/// term is evaluated in closed form off the grid; its scattering uses the fine
/// quadrature.
pub fn probe_residual(med: &Medium, grid: &PhaseGrid, probe: &GoProbe) -> Result<ResidualReport> {
    let lin = med.clone().without_q();
    let t = Transport::new(grid, &lin).with_modulation(probe.frame.clone());
    let mut total = probe.envelope.clone();
    total.axpy(C64::new(1.0, 0.0), &probe.remainder_demod);
    // source such that the node scattering of the envelope is replaced by
    // the fine-quadrature value
    let mut fix = probe.scattered.clone();
    fix.axpy(C64::new(-1.0, 0.0), &t.scatter(&probe.envelope, probe.adjoint));
    let eval = ProbeEval { lead: &probe.lead, rem: Interpolated { grid, field: &probe.remainder_demod }, grid };
    let eq = if probe.adjoint { Equation::Adjoint } else { Equation::Linear };
    t.residual_with(&total, &eval, Some(&fix), eq)
}

/// Residual of the plain linear solve with the non-oscillating data of the
/// same profile (`h₋ = φ`, `h₀ = φ(−τ₋, entry)Θ`): the reference scale for
/// [`probe_residual`]. Evaluated the same way, closed-form transported data
/// plus the interpolated correction.
pub fn base_residual(med: &Medium, grid: &PhaseGrid, phi: ProfileFn, opts: &SolverOptions) -> Result<ResidualReport> {
    let lin = med.clone().without_q();
    let lead = Leading::new(grid, &lin, phi.clone(), 0.0, PhaseKind::Riemannian, false);
    let h0_lead = lead.clone();
    let data = BoundaryData::new(
        Some(Arc::new(move |p| h0_lead.eval(0.0, p).unwrap_or_default())),
        Some(Arc::new(move |t, p| C64::new(phi(t, p), 0.0))),
    );
    let t = Transport::with_options(grid, &lin, opts.clone());
    let sol = t.solve_linear(None, &data)?;
    let mut rem = sol.field.clone();
    let mut env = PhaseField::zeros(grid);
    let geoms = par::map_range(grid.nx() * grid.ntheta, |s| lead.geometry(grid.phase_point(s % grid.nx(), s / grid.nx())));
    let geoms = geoms.into_iter().collect::<Result<Vec<_>>>()?;
    par::for_each_chunk(&mut env.data, grid.nt, |s, series| {
        for (k, v) in series.iter_mut().enumerate() {
            *v = C64::new(lead.envelope(grid.time(k), &geoms[s]), 0.0);
        }
    });
    rem.axpy(C64::new(-1.0, 0.0), &env);
    let eval = ProbeEval { lead: &lead, rem: Interpolated { grid, field: &rem }, grid };
    t.residual_with(&sol.field, &eval, None, Equation::Linear)
}

#[derive(Clone, Copy, Debug)]
pub struct DecayRow {
    pub lambda: f64,
    pub r_norm: f64,
    pub k_norm: f64,
    pub remainder_constant: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct DecayTable {
    pub rows: Vec<DecayRow>,
    /// Fraction of consecutive steps in which `‖r_λ‖` decreased.
    pub decreasing_fraction: f64,
    /// Least-squares slope of `log ‖r_λ‖` against `log λ`.
    pub r_slope: f64,
    /// Same for `‖K(φ_λΘ)‖`.
    pub k_slope: f64,
}

impl DecayTable {
    /// `‖r‖` at the largest λ over `‖r‖` at the smallest.
    pub fn end_ratio(&self) -> f64 {
        let a = self.rows.first().map(|r| r.r_norm).unwrap_or(0.0);
        let b = self.rows.last().map(|r| r.r_norm).unwrap_or(0.0);
        if a > 0.0 {
            b / a
        } else {
            0.0
        }
    }

    /// CSV with header `lambda,r_norm,k_norm,slope`; the slope column holds the
    /// local log-log slope of `‖r‖` (empty on the first row).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,r_norm,k_norm,slope\n");
        for (n, r) in self.rows.iter().enumerate() {
            let slope = if n == 0 {
                String::new()
            } else {
                let p = &self.rows[n - 1];
                format!("{:.6}", local_slope(p.lambda, p.r_norm, r.lambda, r.r_norm))
            };
            s.push_str(&format!("{:.6},{:.9e},{:.9e},{}\n", r.lambda, r.r_norm, r.k_norm, slope));
        }
        s
    }
}

fn local_slope(l0: f64, a: f64, l1: f64, b: f64) -> f64 {
    if a > 0.0 && b > 0.0 {
        (b / a).ln() / (l1 / l0).ln()
    } else {
        0.0
    }
}

/// Least-squares slope of `log y` against `log x` over positive entries.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Remainder and scattered-source norms over a λ ladder.
pub fn decay_scan(
    med: &Medium,
    grid: &PhaseGrid,
    lambdas: &[f64],
    phi: ProfileFn,
    kind: PhaseKind,
    opts: &SolverOptions,
) -> Result<DecayTable> {
    if lambdas.len() < 2 {
        return Err(Error::InvalidParameters("decay scan needs at least two lambdas".into()));
    }
    let (lo, hi) = lambdas.iter().fold((f64::INFINITY, 0.0f64), |(a, b), l| (a.min(l.abs()), b.max(l.abs())));
    if hi < 8.0 * lo {
        return Err(Error::InvalidParameters(format!("lambdas span a factor {:.2}; at least 8 is required", hi / lo)));
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidParameters("lambdas must be distinct".into()));
    }
    let mut rows = Vec::with_capacity(sorted.len());
    for &l in &sorted {
        let p = build_go(med, grid, l, phi.clone(), kind, false, opts)?;
        rows.push(DecayRow { lambda: l, r_norm: p.remainder_norm(grid), k_norm: p.scattered_norm(grid), remainder_constant: p.remainder_constant });
    }
    let steps = rows.len() - 1;
    let dec = rows.windows(2).filter(|w| w[1].r_norm < w[0].r_norm).count();
    let ls: Vec<f64> = rows.iter().map(|r| r.lambda.abs()).collect();
    let rn: Vec<f64> = rows.iter().map(|r| r.r_norm).collect();
    let kn: Vec<f64> = rows.iter().map(|r| r.k_norm).collect();
    Ok(DecayTable {
        decreasing_fraction: dec as f64 / steps as f64,
        r_slope: loglog_slope(&ls, &rn),
        k_slope: loglog_slope(&ls, &kn),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;
    use crate::profile::{BoundaryProfile, TimeProfile};
    use approx::assert_abs_diff_eq;

    fn grid() -> PhaseGrid {
        PhaseGrid::build(&Domain::disk(1.0).unwrap(), 1.5, 16, 150, 16).unwrap()
    }

    #[test]
    fn theta_is_one_without_absorption_and_exp_at_center() {
        let g = grid();
        let th = theta_sigma(&Medium::constant(0.0, 0.0, 2).unwrap(), &g, 1.0).unwrap();
        assert!(th.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let med = Medium::constant(1.0, 0.0, 2).unwrap();
        let lead = Leading::new(&g, &med, Arc::new(|_, _| 1.0), 1.0, PhaseKind::Euclidean, false);
        assert_abs_diff_eq!(lead.geometry(PhasePoint::new([0.0, 0.0], 0.3)).unwrap().theta, (-1.0f64).exp(), epsilon = 1e-12);
        let f: Sigma = Sigma::Func(Arc::new(|_, _| 1.0));
        let lead2 = Leading { sigma: f, ..lead };
        assert_abs_diff_eq!(lead2.geometry(PhasePoint::new([0.0, 0.0], 0.3)).unwrap().theta, (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn zero_lambda_rejected_and_no_scattering_gives_no_remainder() {
        let g = grid();
        let med = Medium::constant(0.5, 0.0, 2).unwrap();
        let phi = profile_fn(&g.domain, Profile::constant(1.0));
        let o = SolverOptions::default();
        assert!(matches!(build_go(&med, &g, 0.0, phi.clone(), PhaseKind::Euclidean, false, &o), Err(Error::ZeroLambda)));
        let p = build_go(&med, &g, 5.0, phi, PhaseKind::Euclidean, false, &o).unwrap();
        assert_eq!(p.remainder_norm(&g), 0.0);
    }

    #[test]
    fn riemannian_phase_needs_class_m() {
        let g = grid();
        let med = Medium::constant(0.5, 0.05, 2).unwrap();
        let phi = profile_fn(&g.domain, Profile::constant(1.0));
        let r = build_go(&med, &g, 5.0, phi, PhaseKind::Riemannian, false, &SolverOptions::default());
        assert!(matches!(r, Err(Error::ClassMViolation(_))));
    }

    #[test]
    fn fine_scattering_matches_node_rule_at_low_frequency() {
        let g = PhaseGrid::build(&Domain::disk(1.0).unwrap(), 1.5, 12, 100, 64).unwrap();
        let med = Medium::constant(0.5, 0.1, 2).unwrap();
        let prof = Profile {
            time: TimeProfile::Bump { center: 0.6, half_width: 0.5 },
            boundary: BoundaryProfile::Bump { phi0: 3.0, phi_half: 1.5, alpha0: 0.0, alpha_half: 1.2 },
        };
        let phi = profile_fn(&g.domain, prof);
        let lead = Leading::new(&g, &med, phi, 0.5, PhaseKind::Euclidean, false);
        let frame = Modulation::new(&g, 0.5, PhaseKind::Euclidean).unwrap();
        let fine = scattered_leading(&med, &g, &lead, &frame).unwrap();
        let env = PhaseField::from_fn(&g, |t, p| C64::new(lead.envelope(t, &lead.geometry(p).unwrap()), 0.0));
        let coarse = Transport::new(&g, &med).with_modulation(frame).scatter(&env, false);
        let diff = fine.zip_map(&coarse, |a, b| a - b);
        assert!(diff.l2(&g) < 0.05 * fine.l2(&g), "{} vs {}", diff.l2(&g), fine.l2(&g));
    }
}
