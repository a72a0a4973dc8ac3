//! Inverse problems on top of the forward solver: finite-difference
//! linearisation of the measurement map, the integral identity, light-ray
//! data extracted with concentrated GO probes, recovery of `q` (GO pipeline
//! or direct least squares), the monotonicity certificate and the inverse
//! source problem.

use crate::geometry::{Domain, PhasePoint};
use crate::go::{theta_sigma, Leading, ProfileFn};
use crate::grid::{BoundaryRay, BoundaryTrace, PhaseField, PhaseGrid, RaySet, SpacetimeField, Stencil};
use crate::lsq::{cgls, LinearOperator, LsqOptions};
use crate::media::Medium;
use crate::profile::{boundary_chart, bump, scaled_pulse, unit_pulse, BoundaryProfile, Profile};
use crate::raytransforms::{extended_offset, extended_times, invert_lightray, invert_slices, LightrayOptions, LightrayReport, RayWeight, Sinogram};
use crate::transport::{spatial_phase, BoundaryData, Measurement, Modulation, PhaseEval, PhaseKind, SolverOptions, Transport};
use crate::{par, Error, Result, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

// ---------------------------------------------------------------------------
// finite differences

/// Amplitudes at which the data are scaled for differencing.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonLadder {
    /// Strictly decreasing, positive.
    pub epsilons: Vec<f64>,
    pub m: u32,
}

impl EpsilonLadder {
    pub fn geometric(top: f64, ratio: f64, rungs: usize, m: u32) -> Result<EpsilonLadder> {
        if !(top > 0.0 && top.is_finite()) || !(ratio > 0.0 && ratio < 1.0) || rungs == 0 || m < 2 {
            return Err(Error::InvalidParameters(format!("ladder top {top}, ratio {ratio}, {rungs} rungs, m = {m}")));
        }
        Ok(EpsilonLadder { epsilons: (0..rungs).map(|r| top * ratio.powi(r as i32)).collect(), m })
    }

    /// Ratio ½, four rungs, top rung chosen so that `m·ε·sup = δ`.
    pub fn for_radius(delta: f64, sup: f64, m: u32) -> Result<EpsilonLadder> {
        let sup = if sup > 0.0 { sup } else { 1.0 };
        EpsilonLadder::geometric(delta / (m as f64 * sup), 0.5, 4, m)
    }

    /// Every amplitude `kε`, `k ≤ m`, applied to data of sup norm `sup` must
    /// stay within `δ`.
    pub fn validate(&self, delta: f64, sup: f64) -> Result<()> {
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidParameters("ladder rungs must be positive".into()));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameters("ladder rungs must decrease".into()));
        }
        let top = self.m as f64 * self.epsilons[0] * sup;
        if top > delta * (1.0 + 1e-12) {
            return Err(Error::InvalidParameters(format!("m·ε·‖h‖ = {top:.3e} exceeds the small-data radius {delta:.3e}")));
        }
        Ok(())
    }

    pub fn smallest(&self) -> f64 {
        *self.epsilons.last().unwrap_or(&0.0)
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Weights `(k, c_k)` with `Δ^ℓ_ε F / ℓ! = Σ_{k=1}^{ℓ} c_k F(kε)` when `F(0) = 0`
/// (no factorial for `ℓ = 1`).
pub fn difference_weights(order: u32, eps: f64) -> Vec<(f64, f64)> {
    let fact: f64 = (1..=order).map(|k| k as f64).product();
    (1..=order)
        .map(|k| {
            let sign = if (order - k) % 2 == 0 { 1.0 } else { -1.0 };
            (k as f64, sign * binomial(order, k) / (eps.powi(order as i32) * fact))
        })
        .collect()
}

/// Differenced solution and measurement.
#[derive(Clone, Debug)]
pub struct Linearized {
    pub eps: f64,
    pub order: u32,
    /// In the solver frame of the transport used.
    pub field: PhaseField,
    pub measurement: Measurement,
}

/// `Δ¹_ε f_ε ≈ u` (order 1) or `Δᵐ_ε f_ε / m! ≈ w` (order m) from nonlinear
/// solves at the amplitudes `kε`.
pub fn finite_diff_linearize(t: &Transport, data: &BoundaryData, eps: f64, order: u32, rays: &RaySet) -> Result<Linearized> {
    let mut out = ladder_linearize(t, data, &[eps], order, rays)?;
    Ok(out.remove(0))
}

/// [`finite_diff_linearize`] for several `ε`, sharing solves at equal amplitudes.
pub fn ladder_linearize(t: &Transport, data: &BoundaryData, epsilons: &[f64], order: u32, rays: &RaySet) -> Result<Vec<Linearized>> {
    if order == 0 {
        return Err(Error::InvalidParameters("difference order must be at least 1".into()));
    }
    let mut amps: Vec<f64> = Vec::new();
    for &e in epsilons {
        for k in 1..=order {
            let a = k as f64 * e;
            if !amps.iter().any(|b| (a - b).abs() <= 1e-12 * a) {
                amps.push(a);
            }
        }
    }
    let solved = amps
        .iter()
        .map(|&a| t.measure_on(&data.scaled(a), rays, None).map_err(|e| e.at("ladder rung")))
        .collect::<Result<Vec<_>>>()?;
    let find = |a: f64| amps.iter().position(|b| (a - b).abs() <= 1e-12 * a).unwrap();
    let grid = t.grid;
    Ok(epsilons
        .iter()
        .map(|&e| {
            let mut field = PhaseField::zeros(grid);
            let mut meas = Measurement::zeros(grid, rays);
            for (k, c) in difference_weights(order, e) {
                let (sol, m) = &solved[find(k * e)];
                field.axpy(C64::new(c, 0.0), &sol.field);
                meas = meas.axpy(c, m);
            }
            Linearized { eps: e, order, field, measurement: meas }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// integral identity

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityReport {
    /// `−∫(q₁−q₂) uᵐ ū₀`.
    pub lhs: C64,
    pub boundary: C64,
    pub final_term: C64,
    pub rhs: C64,
    /// `|lhs − rhs| / max(|lhs|, |rhs|)`.
    pub gap: f64,
}

/// Both sides of the integral identity for the difference of two media with
/// the same `σ`, `μ`, `m`: `u` solves the linear problem, `u0` the adjoint one.
pub fn identity_residual(
    grid: &PhaseGrid,
    med1: &Medium,
    med2: &Medium,
    u: &PhaseField,
    u0: &dyn PhaseEval,
    rays: &RaySet,
    opts: &SolverOptions,
) -> Result<IdentityReport> {
    grid.check(u)?;
    if med1.m != med2.m {
        return Err(Error::ShapeMismatch(format!("powers {} and {}", med1.m, med2.m)));
    }
    let qt = q_difference(grid, med1, med2)?;
    let (nt, nx, nth) = (grid.nt, grid.nx(), grid.ntheta);
    let m = med1.m;
    let mut src = PhaseField::zeros(grid);
    par::for_each_chunk(&mut src.data, nt, |s, series| {
        let (j, i) = (s / nx, s % nx);
        for (k, v) in series.iter_mut().enumerate() {
            *v = -(qt.get(k, i) * u.get(k, i, j).powu(m));
        }
    });
    let lhs_parts = par::map_range(nx * nth, |s| {
        let (j, i) = (s / nx, s % nx);
        let p = grid.phase_point(i, j);
        let mut acc = ZERO;
        for k in 0..nt {
            let v = src.get(k, i, j);
            if v != ZERO {
                acc += v * u0.eval(k, p).conj() * grid.time_weight(k);
            }
        }
        acc * grid.nodes.weights[i] * grid.dtheta
    });
    let lhs: C64 = lhs_parts.iter().sum();
    let t = Transport::with_options(grid, &med1.clone().without_q(), opts.clone());
    let zero = BoundaryData::zero();
    let w = t.solve_linear(Some(&src), &zero)?.field;
    let out = t.outgoing(&w, Some(&src), &zero, false, rays)?;
    let boundary: C64 = par::map_range(rays.len(), |r| {
        let p = rays.rays[r].outgoing();
        let mut acc = ZERO;
        for (k, v) in out.series(r).iter().enumerate() {
            if *v != ZERO {
                acc += v * u0.eval(k, p).conj() * grid.time_weight(k);
            }
        }
        acc * rays.rays[r].weight
    })
    .iter()
    .sum();
    let final_term: C64 = par::map_range(nx * nth, |s| {
        let (j, i) = (s / nx, s % nx);
        w.get(nt - 1, i, j) * u0.eval(nt - 1, grid.phase_point(i, j)).conj() * grid.nodes.weights[i] * grid.dtheta
    })
    .iter()
    .sum();
    let rhs = boundary + final_term;
    let scale = lhs.norm().max(rhs.norm());
    let gap = if scale > 0.0 { (lhs - rhs).norm() / scale } else { 0.0 };
    Ok(IdentityReport { lhs, boundary, final_term, rhs, gap })
}

fn q_difference(grid: &PhaseGrid, med1: &Medium, med2: &Medium) -> Result<SpacetimeField> {
    let get = |m: &Medium| -> Result<SpacetimeField> {
        match &m.q {
            None => Ok(SpacetimeField::zeros(grid)),
            Some(q) if q.nt == grid.nt && q.nx == grid.nx() => Ok(q.clone()),
            Some(q) => Err(Error::ShapeMismatch(format!("q is ({}, {}), grid ({}, {})", q.nt, q.nx, grid.nt, grid.nx()))),
        }
    };
    Ok(get(med1)?.sub(&get(med2)?))
}

// ---------------------------------------------------------------------------
// measurement families

/// Source of measurements `𝒜_q(amp·h)`, simulated or read from disk.
pub trait MeasurementFamily: Sync {
    /// Rays on which outgoing data are recorded.
    fn rays(&self) -> &RaySet;
    /// `𝒜_q(amp·data)` for the probe called `id`. `frame` is a numerical hint
    /// for oscillatory data and does not change the result.
    fn measure(&self, id: &str, data: &BoundaryData, amp: f64, frame: Option<&Modulation>) -> Result<Measurement>;
}

/// Measurements produced by the forward solver for a known medium.
pub struct SimulatedFamily<'a> {
    pub grid: &'a PhaseGrid,
    pub medium: Medium,
    pub rays: RaySet,
    pub delta: f64,
    plain: Transport<'a>,
    framed: Mutex<Vec<(u64, Arc<Transport<'a>>)>>,
}

impl<'a> SimulatedFamily<'a> {
    pub fn new(grid: &'a PhaseGrid, medium: &Medium, rays: &RaySet, delta: f64, opts: &SolverOptions) -> SimulatedFamily<'a> {
        SimulatedFamily {
            grid,
            medium: medium.clone(),
            rays: rays.clone(),
            delta,
            plain: Transport::with_options(grid, medium, opts.clone()),
            framed: Mutex::new(Vec::new()),
        }
    }

    fn framed(&self, frame: &Modulation) -> Arc<Transport<'a>> {
        let key = frame.lambda.to_bits() ^ (frame.reversed as u64) ^ ((frame.kind == PhaseKind::Riemannian) as u64) << 1;
        let mut cache = self.framed.lock().unwrap_or_else(|p| p.into_inner());
        if let Some((_, t)) = cache.iter().find(|(k, _)| *k == key) {
            return t.clone();
        }
        let t = Arc::new(Transport::with_options(self.grid, &self.medium, self.plain.opts.clone()).with_modulation(frame.clone()));
        cache.push((key, t.clone()));
        t
    }
}

impl MeasurementFamily for SimulatedFamily<'_> {
    fn rays(&self) -> &RaySet {
        &self.rays
    }

    fn measure(&self, _id: &str, data: &BoundaryData, amp: f64, frame: Option<&Modulation>) -> Result<Measurement> {
        let d = data.scaled(amp).with_bound(self.delta);
        let res = match frame {
            None => self.plain.measure_on(&d, &self.rays, None),
            Some(f) => self.framed(f).measure_on(&d, &self.rays, None),
        };
        Ok(res?.1)
    }
}

/// `Δᵐ_ε 𝒜(εh) / m!` from a family (the reference `𝒜_0` differences vanish
/// identically, since the `q = 0` problem is linear). Also returns the
/// differencing noise floor `Σ|c_k|·max‖𝒜(kεh)‖_∞·tol`.
pub fn differenced_measurement(
    family: &dyn MeasurementFamily,
    id: &str,
    data: &BoundaryData,
    eps: f64,
    m: u32,
    frame: Option<&Modulation>,
    tol: f64,
) -> Result<(Measurement, f64)> {
    let mut acc: Option<Measurement> = None;
    let mut floor = 0.0;
    for (k, c) in difference_weights(m, eps) {
        let meas = family.measure(id, data, k * eps, frame)?;
        floor += c.abs() * meas.max_abs() * (tol + f64::EPSILON);
        acc = Some(match acc {
            None => meas.scaled(c),
            Some(a) => a.axpy(c, &meas),
        });
    }
    Ok((acc.unwrap_or_else(|| unreachable!()), floor))
}

fn add_noise(meas: &mut Measurement, level: f64, rng: &mut ChaCha8Rng) {
    if level <= 0.0 {
        return;
    }
    let s = level * meas.max_abs();
    for v in meas.final_values.iter_mut().chain(meas.outgoing.data.iter_mut()) {
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        *v += C64::new(a, b) * s;
    }
}

// ---------------------------------------------------------------------------
// GO probe plans and light-ray data

/// Targets `(t₀, x₀, v₀)`: every plan ray at every plan time.
#[derive(Clone, Debug)]
pub struct ProbePlan {
    pub rays: RaySet,
    /// Uniform with the grid spacing, covering `[−diam, T]`.
    pub times: Vec<f64>,
    /// Half-widths of the boundary mollifier in `(φ, α)`.
    pub kappa_phi: f64,
    pub kappa_alpha: f64,
    /// Width of the time pulse of the adjoint probe.
    pub zeta: f64,
    pub lambda: f64,
    /// Adjoint frequency, `m·λ`.
    pub eta: f64,
    pub kind: PhaseKind,
}

impl ProbePlan {
    /// Defaults: `κ` four boundary node spacings, `ζ = 4Δt`, times
    /// [`extended_times`].
    pub fn new(grid: &PhaseGrid, rays: &RaySet, lambda: f64, m: u32, kappa: Option<f64>, zeta: Option<f64>, kind: PhaseKind) -> Result<ProbePlan> {
        let kappa = kappa.unwrap_or(4.0 * 2.0 * PI / grid.nodes.n_phi as f64);
        let plan = ProbePlan {
            rays: rays.clone(),
            times: extended_times(grid),
            kappa_phi: kappa,
            kappa_alpha: kappa,
            zeta: zeta.unwrap_or(4.0 * grid.dt),
            lambda,
            eta: m as f64 * lambda,
            kind,
        };
        plan.validate(grid)?;
        Ok(plan)
    }

    pub fn validate(&self, grid: &PhaseGrid) -> Result<()> {
        if self.lambda == 0.0 {
            return Err(Error::ZeroLambda);
        }
        if !(self.kappa_phi > 0.0 && self.kappa_alpha > 0.0 && self.zeta > 0.0) {
            return Err(Error::InvalidParameters(format!("kappa ({}, {}), zeta {} must be positive", self.kappa_phi, self.kappa_alpha, self.zeta)));
        }
        if self.kappa_phi >= PI || self.kappa_alpha >= 0.5 * PI {
            return Err(Error::PlanSupportViolation(format!("mollifier half-widths ({}, {}) too wide", self.kappa_phi, self.kappa_alpha)));
        }
        if self.rays.is_empty() {
            return Err(Error::PlanSupportViolation("no plan rays".into()));
        }
        let n = self.times.len();
        if n < 2 || (self.times[1] - self.times[0] - grid.dt).abs() > 1e-9 * grid.dt {
            return Err(Error::PlanSupportViolation("plan times must be uniform with the grid spacing".into()));
        }
        if self.times[0] > -grid.domain.diameter + 1e-9 || self.times[n - 1] < grid.t_final - 1e-9 {
            return Err(Error::PlanSupportViolation(format!(
                "plan times [{:.3}, {:.3}] must cover [-diam, T] = [{:.3}, {:.3}]",
                self.times[0],
                self.times[n - 1],
                -grid.domain.diameter,
                grid.t_final
            )));
        }
        Ok(())
    }

    /// Mollifier `P_κ` around plan ray `r`, normalised to unit `dξ` mass.
    pub fn mollifier(&self, dom: &Domain, r: usize) -> (BoundaryProfile, f64) {
        let ray = &self.rays.rays[r];
        let prof = BoundaryProfile::Bump { phi0: ray.phi, phi_half: self.kappa_phi, alpha0: ray.alpha, alpha_half: self.kappa_alpha };
        (prof, mollifier_mass(dom, ray, self.kappa_phi, self.kappa_alpha))
    }

    /// Forward probe data `P_κ^{1/m}·e^{iλ(t+p̂)}` on `∂₋SM_T` with the matching
    /// transported initial value.
    pub fn forward_data(&self, grid: &PhaseGrid, med_ref: &Medium, r: usize) -> BoundaryData {
        let (prof, mass) = self.mollifier(&grid.domain, r);
        let m = med_ref.m as f64;
        let dom = grid.domain.clone();
        let root: ProfileFn = Arc::new(move |_, y: PhasePoint| {
            let (phi, alpha) = boundary_chart(&dom, y.x, y.theta);
            (prof.eval_chart(phi, alpha) / mass).powf(1.0 / m)
        });
        let lead = Leading::new(grid, &med_ref.clone().without_q(), root.clone(), self.lambda, self.kind, false);
        let (dom, kind, lambda) = (grid.domain.clone(), self.kind, self.lambda);
        BoundaryData::new(
            Some(Arc::new(move |p| lead.eval(0.0, p).unwrap_or_default())),
            Some(Arc::new(move |t, p| {
                let ph = if kind == PhaseKind::Euclidean { spatial_phase(&dom, kind, p).unwrap_or(0.0) } else { 0.0 };
                C64::from_polar(root(t, p), lambda * (t + ph))
            })),
        )
    }
}

fn mollifier_mass(dom: &Domain, ray: &BoundaryRay, kphi: f64, kalpha: f64) -> f64 {
    let n = 4000;
    let mut a = 0.0;
    for l in 0..n {
        let u = -1.0 + (l as f64 + 0.5) * 2.0 / n as f64;
        a += bump(u) * dom.boundary_length_element(ray.phi + u * kphi);
    }
    a *= 2.0 * kphi / n as f64;
    let mut b = 0.0;
    for l in 0..n {
        let u = -1.0 + (l as f64 + 0.5) * 2.0 / n as f64;
        let alpha = ray.alpha + u * kalpha;
        if alpha.abs() < 0.5 * PI {
            b += bump(u) * alpha.cos();
        }
    }
    b *= 2.0 * kalpha / n as f64;
    a * b
}

/// Sparse pairing `value[n] = −Σ c·data[idx]` of the differenced data with the
/// closed-form adjoint probe of every plan time (the adjoint remainder
/// vanishes at `t = T` and on `∂₊SM_T`, so only the leading term enters).
struct Pairing {
    entries: Vec<(usize, usize, C64)>,
}

impl Pairing {
    fn build(grid: &PhaseGrid, med_ref: &Medium, plan: &ProbePlan, rays: &RaySet) -> Result<Pairing> {
        let (nt, nx, nth) = (grid.nt, grid.nx(), grid.ntheta);
        let lin = med_ref.clone().without_q();
        let lead = Leading::new(grid, &lin, Arc::new(|_, _| 1.0), plan.eta, plan.kind, true);
        let t0 = plan.times[0];
        let dtp = plan.times[1] - plan.times[0];
        let nplan = plan.times.len();
        let reach = (plan.zeta / dtp).ceil() as i64 + 1;
        let push = |t: f64, p: PhasePoint, idx: usize, w: f64, out: &mut Vec<(usize, usize, C64)>| -> Result<()> {
            let g = lead.geometry(p)?;
            let s = t - g.tau_minus;
            let centre = ((s - t0) / dtp).round() as i64;
            for n in (centre - reach).max(0)..=(centre + reach).min(nplan as i64 - 1) {
                let a = scaled_pulse(s, plan.times[n as usize], plan.zeta);
                if a != 0.0 {
                    let u0 = C64::from_polar(a * g.theta, plan.eta * (t + g.phat));
                    out.push((idx, n as usize, u0.conj() * w));
                }
            }
            Ok(())
        };
        let finals = par::map_range(nx * nth, |s| -> Result<Vec<(usize, usize, C64)>> {
            let (j, i) = (s / nx, s % nx);
            let mut v = Vec::new();
            push(grid.t_final, grid.phase_point(i, j), s, grid.nodes.weights[i] * grid.dtheta, &mut v)?;
            Ok(v)
        });
        let outs = par::map_range(rays.len(), |r| -> Result<Vec<(usize, usize, C64)>> {
            let p = rays.rays[r].outgoing();
            let mut v = Vec::new();
            for k in 1..nt {
                push(grid.time(k), p, nx * nth + r * nt + k, rays.rays[r].weight * grid.time_weight(k), &mut v)?;
            }
            Ok(v)
        });
        let mut entries = Vec::new();
        for part in finals.into_iter().chain(outs) {
            entries.extend(part?);
        }
        Ok(Pairing { entries })
    }

    fn apply(&self, meas: &Measurement, nplan: usize) -> Vec<C64> {
        let nf = meas.final_values.len();
        let mut out = vec![ZERO; nplan];
        for &(idx, n, c) in &self.entries {
            let d = if idx < nf { meas.final_values[idx] } else { meas.outgoing.data[idx - nf] };
            out[n] -= c * d;
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct ExtractReport {
    pub eps: f64,
    /// Largest differencing noise floor over the plan rays.
    pub noise_floor: f64,
}

/// Weighted light-ray data `≈ L_W q̃(t₀, x₀, v₀)` with `W = e^{−(m−1)∫σ}` on
/// the plan, from one ladder rung per plan ray.
pub fn extract_lightray_data(
    family: &dyn MeasurementFamily,
    med_ref: &Medium,
    plan: &ProbePlan,
    ladder: &EpsilonLadder,
    grid: &PhaseGrid,
    opts: &SolverOptions,
) -> Result<(Sinogram, ExtractReport)> {
    plan.validate(grid)?;
    let m = med_ref.m;
    let eps = ladder.smallest();
    let frame = Modulation::new(grid, plan.lambda, plan.kind)?;
    let pairing = Pairing::build(grid, med_ref, plan, family.rays()).map_err(|e| e.at("adjoint probe pairing"))?;
    let nplan = plan.times.len();
    let rows = par::map_range(plan.rays.len(), |r| -> Result<(Vec<C64>, f64)> {
        let data = plan.forward_data(grid, med_ref, r);
        let id = format!("go-{r}");
        let (meas, floor) = differenced_measurement(family, &id, &data, eps, m, Some(&frame), opts.tol)?;
        Ok((pairing.apply(&meas, nplan), floor))
    });
    let mut values = Vec::with_capacity(plan.rays.len() * nplan);
    let mut report = ExtractReport { eps, noise_floor: 0.0 };
    for row in rows {
        let (v, f) = row.map_err(|e| e.at("GO probe measurement"))?;
        values.extend(v);
        report.noise_floor = report.noise_floor.max(f);
    }
    let sino = Sinogram { rays: plan.rays.clone(), times: Some(plan.times.clone()), values, weight_id: RayWeight::nonlinear(med_ref).id };
    Ok((sino, report))
}

/// The GO limit of the paired data at finite `κ` and `ζ`: the weighted
/// light-ray transform blurred by the boundary mollifier of each plan ray and
/// by the time pulse of the adjoint probe. Inverting this instead of the plain
/// transform removes the mollifier bias from the GO pipeline.
pub struct MollifiedLightray {
    nrays: usize,
    nx: usize,
    zeta: f64,
    t_start: f64,
    dt: f64,
    /// Per phase node: `(spatial node, τ₋, [(plan ray, coefficient)])`.
    nodes: Vec<(usize, f64, Vec<(u32, f64)>)>,
    /// Interpolation from the unknowns to the solver nodes, when the
    /// unknowns live on a coarser node set.
    basis: Option<Vec<Stencil>>,
}

impl MollifiedLightray {
    pub fn build(grid: &PhaseGrid, med_ref: &Medium, plan: &ProbePlan) -> Result<MollifiedLightray> {
        plan.validate(grid)?;
        let (nx, nth) = (grid.nx(), grid.ntheta);
        let dom = &grid.domain;
        let lin = med_ref.clone().without_q();
        let m = lin.m as i32;
        let fwd = Leading::new(grid, &lin, Arc::new(|_, _| 1.0), 0.0, PhaseKind::Riemannian, false);
        let masses: Vec<f64> = (0..plan.rays.len()).map(|r| plan.mollifier(dom, r).1).collect();
        let nodes = par::map_range(nx * nth, |s| -> Result<(usize, f64, Vec<(u32, f64)>)> {
            let (j, i) = (s / nx, s % nx);
            let g = fwd.geometry(grid.phase_point(i, j))?;
            let (phi, alpha) = boundary_chart(dom, g.entry.x, g.entry.theta);
            // Θ_σ^m Θ_{−σ} = Θ_σ^{m−1}
            let w = g.theta.powi(m - 1) * grid.nodes.weights[i] * grid.dtheta;
            let mut taps = Vec::new();
            for (r, ray) in plan.rays.rays.iter().enumerate() {
                let u = crate::profile::angle_diff(phi, ray.phi) / plan.kappa_phi;
                let v = (alpha - ray.alpha) / plan.kappa_alpha;
                if u.abs() < 1.0 && v.abs() < 1.0 {
                    taps.push((r as u32, bump(u) * bump(v) / masses[r] * w));
                }
            }
            Ok((i, g.tau_minus, taps))
        });
        Ok(MollifiedLightray {
            nrays: plan.rays.len(),
            nx,
            zeta: plan.zeta,
            t_start: plan.times[0],
            dt: plan.times[1] - plan.times[0],
            nodes: nodes.into_iter().collect::<Result<Vec<_>>>()?,
            basis: None,
        })
    }

    /// Unknowns on the nodes of `coarse` (same domain), interpolated to the
    /// solver nodes of `grid`.
    pub fn with_basis(mut self, grid: &PhaseGrid, coarse: &PhaseGrid) -> MollifiedLightray {
        self.basis = Some(prolongation(grid, coarse));
        self.nx = coarse.nx();
        self
    }

    /// `Δt Σ_n pulse(a − t₀ₙ) e^{−iηt₀ₙ}` over the (unbounded) plan lattice.
    fn pulse_spectrum(&self, a: f64, eta: f64) -> C64 {
        let lo = ((a - self.zeta - self.t_start) / self.dt).floor() as i64;
        let hi = ((a + self.zeta - self.t_start) / self.dt).ceil() as i64;
        (lo..=hi)
            .map(|n| {
                let t0 = self.t_start + n as f64 * self.dt;
                C64::from_polar(self.dt * scaled_pulse(a, t0, self.zeta), -eta * t0)
            })
            .sum()
    }

    /// Slice operator at frequency `η`: `A[ray, i] = Σ_θ c·G(−τ₋, η)`.
    pub fn slice(&self, eta: f64, cap: usize) -> Result<crate::raytransforms::DiscreteRayOperator> {
        let mut rows: Vec<Vec<(u32, C64)>> = vec![Vec::new(); self.nrays];
        for (i, tau, taps) in &self.nodes {
            if taps.is_empty() {
                continue;
            }
            let g = self.pulse_spectrum(-tau, eta);
            for &(r, c) in taps {
                match &self.basis {
                    None => rows[r as usize].push((*i as u32, g * c)),
                    Some(b) => rows[r as usize].extend(b[*i].iter().map(|&(n, w)| (n as u32, g * (c * w)))),
                }
            }
        }
        crate::raytransforms::DiscreteRayOperator::from_rows(rows, self.nx, eta, "mollified", cap)
    }

    /// Time-domain evaluation on the plan times, for checks; `q` lives on
    /// the solver nodes.
    pub fn apply(&self, grid: &PhaseGrid, q: &SpacetimeField, times: &[f64]) -> Vec<C64> {
        let nt = grid.nt;
        let mut out = vec![ZERO; self.nrays * times.len()];
        for (i, tau, taps) in &self.nodes {
            for (n, &t0) in times.iter().enumerate() {
                let mut acc = ZERO;
                for k in 0..nt {
                    let a = scaled_pulse(grid.time(k) - tau, t0, self.zeta);
                    if a != 0.0 {
                        acc += q.get(k, *i) * a * grid.time_weight(k);
                    }
                }
                if acc != ZERO {
                    for &(r, c) in taps {
                        out[r as usize * times.len() + n] += acc * c;
                    }
                }
            }
        }
        out
    }
}

/// `P[i] = [(coarse node, weight)]` interpolating coarse nodal values at the
/// fine nodes.
pub fn prolongation(fine: &PhaseGrid, coarse: &PhaseGrid) -> Vec<Stencil> {
    fine.nodes.points.iter().map(|x| coarse.spatial_stencil(*x)).collect()
}

/// `q` on the fine nodes from its values on the coarse nodes.
pub fn prolongate(fine: &PhaseGrid, coarse: &PhaseGrid, q: &SpacetimeField) -> SpacetimeField {
    let p = prolongation(fine, coarse);
    let mut out = SpacetimeField::zeros(fine);
    for (i, st) in p.iter().enumerate() {
        for k in 0..fine.nt {
            out.set(k, i, st.iter().map(|&(n, w)| q.get(k, n) * w).sum());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// recovery of q

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QMode {
    GoPipeline,
    Direct,
}

#[derive(Clone, Debug)]
pub struct QOptions {
    pub mode: QMode,
    pub ladder: EpsilonLadder,
    /// Required in GO mode.
    pub plan: Option<ProbePlan>,
    /// Boundary data of the probing linear solutions in direct mode.
    pub probes: Vec<Profile>,
    pub lsq: LsqOptions,
    pub light: LightrayOptions,
    pub solver: SolverOptions,
    /// Gaussian noise added to the differenced data, relative to its maximum.
    pub noise: f64,
    pub seed: u64,
    /// GO mode: number of nodes of the coarser node set carrying the
    /// unknowns (`None` uses the solver nodes).
    pub inversion_nx: Option<usize>,
}

impl QOptions {
    pub fn direct(ladder: EpsilonLadder) -> QOptions {
        QOptions {
            mode: QMode::Direct,
            ladder,
            plan: None,
            probes: vec![Profile::constant(1.0)],
            lsq: LsqOptions { reg: 1e-6, tol: 1e-6, max_iter: 300, real: true, strict: false },
            light: LightrayOptions::default(),
            solver: SolverOptions::default(),
            noise: 0.0,
            seed: 0,
            inversion_nx: None,
        }
    }

    pub fn go(ladder: EpsilonLadder, plan: ProbePlan) -> QOptions {
        let light = LightrayOptions { energy: 0.9999, lsq: LsqOptions { reg: 3e-5, max_iter: 200, ..LsqOptions::default() }, ..LightrayOptions::default() };
        QOptions { mode: QMode::GoPipeline, plan: Some(plan), light, ..QOptions::direct(ladder) }
    }
}

#[derive(Clone, Debug, Default)]
pub struct QReport {
    pub iterations: usize,
    pub converged: bool,
    pub noise_floor: f64,
    /// Norm of the differenced data used.
    pub data_norm: f64,
    pub lightray: Option<LightrayReport>,
    pub extracted: Option<Sinogram>,
}

/// Recovers `q(t, x)` from measurements of the medium with unknown `q`;
/// `med_ref` carries the known `σ`, `μ`, `m` (its `q` is ignored).
pub fn reconstruct_q(family: &dyn MeasurementFamily, med_ref: &Medium, grid: &PhaseGrid, opts: &QOptions) -> Result<(SpacetimeField, QReport)> {
    let med_ref = med_ref.clone().without_q();
    match opts.mode {
        QMode::GoPipeline => {
            let plan = opts.plan.as_ref().ok_or_else(|| Error::InvalidParameters("GO mode needs a probe plan".into()))?;
            let (mut sino, ext) = extract_lightray_data(family, &med_ref, plan, &opts.ladder, grid, &opts.solver).map_err(|e| e.at("extract light-ray data"))?;
            if opts.noise > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                let s = opts.noise * sino.max_abs();
                for v in &mut sino.values {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    *v += C64::new(a, b) * s;
                }
            }
            let data_norm = sino.norm();
            let op = MollifiedLightray::build(grid, &med_ref, plan)?;
            let (q, rep) = match opts.inversion_nx {
                None => invert_slices(grid, &sino, &opts.light, &|eta| op.slice(eta, opts.light.cap)),
                Some(nc) => {
                    let coarse = PhaseGrid::build(&grid.domain, grid.t_final, grid.nt, nc, grid.ntheta)?;
                    let op = op.with_basis(grid, &coarse);
                    invert_slices(&coarse, &sino, &opts.light, &|eta| op.slice(eta, opts.light.cap)).map(|(q, r)| (prolongate(grid, &coarse, &q), r))
                }
            }
            .map_err(|e| e.at("invert light-ray data"))?;
            let report = QReport {
                iterations: rep.slices.iter().map(|s| s.iterations).max().unwrap_or(0),
                converged: rep.slices.iter().all(|s| s.converged),
                noise_floor: ext.noise_floor,
                data_norm,
                lightray: Some(rep),
                extracted: Some(sino),
            };
            Ok((q, report))
        }
        QMode::Direct => reconstruct_direct(family, &med_ref, grid, opts),
    }
}

fn probe_boundary_data(dom: &Domain, p: Profile) -> BoundaryData {
    let (d0, d1) = (dom.clone(), dom.clone());
    BoundaryData::new(
        Some(Arc::new(move |x: PhasePoint| C64::new(initial_profile(&d0, &p, x), 0.0))),
        Some(Arc::new(move |t, y: PhasePoint| C64::new(p.eval(&d1, t, y.x, y.theta), 0.0))),
    )
}

/// Initial value matching a probe profile: the profile at `t = −τ₋` carried
/// from the entry point (without attenuation; any initial value works, this
/// one keeps the probe smooth across `t = τ₋`).
fn initial_profile(dom: &Domain, p: &Profile, x: PhasePoint) -> f64 {
    match dom.entry_point(x) {
        Ok((e, tm)) => p.eval(dom, -tm, e.x, e.theta),
        Err(_) => 0.0,
    }
}

/// Weighted linear map `q ↦ (w(T), w|_{∂₊})` for every probe, where
/// `w` solves the linear problem with source `−q uᵐ`.
struct DirectOperator<'a> {
    t: Transport<'a>,
    powers: Vec<PhaseField>,
    rays: RaySet,
    sw_q: Vec<f64>,
    sw_final: Vec<f64>,
    sw_out: Vec<f64>,
    err: Mutex<Option<Error>>,
}

impl DirectOperator<'_> {
    fn block(&self) -> usize {
        self.sw_final.len() + self.sw_out.len()
    }

    fn fail(&self, e: Error) {
        let mut g = self.err.lock().unwrap_or_else(|p| p.into_inner());
        if g.is_none() {
            *g = Some(e);
        }
    }

    fn source(&self, x: &[C64], um: &PhaseField) -> PhaseField {
        let grid = self.t.grid;
        let (nt, nx) = (grid.nt, grid.nx());
        let mut s = PhaseField::zeros(grid);
        par::for_each_chunk(&mut s.data, nt, |sidx, series| {
            let (j, i) = (sidx / nx, sidx % nx);
            for (k, v) in series.iter_mut().enumerate() {
                let q = x[i * nt + k] / self.sw_q[i * nt + k];
                *v = -(um.get(k, i, j) * q);
            }
        });
        s
    }
}

impl LinearOperator for DirectOperator<'_> {
    fn rows(&self) -> usize {
        self.powers.len() * self.block()
    }

    fn cols(&self) -> usize {
        self.sw_q.len()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let zero = BoundaryData::zero();
        let nf = self.sw_final.len();
        for (p, um) in self.powers.iter().enumerate() {
            let src = self.source(x, um);
            let res = self.t.solve_linear(Some(&src), &zero).and_then(|sol| {
                let out = self.t.outgoing(&sol.field, Some(&src), &zero, false, &self.rays)?;
                Ok((self.t.final_values(&sol.field), out))
            });
            let yb = &mut y[p * self.block()..(p + 1) * self.block()];
            match res {
                Ok((fin, out)) => {
                    for (n, v) in fin.iter().enumerate() {
                        yb[n] = v * self.sw_final[n];
                    }
                    for (n, v) in out.data.iter().enumerate() {
                        yb[nf + n] = v * self.sw_out[n];
                    }
                }
                Err(e) => {
                    yb.iter_mut().for_each(|v| *v = ZERO);
                    self.fail(e);
                }
            }
        }
    }

    fn apply_adjoint(&self, y: &[C64], x: &mut [C64]) {
        let grid = self.t.grid;
        let (nt, nx, nth) = (grid.nt, grid.nx(), grid.ntheta);
        let nf = self.sw_final.len();
        x.iter_mut().for_each(|v| *v = ZERO);
        for (p, um) in self.powers.iter().enumerate() {
            let yb = &y[p * self.block()..(p + 1) * self.block()];
            let mut yt = PhaseField::zeros(grid);
            for j in 0..nth {
                for i in 0..nx {
                    let n = j * nx + i;
                    yt.set(nt - 1, i, j, yb[n] * self.sw_final[n]);
                }
            }
            let mut yo = BoundaryTrace::zeros(self.rays.len(), nt);
            for (n, v) in yo.data.iter_mut().enumerate() {
                *v = yb[nf + n] * self.sw_out[n];
            }
            let res = self.t.sweep_transpose(&yt).and_then(|mut b| {
                b.axpy(C64::new(1.0, 0.0), &self.t.outgoing_transpose(&yo, &self.rays)?);
                self.t.solve_transpose(&b)
            });
            match res {
                Ok(z) => {
                    let parts = par::map_range(nx, |i| {
                        let mut col = vec![ZERO; nt];
                        for j in 0..nth {
                            for (k, c) in col.iter_mut().enumerate() {
                                *c -= um.get(k, i, j).conj() * z.field.get(k, i, j);
                            }
                        }
                        col
                    });
                    for (i, col) in parts.into_iter().enumerate() {
                        for (k, c) in col.into_iter().enumerate() {
                            x[i * nt + k] += c / self.sw_q[i * nt + k];
                        }
                    }
                }
                Err(e) => self.fail(e),
            }
        }
    }
}

fn reconstruct_direct(family: &dyn MeasurementFamily, med_ref: &Medium, grid: &PhaseGrid, opts: &QOptions) -> Result<(SpacetimeField, QReport)> {
    if opts.probes.is_empty() {
        return Err(Error::InvalidParameters("direct mode needs at least one probe".into()));
    }
    let (nt, nx, nth) = (grid.nt, grid.nx(), grid.ntheta);
    let rays = family.rays().clone();
    let m = med_ref.m;
    let eps = opts.ladder.smallest();
    let t = Transport::with_options(grid, med_ref, opts.solver.clone());
    let mut powers = Vec::new();
    let mut rhs = Vec::new();
    let mut floor = 0.0f64;
    let sw_final: Vec<f64> = (0..nth * nx).map(|n| (grid.nodes.weights[n % nx] * grid.dtheta).sqrt()).collect();
    let mut sw_out = vec![0.0; rays.len() * nt];
    for (r, ray) in rays.rays.iter().enumerate() {
        for k in 0..nt {
            sw_out[r * nt + k] = (ray.weight * grid.time_weight(k)).sqrt();
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for (p, prof) in opts.probes.iter().enumerate() {
        let data = probe_boundary_data(&grid.domain, *prof);
        let u = t.solve_linear(None, &data).map_err(|e| e.at("probe linear solve"))?.field;
        powers.push(u.map(|v| v.powu(m)));
        let (mut meas, f) = differenced_measurement(family, &format!("direct-{p}"), &data, eps, m, None, opts.solver.tol)
            .map_err(|e| e.at("probe measurement"))?;
        add_noise(&mut meas, opts.noise, &mut rng);
        floor = floor.max(f);
        rhs.extend(meas.final_values.iter().zip(&sw_final).map(|(v, w)| v * w));
        rhs.extend(meas.outgoing.data.iter().zip(&sw_out).map(|(v, w)| v * w));
    }
    let mut sw_q = vec![0.0; nx * nt];
    for i in 0..nx {
        for k in 0..nt {
            sw_q[i * nt + k] = (grid.nodes.weights[i] * grid.time_weight(k)).sqrt();
        }
    }
    let op = DirectOperator { t, powers, rays, sw_q, sw_final, sw_out, err: Mutex::new(None) };
    let mut lsq = opts.lsq;
    lsq.real = true;
    let (x, rep) = cgls(&op, &rhs, &lsq).map_err(|e| e.at("direct least squares"))?;
    if let Some(e) = op.err.into_inner().unwrap_or_else(|p| p.into_inner()) {
        return Err(e.at("direct least squares"));
    }
    let mut q = SpacetimeField::zeros(grid);
    for i in 0..nx {
        for k in 0..nt {
            q.set(k, i, C64::new(x[i * nt + k].re / op.sw_q[i * nt + k], 0.0));
        }
    }
    let data_norm = rhs.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    Ok((q, QReport { iterations: rep.iterations, converged: rep.converged, noise_floor: floor, data_norm, lightray: None, extracted: None }))
}

// ---------------------------------------------------------------------------
// inverse source problem

fn interp_final(grid: &PhaseGrid, vals: &[C64], p: PhasePoint) -> C64 {
    let nx = grid.nx();
    let st = grid.spatial_stencil(p.x);
    let mut acc = ZERO;
    for (j, wj) in grid.angular_stencil(p.theta) {
        for &(n, wn) in &st {
            acc += vals[j * nx + n] * (wj * wn);
        }
    }
    acc
}

/// Light-ray data of `S'(t, x) = S(T − t, x)` built from the outgoing and
/// final data of the scattering-free linear problem with zero data: for
/// `t ≤ T` the outgoing trace read backwards in time, for `t > T` the final
/// state carried to the boundary by the free flow.
pub fn source_lightray_data(grid: &PhaseGrid, med: &Medium, data: &Measurement, rays: &RaySet) -> Result<Sinogram> {
    if !med.mu.is_zero() {
        return Err(Error::NonzeroScattering);
    }
    let (nt, nx, nth) = (grid.nt, grid.nx(), grid.ntheta);
    if data.final_values.len() != nx * nth || data.outgoing.nrays != rays.len() || data.outgoing.nt != nt {
        return Err(Error::ShapeMismatch("measurement does not match grid and rays".into()));
    }
    let times = extended_times(grid);
    let off = extended_offset(grid);
    let sigma = med.reversed().sigma;
    let step = grid.ray_step;
    let rows = par::map_range(rays.len(), |r| -> Result<Vec<C64>> {
        let ray = &rays.rays[r];
        let inc = ray.incoming();
        let (tau, _) = grid.domain.exit_times(inc)?;
        let mut row = vec![ZERO; times.len()];
        for (n, v) in row.iter_mut().enumerate() {
            if n >= off && n - off < nt {
                *v = data.outgoing.series(r)[nt - 1 - (n - off)];
            } else if n < off {
                // t = T + s with s = (off - n)·Δt
                let s = (off - n) as f64 * grid.dt;
                if s >= tau {
                    continue;
                }
                let steps = (s / step).ceil().max(1.0) as usize;
                let h = s / steps as f64;
                let mut a = 0.0;
                let mut prev = sigma.eval(inc.x, inc.theta);
                for l in 1..=steps {
                    let q = grid.domain.flow(inc, l as f64 * h);
                    let cur = sigma.eval(q.x, q.theta);
                    a += 0.5 * h * (prev + cur);
                    prev = cur;
                }
                let q = grid.domain.flow(inc, s);
                *v = interp_final(grid, &data.final_values, q.reversed()) * (-a).exp();
            }
        }
        Ok(row)
    });
    let mut values = Vec::with_capacity(rays.len() * times.len());
    for row in rows {
        values.extend(row?);
    }
    Ok(Sinogram { rays: rays.clone(), times: Some(times), values, weight_id: RayWeight::reversed_sigma(med).id })
}

/// Recovers `S(t, x)` from the measurement of the scattering-free linear
/// problem with zero initial and incoming data.
pub fn reconstruct_source(grid: &PhaseGrid, med: &Medium, data: &Measurement, rays: &RaySet, opts: &LightrayOptions) -> Result<(SpacetimeField, LightrayReport)> {
    let sino = source_lightray_data(grid, med, data, rays).map_err(|e| e.at("source light-ray data"))?;
    let (rev, rep) = invert_lightray(grid, &RayWeight::reversed_sigma(med), &sino, opts).map_err(|e| e.at("invert light-ray data"))?;
    let nt = grid.nt;
    let mut out = SpacetimeField::zeros(grid);
    for i in 0..grid.nx() {
        for k in 0..nt {
            out.set(k, i, rev.get(nt - 1 - k, i));
        }
    }
    Ok((out, rep))
}

// ---------------------------------------------------------------------------
// monotonicity

#[derive(Clone, Copy, Debug)]
pub struct MonotonicityOptions {
    /// Time bump centres over `[−diam, T]`.
    pub n_time: usize,
    /// Boundary bump centres in `φ` and `α`.
    pub n_phi: usize,
    pub n_alpha: usize,
    /// Integrals below this certify equality.
    pub tol: f64,
}

impl Default for MonotonicityOptions {
    fn default() -> Self {
        MonotonicityOptions { n_time: 12, n_phi: 16, n_alpha: 6, tol: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Certificate {
    Equal { max_integral: f64 },
    Distinct {
        max_integral: f64,
        /// `(time centre, φ centre, α centre)` of the largest integral.
        profile: (f64, f64, f64),
        /// Time and node index where the back-projected integrals peak.
        time: f64,
        node: usize,
    },
}

/// Evaluates `∫(q₂ − q₁) φ^{m+1} Θ_σ^{m−1}` over a family of nonnegative
/// transported profiles `φ = bump(t − τ₋)·bump(entry chart)`; all vanish iff
/// `q₁ = q₂` (given `q₁ ≤ q₂`).
pub fn monotonicity_check(grid: &PhaseGrid, med1: &Medium, med2: &Medium, opts: &MonotonicityOptions) -> Result<Certificate> {
    let dq = q_difference(grid, med2, med1)?;
    let (nt, nx, nth) = (grid.nt, grid.nx(), grid.ntheta);
    let scale = dq.linf().max(1e-300);
    let mut worst = (0.0f64, 0usize);
    for i in 0..nx {
        for k in 0..nt {
            let d = -dq.get(k, i).re;
            if d > worst.0 {
                worst = (d, i);
            }
        }
    }
    if worst.0 > 1e-12 * scale.max(1.0) {
        return Err(Error::MonotonicityViolated { excess: worst.0, node: worst.1 });
    }
    if opts.n_time == 0 || opts.n_phi == 0 || opts.n_alpha == 0 {
        return Err(Error::InvalidCounts("monotonicity family must be nonempty".into()));
    }
    let m = med1.m as i32;
    let dom = &grid.domain;
    let th = theta_sigma(med1, grid, 1.0)?;
    let lead = Leading::new(grid, &med1.clone().without_q(), Arc::new(|_, _| 1.0), 0.0, PhaseKind::Riemannian, false);
    let geo = par::map_range(nx * nth, |s| -> Result<(f64, f64, f64)> {
        let g = lead.geometry(grid.phase_point(s % nx, s / nx))?;
        let (phi, alpha) = boundary_chart(dom, g.entry.x, g.entry.theta);
        Ok((g.tau_minus, phi, alpha))
    });
    let geo = geo.into_iter().collect::<Result<Vec<_>>>()?;
    let diam = dom.diameter;
    let span = grid.t_final + diam;
    let ct: Vec<f64> = (0..opts.n_time).map(|c| -diam + (c as f64 + 0.5) * span / opts.n_time as f64).collect();
    let ht = 1.5 * span / opts.n_time as f64;
    let cphi: Vec<f64> = (0..opts.n_phi).map(|c| 2.0 * PI * c as f64 / opts.n_phi as f64).collect();
    let hphi = 1.5 * 2.0 * PI / opts.n_phi as f64;
    let calpha: Vec<f64> = (0..opts.n_alpha).map(|c| -0.5 * PI + (c as f64 + 0.5) * PI / opts.n_alpha as f64).collect();
    let halpha = 1.5 * PI / opts.n_alpha as f64;
    let nb = opts.n_phi * opts.n_alpha;
    let bvals = |s: usize| -> Vec<f64> {
        let (_, phi, alpha) = geo[s];
        let mut v = Vec::with_capacity(nb);
        for &p in &cphi {
            let a = bump(crate::profile::angle_diff(phi, p) / hphi);
            for &al in &calpha {
                v.push((a * bump((alpha - al) / halpha)).powi(m + 1));
            }
        }
        v
    };
    let tval = |t: f64, tau: f64, c: f64| bump((t - tau - c) / ht).powi(m + 1);
    // integrals I[c][b]
    let integrals = par::fold_range(
        nx * nth,
        || vec![0.0; opts.n_time * nb],
        |mut acc, s| {
            let (j, i) = (s / nx, s % nx);
            let tau = geo[s].0;
            let w = th[s].powi(m - 1) * grid.nodes.weights[i] * grid.dtheta;
            let b = bvals(s);
            for (c, &tc) in ct.iter().enumerate() {
                let mut sc = 0.0;
                for k in 0..nt {
                    let d = dq.get(k, i).re;
                    if d != 0.0 {
                        sc += d * tval(grid.time(k), tau, tc) * grid.time_weight(k);
                    }
                }
                if sc != 0.0 {
                    for (bi, bv) in b.iter().enumerate() {
                        acc[c * nb + bi] += sc * bv * w;
                    }
                }
            }
            let _ = j;
            acc
        },
        |mut a, b| {
            for (u, v) in a.iter_mut().zip(&b) {
                *u += v;
            }
            a
        },
    );
    let (imax, max_integral) = integrals.iter().enumerate().fold((0, 0.0f64), |acc, (n, v)| if v.abs() > acc.1 { (n, v.abs()) } else { acc });
    if max_integral < opts.tol {
        return Ok(Certificate::Equal { max_integral });
    }
    // back-projection of the integrals onto (t, x)
    let bp = par::map_range(nx, |i| {
        let mut col = vec![0.0; nt];
        for j in 0..nth {
            let s = j * nx + i;
            let tau = geo[s].0;
            let b = bvals(s);
            let w = th[s].powi(m - 1);
            for (c, &tc) in ct.iter().enumerate() {
                let beta: f64 = b.iter().enumerate().map(|(bi, bv)| integrals[c * nb + bi] * bv).sum();
                if beta == 0.0 {
                    continue;
                }
                for (k, v) in col.iter_mut().enumerate() {
                    *v += beta * w * tval(grid.time(k), tau, tc);
                }
            }
        }
        col
    });
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for (i, col) in bp.iter().enumerate() {
        for (k, v) in col.iter().enumerate() {
            if *v > best.0 {
                best = (*v, k, i);
            }
        }
    }
    let (c, b) = (imax / nb, imax % nb);
    Ok(Certificate::Distinct {
        max_integral,
        profile: (ct[c], cphi[b / opts.n_alpha], calpha[b % opts.n_alpha]),
        time: grid.time(best.1),
        node: best.2,
    })
}

/// Unit-mass pulse evaluated on a grid of times, for reports.
pub fn pulse_samples(times: &[f64], t0: f64, zeta: f64) -> Vec<f64> {
    times.iter().map(|t| unit_pulse((t - t0) / zeta) / zeta).collect()
}
