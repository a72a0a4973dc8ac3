//! Characteristic (Duhamel) solvers for
//!
//! ```text
//! ∂ₜf + Xf + σf + q fᵐ = K(f) + S,   f|_{t=0} = h₀,   f|_{∂₋SM_T} = h₋
//! ```
//!
//! and for the adjoint problem. Every sweep traces the characteristic through
//! a target node backwards in steps of `Δt`, so that the source is sampled at
//! time nodes exactly and only interpolated in `(x, θ)`. The integral is the
//! trapezoid rule, closed by a rectangle on the final partial step. Scattering
//! and the nonlinearity are lagged in one fixed-point loop.
//!
//! With a [`Modulation`] the solver works on `g = e^{-iλp} f` where the phase
//! `p` is constant along characteristics; the data, the scattering operator and
//! the nonlinearity are rewritten accordingly, which keeps oscillatory probes
//! off the interpolation path.

use crate::geometry::{Domain, PhasePoint};
use crate::grid::{BoundaryTrace, PhaseField, PhaseGrid, RaySet};
use crate::media::{Kernel, Medium, Sigma};
use crate::{par, Error, Result, C64};
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

pub type InitialFn = Arc<dyn Fn(PhasePoint) -> C64 + Send + Sync>;
pub type IncomingFn = Arc<dyn Fn(f64, PhasePoint) -> C64 + Send + Sync>;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Initial and incoming data. For the adjoint problem the same struct
/// carries the final-time data in `h0` and the outgoing data in `h_minus`.
#[derive(Clone)]
pub struct BoundaryData {
    pub h0: Option<InitialFn>,
    pub h_minus: Option<IncomingFn>,
    /// Small-data radius required by the nonlinear solver.
    pub delta_bound: f64,
}

impl Default for BoundaryData {
    fn default() -> Self {
        BoundaryData::zero()
    }
}

impl fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "BoundaryData {{ h0: {}, h_minus: {}, delta_bound: {} }}",
            self.h0.is_some(),
            self.h_minus.is_some(),
            self.delta_bound
        )
    }
}

impl BoundaryData {
    pub fn zero() -> Self {
        BoundaryData { h0: None, h_minus: None, delta_bound: f64::INFINITY }
    }

    pub fn new(h0: Option<InitialFn>, h_minus: Option<IncomingFn>) -> Self {
        BoundaryData { h0, h_minus, delta_bound: f64::INFINITY }
    }

    /// `h₀ ≡ c`, `h₋ ≡ c`.
    pub fn constant(c: C64) -> Self {
        BoundaryData::new(Some(Arc::new(move |_| c)), Some(Arc::new(move |_, _| c)))
    }

    pub fn with_bound(mut self, delta: f64) -> Self {
        self.delta_bound = delta;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.h0.is_none() && self.h_minus.is_none()
    }

    /// Both data multiplied by `eps`.
    pub fn scaled(&self, eps: f64) -> Self {
        let h0 = self.h0.clone().map(|h| -> InitialFn { Arc::new(move |p| h(p) * eps) });
        let hm = self.h_minus.clone().map(|h| -> IncomingFn { Arc::new(move |t, p| h(t, p) * eps) });
        BoundaryData { h0, h_minus: hm, delta_bound: self.delta_bound }
    }

    /// Sampled `(‖h₀‖_∞, ‖h₋‖_∞)` over grid nodes and the grid's incoming rays.
    pub fn sup_norms(&self, grid: &PhaseGrid) -> (f64, f64) {
        let a = match &self.h0 {
            None => 0.0,
            Some(h) => par::map_range(grid.nx(), |i| {
                (0..grid.ntheta).fold(0.0f64, |m, j| m.max(h(grid.phase_point(i, j)).norm()))
            })
            .into_iter()
            .fold(0.0, f64::max),
        };
        let b = match &self.h_minus {
            None => 0.0,
            Some(h) => par::map_range(grid.boundary_rays.len(), |r| {
                let p = grid.boundary_rays.rays[r].incoming();
                (0..grid.nt).fold(0.0f64, |m, k| m.max(h(grid.time(k), p).norm()))
            })
            .into_iter()
            .fold(0.0, f64::max),
        };
        (a, b)
    }

    /// Data of the reduced forward problem: `h₀'(x,v) = conj h₀(x,-v)` and
    /// `h₋'(t,x,v) = conj h₋(T-t,x,-v)`.
    pub fn reversed(&self, t_final: f64) -> BoundaryData {
        let h0 = self.h0.clone().map(|h| -> InitialFn { Arc::new(move |p: PhasePoint| h(p.reversed()).conj()) });
        let hm = self
            .h_minus
            .clone()
            .map(|h| -> IncomingFn { Arc::new(move |t, p: PhasePoint| h(t_final - t, p.reversed()).conj()) });
        BoundaryData { h0, h_minus: hm, delta_bound: self.delta_bound }
    }
}

/// The value of the measurement map: `f(T)` at the nodes (ordered `[j][i]`)
/// and `f` on the outgoing rays `(y, -w)` of a ray set.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub final_values: Vec<C64>,
    pub outgoing: BoundaryTrace,
}

impl Measurement {
    pub fn zeros(grid: &PhaseGrid, rays: &RaySet) -> Measurement {
        Measurement { final_values: vec![ZERO; grid.nx() * grid.ntheta], outgoing: BoundaryTrace::zeros(rays.len(), grid.nt) }
    }

    /// `self + a·other`.
    pub fn axpy(&self, a: f64, other: &Measurement) -> Measurement {
        let mut out = self.clone();
        for (v, o) in out.final_values.iter_mut().zip(&other.final_values) {
            *v += o * a;
        }
        for (v, o) in out.outgoing.data.iter_mut().zip(&other.outgoing.data) {
            *v += o * a;
        }
        out
    }

    pub fn scaled(&self, a: f64) -> Measurement {
        let mut out = self.clone();
        out.final_values.iter_mut().for_each(|v| *v *= a);
        out.outgoing.data.iter_mut().for_each(|v| *v *= a);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.final_values.iter().chain(&self.outgoing.data).fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Quadrature norm: `∫_{SM}|f(T)|² dΣ + ∫∫_{∂₊}|f|² dξ dt`, square-rooted.
    pub fn norm(&self, grid: &PhaseGrid, rays: &RaySet) -> f64 {
        let mut acc = 0.0;
        for j in 0..grid.ntheta {
            for i in 0..grid.nx() {
                acc += self.final_values[j * grid.nx() + i].norm_sqr() * grid.nodes.weights[i] * grid.dtheta;
            }
        }
        acc += self.outgoing.inner(grid, rays, &self.outgoing).re;
        acc.max(0.0).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.final_values.iter().chain(&self.outgoing.data).all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Which oscillating phase a modulated solve factors out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhaseKind {
    /// `p = t - x·v`
    Euclidean,
    /// `p = t - τ₋(x,v)`
    Riemannian,
}

/// Phase `e^{iλ(t + p̂(x,v))}` with `p̂` tabulated at the nodes.
#[derive(Clone, Debug)]
pub struct Modulation {
    pub lambda: f64,
    pub kind: PhaseKind,
    /// Phase of the velocity-reversed problem: `p̂'(x,v) = −p̂(x,−v)`.
    pub reversed: bool,
    phat: Vec<f64>,
    nx: usize,
}

impl Modulation {
    pub fn new(grid: &PhaseGrid, lambda: f64, kind: PhaseKind) -> Result<Modulation> {
        if kind == PhaseKind::Euclidean && !grid.domain.is_euclidean() {
            return Err(Error::InvalidParameters("the phase t - x.v is not constant along curved geodesics".into()));
        }
        let dom = &grid.domain;
        let vals = par::map_range(grid.ntheta * grid.nx(), |s| {
            let (j, i) = (s / grid.nx(), s % grid.nx());
            spatial_phase(dom, kind, grid.phase_point(i, j))
        });
        let phat = vals.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Modulation { lambda, kind, reversed: false, phat, nx: grid.nx() })
    }

    /// Frame of the reduced (time and velocity reversed) problem.
    pub fn reversed(&self, grid: &PhaseGrid) -> Modulation {
        let mut phat = vec![0.0; self.phat.len()];
        for j in 0..grid.ntheta {
            for i in 0..self.nx {
                phat[j * self.nx + i] = -self.phat(i, grid.reverse_index(j));
            }
        }
        Modulation { lambda: self.lambda, kind: self.kind, reversed: !self.reversed, phat, nx: self.nx }
    }

    /// `p̂` at an arbitrary phase point.
    pub fn phase_at(&self, dom: &Domain, p: PhasePoint) -> Result<f64> {
        if self.reversed {
            Ok(-spatial_phase(dom, self.kind, p.reversed())?)
        } else {
            spatial_phase(dom, self.kind, p)
        }
    }

    #[inline]
    pub fn phat(&self, i: usize, j: usize) -> f64 {
        self.phat[j * self.nx + i]
    }

    /// `e^{iνλ(t + p̂)}`.
    #[inline]
    pub fn factor(&self, nu: f64, t: f64, phat: f64) -> C64 {
        C64::from_polar(1.0, nu * self.lambda * (t + phat))
    }
}

/// Time-independent part `p̂` of the phase: `-x·v` or `-τ₋(x,v)`.
pub fn spatial_phase(dom: &Domain, kind: PhaseKind, p: PhasePoint) -> Result<f64> {
    match kind {
        PhaseKind::Euclidean => {
            let d = p.direction();
            Ok(-(p.x[0] * d[0] + p.x[1] * d[1]))
        }
        PhaseKind::Riemannian => Ok(-dom.exit_times(p)?.1),
    }
}

/// Solver tolerances.
#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Relative update below which the fixed point stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Bytes allowed for caching traced characteristics of the node set.
    pub cache_budget: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-10, max_iter: 200, cache_budget: 512 << 20 }
    }
}

/// Solver output in the solver's frame (demodulated when a modulation is set).
#[derive(Clone, Debug)]
pub struct Solution {
    pub field: PhaseField,
    pub iterations: usize,
    /// Absolute update norms of the fixed-point loop.
    pub updates: Vec<f64>,
    /// Largest ratio of successive update norms (0 when fewer than two updates).
    pub contraction: f64,
    /// `‖f‖_∞ / (‖h₀‖_∞ + ‖h₋‖_∞)` when the data are nonzero.
    pub growth: Option<f64>,
}

/// Discrete PDE residual.
#[derive(Clone, Copy, Debug)]
pub struct ResidualReport {
    pub l2: f64,
    /// `l2` divided by the L² norm of the field over the same nodes.
    pub relative: f64,
    pub linf: f64,
    pub count: usize,
    /// `l2` restricted to nodes with scaled radius at most 0.8. Near
    /// tangential boundary points `∇τ₋` blows up and interpolation loses
    /// order, so refinement studies use this norm.
    pub interior_l2: f64,
}

/// Both sides of the integrated L² energy inequality.
#[derive(Clone, Copy, Debug)]
pub struct EnergyReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs ≤ 1.05·rhs`.
    pub holds: bool,
}

/// Which equation a residual refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Equation {
    Linear,
    Nonlinear,
    /// `∂ₜf + Xf − σf + K*f + S = 0`
    Adjoint,
}

/// Off-grid evaluation of a solution at time node `k`.
pub trait PhaseEval: Sync {
    fn eval(&self, k: usize, p: PhasePoint) -> C64;

    /// Values at every time node.
    fn eval_series(&self, p: PhasePoint, out: &mut [C64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.eval(k, p);
        }
    }
}

/// Interpolation of a sampled field.
pub struct Interpolated<'a> {
    pub grid: &'a PhaseGrid,
    pub field: &'a PhaseField,
}

impl PhaseEval for Interpolated<'_> {
    fn eval(&self, k: usize, p: PhasePoint) -> C64 {
        self.field.interp(self.grid, k, p)
    }
}

/// A source known in closed form: fills the values at all time nodes for one
/// phase point.
pub trait SeriesSource: Sync {
    fn series(&self, p: PhasePoint, out: &mut [C64]);
}

// ---------------------------------------------------------------------------
// characteristic data

#[derive(Clone, Copy, Debug)]
struct Tap {
    l: u32,
    s: u32,
    a: f64,
}

/// Everything a sweep needs about one target: interpolation taps of the
/// samples `l = 0..n` (already multiplied by the attenuation), the sample
/// points, the attenuation factors, and where and when the ray leaves.
#[derive(Clone, Debug)]
struct RayInfo {
    taps: Vec<Tap>,
    points: Vec<PhasePoint>,
    att: Vec<f64>,
    last: usize,
    delta: f64,
    length: f64,
    exit: PhasePoint,
    att_end: f64,
}

fn ray_info(grid: &PhaseGrid, sigma: &Sigma, p: PhasePoint, backward: bool, exact_j: Option<usize>) -> Result<RayInfo> {
    let dt = grid.dt;
    let ch = grid.domain.characteristic(p, dt, backward)?;
    let last = ch.points.len() - 1;
    let delta = (ch.length - last as f64 * dt).max(0.0);
    let n_used = (last + 1).min(grid.nt);
    let sig = |q: &PhasePoint| sigma.eval(q.x, q.theta);
    let mut att = Vec::with_capacity(n_used);
    let mut a = 0.0;
    let mut prev = sig(&ch.points[0]);
    att.push(1.0);
    for l in 1..=last {
        let cur = sig(&ch.points[l]);
        a += 0.5 * dt * (prev + cur);
        prev = cur;
        if l < n_used {
            att.push((-a).exp());
        }
    }
    let a_end = a + 0.5 * delta * (prev + sig(&ch.exit));
    let nx = grid.nx();
    let mut taps = Vec::with_capacity(n_used * 4);
    for (l, q) in ch.points.iter().take(n_used).enumerate() {
        let st = grid.spatial_stencil(q.x);
        let push = |taps: &mut Vec<Tap>, j: usize, wj: f64| {
            for &(n, wn) in &st {
                let w = wj * wn;
                if w != 0.0 {
                    taps.push(Tap { l: l as u32, s: (j * nx + n) as u32, a: w * att[l] });
                }
            }
        };
        match exact_j {
            Some(j) => push(&mut taps, j, 1.0),
            None => {
                for (j, wj) in grid.angular_stencil(q.theta) {
                    if wj != 0.0 {
                        push(&mut taps, j, wj);
                    }
                }
            }
        }
    }
    let mut points = ch.points;
    points.truncate(n_used);
    Ok(RayInfo { taps, points, att, last, delta, length: ch.length, exit: ch.exit, att_end: (-a_end).exp() })
}

/// Adds `a·w_{k,l}·g[k-l]` for all `k ≥ l`, with the trapezoid/rectangle
/// weights of sample `l` on a ray whose last interior sample is `last`.
#[inline]
fn add_segment(l: usize, last: usize, delta: f64, dt: f64, a: f64, g: &[C64], out: &mut [C64]) {
    let nt = out.len();
    if l > 0 {
        out[l] += g[0] * (0.5 * dt * a);
    }
    let (start, w) = if l < last {
        (l + 1, a * if l == 0 { 0.5 * dt } else { dt })
    } else {
        (last + 1, a * (if last > 0 { 0.5 * dt } else { 0.0 } + delta))
    };
    if start < nt {
        let shift = start - l;
        for (o, v) in out[start..].iter_mut().zip(&g[shift..]) {
            *o += v * w;
        }
    }
}

/// Transpose of [`add_segment`].
#[inline]
fn add_segment_t(l: usize, last: usize, delta: f64, dt: f64, a: f64, y: &[C64], gt: &mut [C64]) {
    let nt = y.len();
    if l > 0 {
        gt[0] += y[l] * (0.5 * dt * a);
    }
    let (start, w) = if l < last {
        (l + 1, a * if l == 0 { 0.5 * dt } else { dt })
    } else {
        (last + 1, a * (if last > 0 { 0.5 * dt } else { 0.0 } + delta))
    };
    if start < nt {
        let shift = start - l;
        for (o, v) in gt[shift..].iter_mut().zip(&y[start..]) {
            *o += v * w;
        }
    }
}

fn accumulate(info: &RayInfo, nt: usize, dt: f64, src: &[C64], out: &mut [C64]) {
    for tap in &info.taps {
        let s = tap.s as usize;
        add_segment(tap.l as usize, info.last, info.delta, dt, tap.a, &src[s * nt..(s + 1) * nt], out);
    }
}

fn accumulate_series(info: &RayInfo, dt: f64, src: &dyn SeriesSource, out: &mut [C64]) {
    let mut buf = vec![ZERO; out.len()];
    for (l, q) in info.points.iter().enumerate() {
        buf.iter_mut().for_each(|v| *v = ZERO);
        src.series(*q, &mut buf);
        add_segment(l, info.last, info.delta, dt, info.att[l], &buf, out);
    }
}

type InitRef<'a> = Option<&'a (dyn Fn(PhasePoint) -> C64 + Send + Sync)>;
type BndRef<'a> = Option<&'a (dyn Fn(f64, PhasePoint) -> C64 + Send + Sync)>;

fn data_series(info: &RayInfo, grid: &PhaseGrid, h0: InitRef, hb: BndRef, out: &mut [C64]) {
    for (k, o) in out.iter_mut().enumerate() {
        if k <= info.last {
            if let Some(h) = h0 {
                *o += h(info.points[k]) * info.att[k];
            }
        } else if let Some(h) = hb {
            *o += h(grid.time(k) - info.length, info.exit) * info.att_end;
        }
    }
}

struct ErrSlot(Mutex<Option<Error>>);

impl ErrSlot {
    fn new() -> Self {
        ErrSlot(Mutex::new(None))
    }

    fn put(&self, e: Error) {
        let mut g = self.0.lock().unwrap_or_else(|p| p.into_inner());
        if g.is_none() {
            *g = Some(e);
        }
    }

    fn finish(self) -> Result<()> {
        match self.0.into_inner().unwrap_or_else(|p| p.into_inner()) {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// Characteristics of the node set traced in one direction, optionally cached.
struct Sweeper {
    backward: bool,
    sigma: Sigma,
    budget: usize,
    cache: OnceLock<Option<Arc<Vec<RayInfo>>>>,
}

impl Sweeper {
    fn new(sigma: Sigma, backward: bool, budget: usize) -> Sweeper {
        Sweeper { backward, sigma, budget, cache: OnceLock::new() }
    }

    fn node_target(grid: &PhaseGrid, s: usize) -> (PhasePoint, Option<usize>) {
        let (j, i) = (s / grid.nx(), s % grid.nx());
        let exact = if grid.domain.is_euclidean() { Some(j) } else { None };
        (grid.phase_point(i, j), exact)
    }

    fn info(&self, grid: &PhaseGrid, p: PhasePoint, exact_j: Option<usize>) -> Result<RayInfo> {
        ray_info(grid, &self.sigma, p, self.backward, exact_j)
    }

    fn estimated_bytes(grid: &PhaseGrid) -> usize {
        let targets = grid.nx() * grid.ntheta;
        let samples = (0.6 * (grid.domain.diameter / grid.dt + 2.0)).min(grid.nt as f64) as usize + 1;
        let taps = if grid.domain.is_euclidean() { 4 } else { 8 };
        targets * samples * (taps * std::mem::size_of::<Tap>() + 32)
    }

    fn cached(&self, grid: &PhaseGrid) -> Option<&Arc<Vec<RayInfo>>> {
        self.cache
            .get_or_init(|| {
                if Sweeper::estimated_bytes(grid) > self.budget {
                    return None;
                }
                let infos = par::map_range(grid.nx() * grid.ntheta, |s| {
                    let (p, e) = Sweeper::node_target(grid, s);
                    self.info(grid, p, e).ok()
                });
                infos.into_iter().collect::<Option<Vec<_>>>().map(Arc::new)
            })
            .as_ref()
    }

    /// Runs `f(target, info, series)` for every node target, in parallel.
    fn node_pass<F>(&self, grid: &PhaseGrid, out: &mut PhaseField, f: F) -> Result<()>
    where
        F: Fn(usize, &RayInfo, &mut [C64]) + Sync + Send,
    {
        let cache = self.cached(grid);
        let err = ErrSlot::new();
        par::for_each_chunk(&mut out.data, grid.nt, |s, series| match cache {
            Some(c) => f(s, &c[s], series),
            None => {
                let (p, e) = Sweeper::node_target(grid, s);
                match self.info(grid, p, e) {
                    Ok(info) => f(s, &info, series),
                    Err(e) => err.put(e),
                }
            }
        });
        err.finish()
    }

    /// `Dᵀ y` for node targets.
    fn transpose(&self, grid: &PhaseGrid, y: &PhaseField) -> Result<PhaseField> {
        let nt = grid.nt;
        let nx = grid.nx();
        let dt = grid.dt;
        let cache = self.cached(grid);
        let err = ErrSlot::new();
        let scatter = |s: usize, info: &RayInfo, gt: &mut [C64], offset: usize| {
            let ys = &y.data[s * nt..(s + 1) * nt];
            for tap in &info.taps {
                let b = tap.s as usize * nt - offset;
                add_segment_t(tap.l as usize, info.last, info.delta, dt, tap.a, ys, &mut gt[b..b + nt]);
            }
        };
        let with_info = |s: usize, f: &mut dyn FnMut(&RayInfo)| match cache {
            Some(c) => f(&c[s]),
            None => {
                let (p, e) = Sweeper::node_target(grid, s);
                match self.info(grid, p, e) {
                    Ok(info) => f(&info),
                    Err(e) => err.put(e),
                }
            }
        };
        let out = if grid.domain.is_euclidean() {
            // every tap of a target with direction j stays in block j
            let mut out = PhaseField::zeros(grid);
            par::for_each_chunk(&mut out.data, nx * nt, |j, block| {
                for i in 0..nx {
                    let s = j * nx + i;
                    with_info(s, &mut |info| scatter(s, info, block, j * nx * nt));
                }
            });
            out
        } else {
            par::fold_range(
                nx * grid.ntheta,
                || PhaseField::zeros(grid),
                |mut acc, s| {
                    with_info(s, &mut |info| scatter(s, info, &mut acc.data, 0));
                    acc
                },
                |mut a, b| {
                    a.axpy(C64::new(1.0, 0.0), &b);
                    a
                },
            )
        };
        err.finish()?;
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// scattering

/// `K(f)` (or `K*(f)` when `adjoint`) with the uniform angular rule.
pub fn apply_scattering(grid: &PhaseGrid, mu: &Kernel, f: &PhaseField, adjoint: bool) -> Result<PhaseField> {
    grid.check(f)?;
    Ok(apply_kernel(grid, mu, f, adjoint, None))
}

/// `Σ_{j'} μ(x,θ_j,θ_{j'}) e^{iλ(p̂(x,θ_{j'}) − p̂(x,θ_j))} f(x,θ_{j'}) Δθ`.
fn apply_kernel(grid: &PhaseGrid, mu: &Kernel, f: &PhaseField, adjoint: bool, phase: Option<&Modulation>) -> PhaseField {
    let (nt, nx, nth) = (grid.nt, grid.nx(), grid.ntheta);
    let mut out = PhaseField::zeros(grid);
    if mu.is_zero() {
        return out;
    }
    let rot = |i: usize, j: usize| match phase {
        Some(m) => C64::from_polar(1.0, m.lambda * m.phat(i, j)),
        None => C64::new(1.0, 0.0),
    };
    match mu {
        Kernel::Zero => {}
        Kernel::Isotropic(_) | Kernel::Separable { .. } => {
            let (c, chi): (f64, Option<&crate::media::SigmaFn>) = match mu {
                Kernel::Isotropic(c) => (*c, None),
                Kernel::Separable { c, chi } => (*c, Some(chi)),
                _ => unreachable!(),
            };
            let weight = |i: usize, j: usize| match chi {
                Some(chi) => chi(grid.nodes.points[i], grid.theta(j)),
                None => 1.0,
            };
            let moments = par::map_range(nx, |i| {
                let mut m = vec![ZERO; nt];
                for j in 0..nth {
                    let w = rot(i, j) * (weight(i, j) * grid.dtheta);
                    for (a, v) in m.iter_mut().zip(f.series(i, j)) {
                        *a += v * w;
                    }
                }
                m
            });
            par::for_each_chunk(&mut out.data, nt, |s, series| {
                let (j, i) = (s / nx, s % nx);
                let w = rot(i, j).conj() * (c * weight(i, j));
                for (o, m) in series.iter_mut().zip(&moments[i]) {
                    *o = m * w;
                }
            });
        }
        Kernel::General(kf) => {
            par::for_each_chunk(&mut out.data, nx * nt, |j, block| {
                for i in 0..nx {
                    let x = grid.nodes.points[i];
                    let back = rot(i, j).conj();
                    let series = &mut block[i * nt..(i + 1) * nt];
                    for jp in 0..nth {
                        let m = if adjoint { kf(x, grid.theta(jp), grid.theta(j)) } else { kf(x, grid.theta(j), grid.theta(jp)) };
                        if m == 0.0 {
                            continue;
                        }
                        let w = back * rot(i, jp) * (m * grid.dtheta);
                        for (o, v) in series.iter_mut().zip(f.series(i, jp)) {
                            *o += v * w;
                        }
                    }
                }
            });
        }
    }
    out
}

/// `conj f(T − t, x, −v)` on the grid.
pub fn reverse_conj(grid: &PhaseGrid, f: &PhaseField) -> PhaseField {
    let nt = grid.nt;
    let mut out = PhaseField::zeros(grid);
    par::for_each_chunk(&mut out.data, nt, |s, series| {
        let (j, i) = (s / grid.nx(), s % grid.nx());
        let src = f.series(i, grid.reverse_index(j));
        for (k, o) in series.iter_mut().enumerate() {
            *o = src[nt - 1 - k].conj();
        }
    });
    out
}

fn time_reverse(f: &PhaseField) -> PhaseField {
    let nt = f.nt;
    let mut out = f.clone();
    for series in out.data.chunks_mut(nt) {
        series.reverse();
    }
    out
}

// ---------------------------------------------------------------------------
// solver

/// Solver bound to a grid and a medium.
pub struct Transport<'a> {
    pub grid: &'a PhaseGrid,
    pub medium: Medium,
    pub opts: SolverOptions,
    pub modulation: Option<Modulation>,
    back: Sweeper,
}

impl<'a> Transport<'a> {
    pub fn new(grid: &'a PhaseGrid, medium: &Medium) -> Transport<'a> {
        Transport::with_options(grid, medium, SolverOptions::default())
    }

    pub fn with_options(grid: &'a PhaseGrid, medium: &Medium, opts: SolverOptions) -> Transport<'a> {
        let back = Sweeper::new(medium.sigma.clone(), true, opts.cache_budget);
        Transport { grid, medium: medium.clone(), opts, modulation: None, back }
    }

    /// Switches to the demodulated frame `g = e^{-iλp} f`.
    pub fn modulated(mut self, lambda: f64, kind: PhaseKind) -> Result<Transport<'a>> {
        self.modulation = Some(Modulation::new(self.grid, lambda, kind)?);
        Ok(self)
    }

    pub fn with_modulation(mut self, m: Modulation) -> Transport<'a> {
        self.modulation = Some(m);
        self
    }

    fn check_q(&self) -> Result<()> {
        if let Some(q) = &self.medium.q {
            if q.nt != self.grid.nt || q.nx != self.grid.nx() {
                return Err(Error::ShapeMismatch(format!("q is ({}, {}), grid ({}, {})", q.nt, q.nx, self.grid.nt, self.grid.nx())));
            }
        }
        Ok(())
    }

    /// `K` (or `K*`) in the solver frame.
    pub fn scatter(&self, f: &PhaseField, adjoint: bool) -> PhaseField {
        apply_kernel(self.grid, &self.medium.mu, f, adjoint, self.modulation.as_ref())
    }

    /// Contribution of the data to the solution, in the solver frame.
    pub fn data_field(&self, data: &BoundaryData) -> Result<PhaseField> {
        let grid = self.grid;
        let mut out = PhaseField::zeros(grid);
        if data.is_zero() {
            return Ok(out);
        }
        let (h0, hb) = (data.h0.as_deref(), data.h_minus.as_deref());
        self.back.node_pass(grid, &mut out, |s, info, series| {
            data_series(info, grid, h0, hb, series);
            if let Some(m) = &self.modulation {
                let ph = m.phat(s % grid.nx(), s / grid.nx());
                for (k, v) in series.iter_mut().enumerate() {
                    *v *= m.factor(-1.0, grid.time(k), ph);
                }
            }
        })?;
        Ok(out)
    }

    /// Duhamel integral `D(src)` with zero data.
    pub fn sweep(&self, src: &PhaseField) -> Result<PhaseField> {
        self.grid.check(src)?;
        let mut out = PhaseField::zeros(self.grid);
        self.sweep_into(&mut out, Some(src), None)?;
        Ok(out)
    }

    /// Transpose of [`Transport::sweep`] with respect to the plain sample
    /// inner product (unmodulated).
    pub fn sweep_transpose(&self, y: &PhaseField) -> Result<PhaseField> {
        self.grid.check(y)?;
        self.back.transpose(self.grid, y)
    }

    /// `D(src)` for a source given in closed form, sampled on the traced
    /// points rather than interpolated from nodes.
    pub fn sweep_series(&self, src: &dyn SeriesSource) -> Result<PhaseField> {
        let grid = self.grid;
        let mut out = PhaseField::zeros(grid);
        self.back.node_pass(grid, &mut out, |_, info, series| accumulate_series(info, grid.dt, src, series))?;
        Ok(out)
    }

    /// `D(src)` at an arbitrary phase point, all time nodes.
    pub fn sweep_series_at(&self, p: PhasePoint, src: &dyn SeriesSource) -> Result<Vec<C64>> {
        let info = self.back.info(self.grid, p, None)?;
        let mut out = vec![ZERO; self.grid.nt];
        accumulate_series(&info, self.grid.dt, src, &mut out);
        Ok(out)
    }

    /// Adds `D(zlin) + e^{i(m-1)λp} D(znl)` to `out`.
    fn sweep_into(&self, out: &mut PhaseField, zlin: Option<&PhaseField>, znl: Option<&PhaseField>) -> Result<()> {
        let grid = self.grid;
        let (nt, dt) = (grid.nt, grid.dt);
        let nu = self.medium.m as f64 - 1.0;
        self.back.node_pass(grid, out, |s, info, series| {
            if let Some(z) = zlin {
                accumulate(info, nt, dt, &z.data, series);
            }
            if let Some(z) = znl {
                match &self.modulation {
                    None => accumulate(info, nt, dt, &z.data, series),
                    Some(m) => {
                        let mut tmp = vec![ZERO; nt];
                        accumulate(info, nt, dt, &z.data, &mut tmp);
                        let ph = m.phat(s % grid.nx(), s / grid.nx());
                        for (k, (o, v)) in series.iter_mut().zip(&tmp).enumerate() {
                            *o += v * m.factor(nu, grid.time(k), ph);
                        }
                    }
                }
            }
        })
    }

    /// `−q fᵐ` at the nodes (solver frame, before the phase factor).
    fn nonlinear_term(&self, f: &PhaseField) -> Option<PhaseField> {
        let q = self.medium.q.as_ref()?;
        let m = self.medium.m;
        let grid = self.grid;
        let mut out = PhaseField::zeros(grid);
        par::for_each_chunk(&mut out.data, grid.nt, |s, series| {
            let (j, i) = (s / grid.nx(), s % grid.nx());
            for (k, (o, v)) in series.iter_mut().zip(f.series(i, j)).enumerate() {
                *o = -(q.get(k, i) * v.powu(m));
            }
        });
        Some(out)
    }

    /// Scattered and nonlinear sources of one fixed-point step.
    fn step_sources(&self, f: &PhaseField, nonlinear: bool, adjoint: bool) -> (Option<PhaseField>, Option<PhaseField>) {
        let mut zlin = if self.medium.mu.is_zero() { None } else { Some(self.scatter(f, adjoint)) };
        let znl = if nonlinear { self.nonlinear_term(f) } else { None };
        if self.modulation.is_none() {
            if let Some(z) = znl {
                match &mut zlin {
                    Some(a) => a.axpy(C64::new(1.0, 0.0), &z),
                    None => zlin = Some(z),
                }
                return (zlin, None);
            }
        }
        (zlin, znl)
    }

    fn fixed_point(
        &self,
        base: PhaseField,
        nonlinear: bool,
        warm: Option<&PhaseField>,
        step: &dyn Fn(&PhaseField, &mut PhaseField, bool) -> Result<()>,
    ) -> Result<Solution> {
        let scattering = !self.medium.mu.is_zero();
        if !scattering && !nonlinear {
            return Ok(Solution { field: base, iterations: 1, updates: vec![], contraction: 0.0, growth: None });
        }
        let mut f = warm.cloned().unwrap_or_else(|| base.clone());
        let mut updates = Vec::new();
        let mut rel = f64::INFINITY;
        for it in 1..=self.opts.max_iter {
            let mut new = base.clone();
            step(&f, &mut new, nonlinear)?;
            let diff = new.data.iter().zip(&f.data).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let nn = new.vec_norm();
            rel = if nn > 0.0 { diff / nn } else { diff };
            updates.push(diff);
            f = new;
            if !rel.is_finite() || !f.is_finite() {
                return Err(Error::NoConvergence { iterations: it, last_update: rel });
            }
            if rel < self.opts.tol {
                let contraction = updates
                    .windows(2)
                    .filter(|w| w[0] > 0.0)
                    .map(|w| w[1] / w[0])
                    .fold(0.0, f64::max);
                return Ok(Solution { field: f, iterations: it, updates, contraction, growth: None });
            }
        }
        Err(Error::NoConvergence { iterations: self.opts.max_iter, last_update: rel })
    }

    /// Linear (`nonlinear = false`) or nonlinear solve with an optional
    /// source, optionally warm-started.
    pub fn solve(&self, source: Option<&PhaseField>, data: &BoundaryData, nonlinear: bool, warm: Option<&PhaseField>) -> Result<Solution> {
        let grid = self.grid;
        if let Some(s) = source {
            grid.check(s)?;
        }
        if let Some(w) = warm {
            grid.check(w)?;
        }
        self.check_q()?;
        let nonlinear = nonlinear && self.medium.has_q();
        let norms = data.sup_norms(grid);
        if nonlinear && (norms.0 > data.delta_bound * (1.0 + 1e-12) || norms.1 > data.delta_bound * (1.0 + 1e-12)) {
            return Err(Error::InvalidParameters(format!(
                "data norms ({:.3e}, {:.3e}) exceed the small-data radius {:.3e}",
                norms.0, norms.1, data.delta_bound
            )));
        }
        let mut base = self.data_field(data)?;
        if let Some(s) = source {
            self.sweep_into(&mut base, Some(s), None)?;
        }
        let step = |f: &PhaseField, new: &mut PhaseField, nl: bool| {
            let (a, b) = self.step_sources(f, nl, false);
            self.sweep_into(new, a.as_ref(), b.as_ref())
        };
        let mut sol = self.fixed_point(base, nonlinear, warm, &step)?;
        if norms.0 + norms.1 > 0.0 {
            sol.growth = Some(sol.field.linf() / (norms.0 + norms.1));
        }
        Ok(sol)
    }

    /// Scattering-free solve; errors if `μ ≠ 0`.
    pub fn solve_scattering_free(&self, source: Option<&PhaseField>, data: &BoundaryData) -> Result<PhaseField> {
        if !self.medium.mu.is_zero() {
            return Err(Error::NonzeroScattering);
        }
        Ok(self.solve(source, data, false, None)?.field)
    }

    pub fn solve_linear(&self, source: Option<&PhaseField>, data: &BoundaryData) -> Result<Solution> {
        self.solve(source, data, false, None)
    }

    pub fn solve_nonlinear(&self, data: &BoundaryData) -> Result<Solution> {
        self.solve(None, data, true, None)
    }

    /// Adjoint problem by reduction to a forward solve: reverse time and
    /// velocity, conjugate, solve, map back. `data.h0` is the final-time data
    /// and `data.h_minus` the data on `∂₊SM_T`.
    pub fn solve_adjoint(&self, source: Option<&PhaseField>, data: &BoundaryData) -> Result<Solution> {
        if self.modulation.is_some() {
            return Err(Error::InvalidParameters("adjoint solves run unmodulated".into()));
        }
        let grid = self.grid;
        let rev = Transport::with_options(grid, &self.medium.reversed(), self.opts.clone());
        let s2 = source.map(|s| reverse_conj(grid, s));
        let mut sol = rev.solve(s2.as_ref(), &data.reversed(grid.t_final), false, None)?;
        sol.field = reverse_conj(grid, &sol.field);
        Ok(sol)
    }

    /// Adjoint problem swept directly forward along characteristics with the
    /// transposed kernel.
    pub fn solve_adjoint_direct(&self, source: Option<&PhaseField>, data: &BoundaryData) -> Result<Solution> {
        if self.modulation.is_some() {
            return Err(Error::InvalidParameters("adjoint solves run unmodulated".into()));
        }
        let grid = self.grid;
        let (nt, dt) = (grid.nt, grid.dt);
        let fwd = Sweeper::new(self.medium.sigma.clone(), false, self.opts.cache_budget);
        let t_final = grid.t_final;
        let h0 = data.h0.as_deref();
        let hm = data.h_minus.clone();
        let hb_march = hm.map(|h| move |tau: f64, p: PhasePoint| h(t_final - tau, p));
        let hb: BndRef = hb_march.as_ref().map(|h| h as &(dyn Fn(f64, PhasePoint) -> C64 + Send + Sync));
        let s_rev = source.map(time_reverse);
        let mut base = PhaseField::zeros(grid);
        fwd.node_pass(grid, &mut base, |_, info, series| {
            data_series(info, grid, h0, hb, series);
            if let Some(s) = &s_rev {
                accumulate(info, nt, dt, &s.data, series);
            }
        })?;
        let step = |f: &PhaseField, new: &mut PhaseField, _: bool| {
            let z = self.scatter(f, true);
            fwd.node_pass(grid, new, |_, info, series| accumulate(info, nt, dt, &z.data, series))
        };
        let mut sol = self.fixed_point(base, false, None, &step)?;
        sol.field = time_reverse(&sol.field);
        Ok(sol)
    }

    /// Solution value in the physical frame at node `(k, i, j)`.
    fn physical(&self, f: &PhaseField, k: usize, i: usize, j: usize) -> C64 {
        let v = f.get(k, i, j);
        match &self.modulation {
            None => v,
            Some(m) => v * m.factor(1.0, self.grid.time(k), m.phat(i, j)),
        }
    }

    /// `f(T)` at the nodes, physical frame, ordered `[j][i]`.
    pub fn final_values(&self, f: &PhaseField) -> Vec<C64> {
        let grid = self.grid;
        let mut out = Vec::with_capacity(grid.nx() * grid.ntheta);
        for j in 0..grid.ntheta {
            for i in 0..grid.nx() {
                out.push(self.physical(f, grid.nt - 1, i, j));
            }
        }
        out
    }

    /// Outgoing trace `f(t, y, −w)` on `rays`, physical frame, from a
    /// converged solution (evaluated by Duhamel at the boundary points).
    pub fn outgoing(&self, f: &PhaseField, source: Option<&PhaseField>, data: &BoundaryData, nonlinear: bool, rays: &RaySet) -> Result<BoundaryTrace> {
        let grid = self.grid;
        let (nt, dt) = (grid.nt, grid.dt);
        let nonlinear = nonlinear && self.medium.has_q();
        let (mut zlin, znl) = self.step_sources(f, nonlinear, false);
        if let Some(s) = source {
            match &mut zlin {
                Some(z) => z.axpy(C64::new(1.0, 0.0), s),
                None => zlin = Some(s.clone()),
            }
        }
        let (h0, hb) = (data.h0.as_deref(), data.h_minus.as_deref());
        let nu = self.medium.m as f64 - 1.0;
        let rows = par::map_range(rays.len(), |r| -> Result<Vec<C64>> {
            let p = rays.rays[r].outgoing();
            let info = self.back.info(grid, p, None)?;
            let mut phys = vec![ZERO; nt];
            data_series(&info, grid, h0, hb, &mut phys);
            let mut lin = vec![ZERO; nt];
            if let Some(z) = &zlin {
                accumulate(&info, nt, dt, &z.data, &mut lin);
            }
            match &self.modulation {
                None => {
                    for (a, b) in phys.iter_mut().zip(&lin) {
                        *a += b;
                    }
                }
                Some(m) => {
                    let ph = match (m.kind, m.reversed) {
                        (PhaseKind::Riemannian, false) => -info.length,
                        _ => m.phase_at(&grid.domain, p)?,
                    };
                    let mut nl = vec![ZERO; nt];
                    if let Some(z) = &znl {
                        accumulate(&info, nt, dt, &z.data, &mut nl);
                    }
                    for k in 0..nt {
                        let t = grid.time(k);
                        phys[k] += m.factor(1.0, t, ph) * (lin[k] + m.factor(nu, t, ph) * nl[k]);
                    }
                }
            }
            Ok(phys)
        });
        let mut out = BoundaryTrace::zeros(rays.len(), nt);
        for (r, row) in rows.into_iter().enumerate() {
            out.series_mut(r).copy_from_slice(&row?);
        }
        Ok(out)
    }

    /// Transpose of the source-to-outgoing-trace map `S ↦ outgoing(·, S)` with
    /// zero data and no scattering, for plain sample inner products.
    pub fn outgoing_transpose(&self, y: &BoundaryTrace, rays: &RaySet) -> Result<PhaseField> {
        if self.modulation.is_some() {
            return Err(Error::InvalidParameters("transposes run unmodulated".into()));
        }
        let grid = self.grid;
        let (nt, dt) = (grid.nt, grid.dt);
        if y.nrays != rays.len() || y.nt != nt {
            return Err(Error::ShapeMismatch(format!("trace ({}, {}) vs {} rays x {} times", y.nrays, y.nt, rays.len(), nt)));
        }
        let err = ErrSlot::new();
        let out = par::fold_range(
            rays.len(),
            || PhaseField::zeros(grid),
            |mut acc, r| {
                match self.back.info(grid, rays.rays[r].outgoing(), None) {
                    Ok(info) => {
                        let ys = y.series(r);
                        for tap in &info.taps {
                            let b = tap.s as usize * nt;
                            add_segment_t(tap.l as usize, info.last, info.delta, dt, tap.a, ys, &mut acc.data[b..b + nt]);
                        }
                    }
                    Err(e) => err.put(e),
                }
                acc
            },
            |mut a, b| {
                a.axpy(C64::new(1.0, 0.0), &b);
                a
            },
        );
        err.finish()?;
        Ok(out)
    }

    /// Solves `z = b + Dᵀ Kᵀ z`, the transpose of the total-source equation
    /// `Z = S + K D Z` behind every linear solve.
    pub fn solve_transpose(&self, b: &PhaseField) -> Result<Solution> {
        if self.modulation.is_some() {
            return Err(Error::InvalidParameters("transposes run unmodulated".into()));
        }
        self.grid.check(b)?;
        let step = |z: &PhaseField, new: &mut PhaseField, _: bool| -> Result<()> {
            let kz = self.scatter(z, true);
            let d = self.sweep_transpose(&kz)?;
            new.axpy(C64::new(1.0, 0.0), &d);
            Ok(())
        };
        self.fixed_point(b.clone(), false, None, &step)
    }

    /// Runs the nonlinear solve and extracts the measurement on the grid's
    /// boundary rays.
    pub fn measure(&self, data: &BoundaryData) -> Result<(Solution, Measurement)> {
        self.measure_on(data, &self.grid.boundary_rays, None)
    }

    pub fn measure_on(&self, data: &BoundaryData, rays: &RaySet, warm: Option<&PhaseField>) -> Result<(Solution, Measurement)> {
        let sol = self.solve(None, data, true, warm)?;
        let outgoing = self.outgoing(&sol.field, None, data, true, rays)?;
        let m = Measurement { final_values: self.final_values(&sol.field), outgoing };
        Ok((sol, m))
    }

    /// Upwind residual along characteristics, evaluating the solution off the
    /// grid by interpolation.
    pub fn residual(&self, f: &PhaseField, source: Option<&PhaseField>, eq: Equation) -> Result<ResidualReport> {
        self.residual_with(f, &Interpolated { grid: self.grid, field: f }, source, eq)
    }

    /// Residual `(F(t_k,x) − F(t_{k−1}, ρ(−Δt)))/Δt + G(t_k,x)` at nodes with
    /// `k ≥ 1` and `τ₋ ≥ Δt`, where `G` collects the zeroth-order terms.
    pub fn residual_with(&self, f: &PhaseField, eval: &dyn PhaseEval, source: Option<&PhaseField>, eq: Equation) -> Result<ResidualReport> {
        let grid = self.grid;
        grid.check(f)?;
        self.check_q()?;
        let (nt, dt) = (grid.nt, grid.dt);
        let adjoint = eq == Equation::Adjoint;
        let mut g = self.scatter(f, adjoint);
        g.scale(C64::new(if adjoint { 1.0 } else { -1.0 }, 0.0));
        if let Some(s) = source {
            g.axpy(C64::new(if adjoint { 1.0 } else { -1.0 }, 0.0), s);
        }
        if eq == Equation::Nonlinear {
            if let Some(z) = self.nonlinear_term(f) {
                let nu = self.medium.m as f64 - 1.0;
                par::for_each_chunk(&mut g.data, nt, |s, series| {
                    let (j, i) = (s / grid.nx(), s % grid.nx());
                    let zs = z.series(i, j);
                    for k in 0..nt {
                        let ph = match &self.modulation {
                            Some(m) => m.factor(nu, grid.time(k), m.phat(i, j)),
                            None => C64::new(1.0, 0.0),
                        };
                        series[k] -= zs[k] * ph;
                    }
                });
            }
        }
        let sign = if adjoint { -1.0 } else { 1.0 };
        let parts = par::map_range(grid.nx() * grid.ntheta, |s| -> Result<(f64, f64, f64, usize, f64)> {
            let (j, i) = (s / grid.nx(), s % grid.nx());
            let p = grid.phase_point(i, j);
            let tau_m = grid.domain.exit_times(p)?.1;
            if tau_m < dt {
                return Ok((0.0, 0.0, 0.0, 0, 0.0));
            }
            let inner = grid.domain.scaled_polar(p.x).0 <= 0.8 + 1e-12;
            let prev = grid.domain.flow(p, -dt);
            let sig = self.medium.sigma.eval(p.x, p.theta);
            let fs = f.series(i, j);
            let gs = g.series(i, j);
            let mut back = vec![ZERO; nt];
            eval.eval_series(prev, &mut back);
            let w = grid.nodes.weights[i] * grid.dtheta;
            let (mut e2, mut n2, mut inf, mut cnt) = (0.0, 0.0, 0.0f64, 0);
            for k in 1..nt {
                let r = (fs[k] - back[k - 1]) / dt + fs[k] * (sign * sig) + gs[k];
                let tw = grid.time_weight(k) * w;
                e2 += r.norm_sqr() * tw;
                n2 += fs[k].norm_sqr() * tw;
                inf = inf.max(r.norm());
                cnt += 1;
            }
            Ok((e2, n2, inf, cnt, if inner { e2 } else { 0.0 }))
        });
        let (mut e2, mut n2, mut inf, mut cnt, mut i2) = (0.0, 0.0, 0.0f64, 0, 0.0);
        for p in parts {
            let p = p?;
            e2 += p.0;
            n2 += p.1;
            inf = inf.max(p.2);
            cnt += p.3;
            i2 += p.4;
        }
        let l2 = e2.sqrt();
        Ok(ResidualReport { l2, relative: if n2 > 0.0 { l2 / n2.sqrt() } else { l2 }, linf: inf, count: cnt, interior_l2: i2.sqrt() })
    }

    /// Integrated L² energy inequality for a linear solution `f` (unmodulated):
    /// `E(T) − E(0) + ∫∫_{∂₊}|f|² + 2∫∫σ|f|² ≤ ∫∫_{∂₋}|h₋|² + ∫∫|S|² + (1+2σ₀)∫E`.
    pub fn energy_check(&self, f: &PhaseField, source: Option<&PhaseField>, data: &BoundaryData) -> Result<EnergyReport> {
        let grid = self.grid;
        let rays = &grid.boundary_rays;
        let nt = grid.nt;
        let energy = |k: usize| -> f64 {
            let mut e = 0.0;
            for j in 0..grid.ntheta {
                for i in 0..grid.nx() {
                    e += f.get(k, i, j).norm_sqr() * grid.nodes.weights[i];
                }
            }
            e * grid.dtheta
        };
        let out = self.outgoing(f, source, data, false, rays)?;
        let outflow = out.inner(grid, rays, &out).re;
        let mut inflow = 0.0;
        if let Some(h) = &data.h_minus {
            for ray in &rays.rays {
                for k in 0..nt {
                    inflow += h(grid.time(k), ray.incoming()).norm_sqr() * grid.time_weight(k) * ray.weight;
                }
            }
        }
        let mut absorbed = 0.0;
        let mut src2 = 0.0;
        for j in 0..grid.ntheta {
            for i in 0..grid.nx() {
                let sig = self.medium.sigma.eval(grid.nodes.points[i], grid.theta(j));
                let w = grid.nodes.weights[i] * grid.dtheta;
                for k in 0..nt {
                    absorbed += 2.0 * sig * f.get(k, i, j).norm_sqr() * w * grid.time_weight(k);
                    if let Some(s) = source {
                        src2 += s.get(k, i, j).norm_sqr() * w * grid.time_weight(k);
                    }
                }
            }
        }
        let e_int: f64 = (0..nt).map(|k| energy(k) * grid.time_weight(k)).sum();
        let lhs = energy(nt - 1) - energy(0) + outflow + absorbed;
        let rhs = inflow + src2 + (1.0 + 2.0 * self.medium.sigma0) * e_int;
        Ok(EnergyReport { lhs, rhs, holds: lhs <= 1.05 * rhs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Domain;
    use approx::assert_abs_diff_eq;

    fn grid() -> PhaseGrid {
        PhaseGrid::build(&Domain::disk(1.0).unwrap(), 1.0, 17, 200, 16).unwrap()
    }

    #[test]
    fn constant_data_is_preserved() {
        let g = grid();
        let med = Medium::constant(0.0, 0.0, 2).unwrap();
        let t = Transport::new(&g, &med);
        let f = t.solve_scattering_free(None, &BoundaryData::constant(C64::new(0.7, 0.0))).unwrap();
        assert!(f.data.iter().all(|v| (v - 0.7).norm() < 1e-14));
    }

    #[test]
    fn unit_source_gives_min_of_time_and_exit() {
        let g = grid();
        let med = Medium::constant(0.0, 0.0, 2).unwrap();
        let t = Transport::new(&g, &med);
        let s = PhaseField::from_fn(&g, |_, _| C64::new(1.0, 0.0));
        let f = t.solve_scattering_free(Some(&s), &BoundaryData::zero()).unwrap();
        for j in 0..g.ntheta {
            for i in 0..g.nx() {
                let tm = g.domain.exit_times(g.phase_point(i, j)).unwrap().1;
                for k in 0..g.nt {
                    assert_abs_diff_eq!(f.get(k, i, j).re, g.time(k).min(tm), epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn scattering_of_constant_is_two_pi_mu() {
        let g = grid();
        let f = PhaseField::from_fn(&g, |_, _| C64::new(1.0, 0.0));
        let k = apply_scattering(&g, &Kernel::Isotropic(0.3), &f, false).unwrap();
        assert!(k.data.iter().all(|v| (v.re - 2.0 * std::f64::consts::PI * 0.3).abs() < 1e-12));
    }

    #[test]
    fn transpose_matches_sweep() {
        let g = PhaseGrid::build(&Domain::disk(1.0).unwrap(), 1.0, 9, 60, 8).unwrap();
        let med = Medium::constant(0.4, 0.0, 2).unwrap();
        let t = Transport::new(&g, &med);
        let a = PhaseField::from_fn(&g, |tt, p| C64::new((3.0 * p.x[0] + tt).sin(), p.theta.cos()));
        let b = PhaseField::from_fn(&g, |tt, p| C64::new(p.x[1] * tt, (2.0 * p.theta).sin()));
        let da = t.sweep(&a).unwrap();
        let dtb = t.sweep_transpose(&b).unwrap();
        let lhs: C64 = da.data.iter().zip(&b.data).map(|(x, y)| x * y).sum();
        let rhs: C64 = a.data.iter().zip(&dtb.data).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0));
    }
}
