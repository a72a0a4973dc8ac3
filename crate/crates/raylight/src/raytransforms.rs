//! Attenuated X-ray and weighted light ray transforms over the boundary ray
//! set, their sparse discretisation, and least-squares inversion (the light
//! ray transform is inverted one time frequency at a time).

use crate::geometry::{PhasePoint, Point};
use crate::grid::{PhaseGrid, RaySet, SpacetimeField, TimeFft};
use crate::lsq::{cgls, LinearOperator, LsqOptions, LsqReport};
use crate::media::{Medium, Sigma};
use crate::{par, Error, Result, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Default cap on assembled operator entries.
pub const DEFAULT_OPERATOR_CAP: usize = 50_000_000;

/// Weight `W(ρ(s)) = exp(-scale ∫₀^s rate(ρ(r)) dr)` along each ray; the
/// attenuated X-ray transform uses `scale = 1`, `rate = ω`.
#[derive(Clone, Debug)]
pub struct RayWeight {
    pub rate: Sigma,
    pub scale: f64,
    pub id: String,
}

impl RayWeight {
    pub fn none() -> RayWeight {
        RayWeight { rate: Sigma::Constant(0.0), scale: 0.0, id: "W=1".into() }
    }

    pub fn attenuation(omega: Sigma) -> RayWeight {
        let id = match &omega {
            Sigma::Constant(c) => format!("omega={c}"),
            Sigma::Func(_) => "omega=field".into(),
        };
        RayWeight { rate: omega, scale: 1.0, id }
    }

    /// `W = e^{-(m-1)∫σ}`.
    pub fn nonlinear(med: &Medium) -> RayWeight {
        let scale = med.m as f64 - 1.0;
        RayWeight { rate: med.sigma.clone(), scale, id: format!("W=exp(-{scale}*int sigma)") }
    }

    /// `W = e^{-∫σ(x,-v)}`, the weight seen by a reversed outgoing ray.
    pub fn reversed_sigma(med: &Medium) -> RayWeight {
        let rate = med.reversed().sigma;
        RayWeight { rate, scale: 1.0, id: "W=exp(-int sigma(x,-v))".into() }
    }

    fn rate_at(&self, p: PhasePoint) -> f64 {
        self.scale * self.rate.eval(p.x, p.theta)
    }
}

/// Quadrature nodes along one ray: arclength, trapezoid weight times `W`, and
/// position.
#[derive(Clone, Debug)]
pub struct RaySamples {
    pub tau: f64,
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    pub points: Vec<PhasePoint>,
}

/// Ray quadratures for a ray set and weight, shared by the transforms and the
/// assembled operators.
#[derive(Clone, Debug)]
pub struct RayQuadrature {
    pub rays: RaySet,
    pub samples: Vec<RaySamples>,
    pub weight_id: String,
}

impl RayQuadrature {
    pub fn build(grid: &PhaseGrid, rays: &RaySet, weight: &RayWeight) -> Result<RayQuadrature> {
        let samples = par::map_range(rays.len(), |r| -> Result<RaySamples> {
            let path = grid.domain.trace_geodesic(rays.rays[r].incoming(), grid.ray_step)?;
            let n = path.nodes.len();
            let s: Vec<f64> = path.nodes.iter().map(|(s, _)| *s).collect();
            let points: Vec<PhasePoint> = path.nodes.iter().map(|(_, p)| *p).collect();
            let rate: Vec<f64> = points.iter().map(|p| weight.rate_at(*p)).collect();
            let mut w = vec![0.0; n];
            let mut log_att = 0.0;
            for l in 0..n {
                if l > 0 {
                    log_att += 0.5 * (s[l] - s[l - 1]) * (rate[l] + rate[l - 1]);
                }
                let left = if l > 0 { s[l] - s[l - 1] } else { 0.0 };
                let right = if l + 1 < n { s[l + 1] - s[l] } else { 0.0 };
                w[l] = 0.5 * (left + right) * (-log_att).exp();
            }
            Ok(RaySamples { tau: path.tau_fwd, s, w, points })
        });
        let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(RayQuadrature { rays: rays.clone(), samples, weight_id: weight.id.clone() })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `∫₀^τ f(s, ρ(s)) e^{iηs} W ds` for every ray.
    pub fn integrate<F: Fn(f64, PhasePoint) -> C64 + Sync + Send>(&self, eta: f64, f: F) -> Vec<C64> {
        par::map_range(self.len(), |r| {
            let q = &self.samples[r];
            q.s.iter()
                .zip(&q.w)
                .zip(&q.points)
                .map(|((s, w), p)| f(*s, *p) * C64::from_polar(*w, eta * s))
                .sum()
        })
    }
}

/// Transform values on a ray set, static (`times = None`, one value per ray)
/// or time dependent (`values[ray * nt + n]` at `times[n]`).
#[derive(Clone, Debug)]
pub struct Sinogram {
    pub rays: RaySet,
    pub times: Option<Vec<f64>>,
    pub values: Vec<C64>,
    pub weight_id: String,
}

impl Sinogram {
    pub fn nt(&self) -> usize {
        self.times.as_ref().map_or(1, |t| t.len())
    }

    pub fn series(&self, r: usize) -> &[C64] {
        let nt = self.nt();
        &self.values[r * nt..(r + 1) * nt]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// `(Σ_r w_r Σ_n |g|² Δt)^{1/2}` with the ray weights (Δt = 1 when static).
    pub fn norm(&self) -> f64 {
        let dt = match &self.times {
            Some(t) if t.len() > 1 => t[1] - t[0],
            _ => 1.0,
        };
        let nt = self.nt();
        let mut acc = 0.0;
        for (r, ray) in self.rays.rays.iter().enumerate() {
            acc += ray.weight * self.values[r * nt..(r + 1) * nt].iter().map(|v| v.norm_sqr()).sum::<f64>() * dt;
        }
        acc.sqrt()
    }

    pub fn sub(&self, other: &Sinogram) -> Result<Sinogram> {
        if self.values.len() != other.values.len() {
            return Err(Error::ShapeMismatch(format!("sinograms of {} and {} values", self.values.len(), other.values.len())));
        }
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a -= b;
        }
        Ok(out)
    }
}

/// Times `t₀ + nΔt` covering `[-diam, T + diam]` and containing the grid times.
pub fn extended_times(grid: &PhaseGrid) -> Vec<f64> {
    let pad = (grid.domain.diameter / grid.dt - 1e-9).ceil() as usize;
    let n = grid.nt + 2 * pad;
    (0..n).map(|k| (k as f64 - pad as f64) * grid.dt).collect()
}

/// Offset of time node 0 in [`extended_times`].
pub fn extended_offset(grid: &PhaseGrid) -> usize {
    (grid.domain.diameter / grid.dt - 1e-9).ceil() as usize
}

fn interp_nodes(grid: &PhaseGrid, s: &[C64], x: Point) -> C64 {
    grid.spatial_stencil(x).iter().map(|(n, w)| s[*n] * w).sum()
}

/// `I_ω S(y,w) = ∫₀^τ S(γ(s)) e^{-∫₀^s ω} ds` for `S` sampled at the spatial
/// nodes, on the grid's boundary rays.
pub fn xray_attenuated(grid: &PhaseGrid, omega: &RayWeight, s: &[C64]) -> Result<Sinogram> {
    if s.len() != grid.nx() {
        return Err(Error::ShapeMismatch(format!("{} samples for {} nodes", s.len(), grid.nx())));
    }
    let quad = RayQuadrature::build(grid, &grid.boundary_rays, omega)?;
    Ok(xray_with(&quad, 0.0, |_, p| interp_nodes(grid, s, p.x)))
}

/// Transform of a function given pointwise, with the extra oscillating weight
/// `e^{iηs}` (`η = 0` is the plain attenuated transform).
pub fn xray_with<F: Fn(f64, PhasePoint) -> C64 + Sync + Send>(quad: &RayQuadrature, eta: f64, f: F) -> Sinogram {
    Sinogram { rays: quad.rays.clone(), times: None, values: quad.integrate(eta, f), weight_id: quad.weight_id.clone() }
}

/// `L_W S(t,y,w) = ∫₀^τ S(t+s, γ(s)) W ds` at the given times, with `S`
/// extended by zero outside `[0,T]`.
pub fn lightray_weighted(grid: &PhaseGrid, weight: &RayWeight, s: &SpacetimeField, times: &[f64]) -> Result<Sinogram> {
    if s.nt != grid.nt || s.nx != grid.nx() {
        return Err(Error::ShapeMismatch(format!("source ({}, {}) vs grid ({}, {})", s.nt, s.nx, grid.nt, grid.nx())));
    }
    let quad = RayQuadrature::build(grid, &grid.boundary_rays, weight)?;
    Ok(lightray_with(&quad, times, |t, p| s.interp(grid, t, p.x)))
}

/// Light ray transform of a function given pointwise in `(t, ρ)`.
pub fn lightray_with<F: Fn(f64, PhasePoint) -> C64 + Sync + Send>(quad: &RayQuadrature, times: &[f64], f: F) -> Sinogram {
    let nt = times.len();
    let rows = par::map_range(quad.len(), |r| {
        let q = &quad.samples[r];
        times
            .iter()
            .map(|t| q.s.iter().zip(&q.w).zip(&q.points).map(|((s, w), p)| f(t + s, *p) * *w).sum::<C64>())
            .collect::<Vec<C64>>()
    });
    let mut values = Vec::with_capacity(quad.len() * nt);
    for row in rows {
        values.extend(row);
    }
    Sinogram { rays: quad.rays.clone(), times: Some(times.to_vec()), values, weight_id: quad.weight_id.clone() }
}

/// Sparse ray-by-node matrix in compressed rows.
#[derive(Clone, Debug)]
pub struct DiscreteRayOperator {
    pub nrays: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<C64>,
    pub eta: f64,
    pub weight_id: String,
}

impl DiscreteRayOperator {
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[C64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn row_sums(&self) -> Vec<C64> {
        (0..self.nrays).map(|r| self.row(r).1.iter().sum()).collect()
    }
}

impl LinearOperator for DiscreteRayOperator {
    fn rows(&self) -> usize {
        self.nrays
    }
    fn cols(&self) -> usize {
        self.ncols
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let out = par::map_range(self.nrays, |r| {
            let (c, v) = self.row(r);
            c.iter().zip(v).map(|(c, v)| v * x[*c as usize]).sum::<C64>()
        });
        y.copy_from_slice(&out);
    }
    fn apply_adjoint(&self, y: &[C64], x: &mut [C64]) {
        let acc = par::fold_range(
            self.nrays,
            || vec![ZERO; self.ncols],
            |mut acc, r| {
                let (c, v) = self.row(r);
                for (c, v) in c.iter().zip(v) {
                    acc[*c as usize] += v.conj() * y[r];
                }
                acc
            },
            |mut a, b| {
                for (u, v) in a.iter_mut().zip(&b) {
                    *u += v;
                }
                a
            },
        );
        x.copy_from_slice(&acc);
    }
}

/// Assembles `A[ray, node] = Σ_s e^{iηs} W(s) Δs · (interpolation weight)`.
pub fn assemble_operator(grid: &PhaseGrid, quad: &RayQuadrature, eta: f64, cap: usize) -> Result<DiscreteRayOperator> {
    let rows = par::map_range(quad.len(), |r| {
        let q = &quad.samples[r];
        let mut entries: Vec<(u32, C64)> = Vec::with_capacity(4 * q.s.len());
        for ((s, w), p) in q.s.iter().zip(&q.w).zip(&q.points) {
            let f = C64::from_polar(*w, eta * s);
            for (n, a) in grid.spatial_stencil(p.x) {
                if a != 0.0 {
                    entries.push((n as u32, f * a));
                }
            }
        }
        entries
    });
    DiscreteRayOperator::from_rows(rows, grid.nx(), eta, &quad.weight_id, cap)
}

impl DiscreteRayOperator {
    /// CSR assembly from unsorted `(column, value)` rows; repeated columns are summed.
    pub fn from_rows(rows: Vec<Vec<(u32, C64)>>, ncols: usize, eta: f64, weight_id: &str, cap: usize) -> Result<DiscreteRayOperator> {
        let rows = par::map_range(rows.len(), |r| {
            let mut entries = rows[r].clone();
            entries.sort_unstable_by_key(|e| e.0);
            let mut merged: Vec<(u32, C64)> = Vec::with_capacity(entries.len());
            for (c, v) in entries {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            merged
        });
        let nnz: usize = rows.iter().map(|r| r.len()).sum();
        if nnz > cap {
            return Err(Error::MemoryBudgetExceeded { needed: nnz, cap });
        }
        if rows.iter().flatten().any(|(c, _)| *c as usize >= ncols) {
            return Err(Error::ShapeMismatch(format!("column index beyond {ncols}")));
        }
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in &rows {
            for &(c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Ok(DiscreteRayOperator { nrays: rows.len(), ncols, row_ptr, cols, vals, eta, weight_id: weight_id.to_string() })
    }
}

/// Rows scaled by the square roots of the ray weights so the data misfit
/// approximates the `L²(∂₋SM, dξ)` norm.
struct RowWeighted<'a> {
    op: &'a DiscreteRayOperator,
    sw: Vec<f64>,
}

impl LinearOperator for RowWeighted<'_> {
    fn rows(&self) -> usize {
        self.op.nrays
    }
    fn cols(&self) -> usize {
        self.op.ncols
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.op.apply(x, y);
        for (v, w) in y.iter_mut().zip(&self.sw) {
            *v *= w;
        }
    }
    fn apply_adjoint(&self, y: &[C64], x: &mut [C64]) {
        let yw: Vec<C64> = y.iter().zip(&self.sw).map(|(v, w)| v * w).collect();
        self.op.apply_adjoint(&yw, x);
    }
}

fn weighted_solve(op: &DiscreteRayOperator, rays: &RaySet, data: &[C64], opts: &LsqOptions) -> Result<(Vec<C64>, LsqReport)> {
    let sw: Vec<f64> = rays.rays.iter().map(|r| r.weight.sqrt()).collect();
    let b: Vec<C64> = data.iter().zip(&sw).map(|(v, w)| v * w).collect();
    cgls(&RowWeighted { op, sw }, &b, opts)
}

/// Regularised least-squares inverse of an assembled operator for static data.
pub fn invert_xray(op: &DiscreteRayOperator, data: &Sinogram, opts: &LsqOptions) -> Result<(Vec<C64>, LsqReport)> {
    if data.times.is_some() || data.values.len() != op.nrays || data.rays.len() != op.nrays {
        return Err(Error::ShapeMismatch(format!("sinogram with {} values for an operator with {} rays", data.values.len(), op.nrays)));
    }
    weighted_solve(op, &data.rays, &data.values, opts)
}

#[derive(Clone, Copy, Debug)]
pub struct LightrayOptions {
    pub lsq: LsqOptions,
    /// Fraction of the data energy carried by the retained frequencies.
    pub energy: f64,
    /// Zero-padding factor of the time FFT.
    pub pad: usize,
    pub cap: usize,
}

impl Default for LightrayOptions {
    fn default() -> Self {
        LightrayOptions { lsq: LsqOptions::default(), energy: 0.999, pad: 2, cap: DEFAULT_OPERATOR_CAP }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceReport {
    pub eta: f64,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
}

#[derive(Clone, Debug, Default)]
pub struct LightrayReport {
    pub slices: Vec<SliceReport>,
    pub total_bins: usize,
    /// Largest imaginary part before it was discarded, relative to the output.
    pub imag_ratio: f64,
}

/// Frequency-sliced inversion: each retained time frequency `η` of the data
/// is an attenuated X-ray problem with weight `e^{iηs}W`; the reconstructions
/// are transformed back and the real part on the grid times is returned.
pub fn invert_lightray(grid: &PhaseGrid, weight: &RayWeight, data: &Sinogram, opts: &LightrayOptions) -> Result<(SpacetimeField, LightrayReport)> {
    let quad = RayQuadrature::build(grid, &data.rays, weight)?;
    invert_slices(grid, data, opts, &|eta| assemble_operator(grid, &quad, eta, opts.cap))
}

/// Frequency-sliced inversion with a caller-supplied slice operator
/// (`rays × nodes`) for each frequency `η`.
pub fn invert_slices(
    grid: &PhaseGrid,
    data: &Sinogram,
    opts: &LightrayOptions,
    slice: &(dyn Fn(f64) -> Result<DiscreteRayOperator> + Sync),
) -> Result<(SpacetimeField, LightrayReport)> {
    let times = data.times.as_ref().ok_or_else(|| Error::ShapeMismatch("light ray data must be time dependent".into()))?;
    let fft = TimeFft::for_times(times, opts.pad)?;
    let offset = ((-times[0]) / fft.dt).round();
    if (times[0] + offset * fft.dt).abs() > 1e-9 * fft.dt || offset < 0.0 || (offset as usize) + grid.nt > times.len() {
        return Err(Error::ShapeMismatch("light ray times must contain the grid times".into()));
    }
    if (fft.dt - grid.dt).abs() > 1e-9 * grid.dt {
        return Err(Error::NonUniformGrid);
    }
    let offset = offset as usize;
    let nrays = data.rays.len();
    if data.values.len() != nrays * times.len() {
        return Err(Error::ShapeMismatch(format!("{} values for {} rays x {} times", data.values.len(), nrays, times.len())));
    }
    // spectra[ray][bin]
    let spectra = par::map_range(nrays, |r| fft.forward(data.series(r)));
    let nb = fft.n_pad;
    let mut energy = vec![0.0; nb];
    for (r, sp) in spectra.iter().enumerate() {
        let w = data.rays.rays[r].weight;
        for (e, v) in energy.iter_mut().zip(sp) {
            *e += w * v.norm_sqr();
        }
    }
    let total: f64 = energy.iter().sum();
    let mut out = SpacetimeField::zeros(grid);
    let mut report = LightrayReport { total_bins: nb, ..Default::default() };
    if total == 0.0 {
        return Ok((out, report));
    }
    let real_data = data.values.iter().all(|v| v.im.abs() <= 1e-14 * (1.0 + v.re.abs()));
    let mut order: Vec<usize> = (0..nb).collect();
    order.sort_by(|a, b| energy[*b].total_cmp(&energy[*a]).then(a.cmp(b)));
    let mut keep = vec![false; nb];
    let mut acc = 0.0;
    for &k in &order {
        if acc >= opts.energy * total {
            break;
        }
        keep[k] = true;
        acc += energy[k];
    }
    if real_data {
        for k in 0..nb {
            if keep[k] {
                keep[fft.mirror(k)] = true;
            }
        }
    }
    // with real data only one bin of each mirror pair is solved
    let solve: Vec<usize> = (0..nb).filter(|&k| keep[k] && (!real_data || k <= fft.mirror(k))).collect();
    let results = par::map_range(solve.len(), |n| -> Result<(Vec<C64>, LsqReport)> {
        let k = solve[n];
        let op = slice(fft.freq(k))?;
        if op.nrays != nrays || op.ncols != grid.nx() {
            return Err(Error::ShapeMismatch(format!("slice operator is {} x {}, expected {} x {}", op.nrays, op.ncols, nrays, grid.nx())));
        }
        let b: Vec<C64> = (0..nrays).map(|r| spectra[r][k]).collect();
        weighted_solve(&op, &data.rays, &b, &opts.lsq)
    });
    let mut spec_nodes = vec![vec![ZERO; nb]; grid.nx()];
    for (n, res) in results.into_iter().enumerate() {
        let k = solve[n];
        let (x, rep) = res.map_err(|e| e.at("light ray frequency slice"))?;
        report.slices.push(SliceReport {
            eta: fft.freq(k),
            energy: energy[k] / total,
            iterations: rep.iterations,
            converged: rep.converged,
            relative_residual: rep.relative_residual,
        });
        let km = fft.mirror(k);
        for (i, v) in x.into_iter().enumerate() {
            spec_nodes[i][k] = v;
            if real_data && km != k {
                spec_nodes[i][km] = v.conj();
            }
        }
    }
    let series = par::map_range(grid.nx(), |i| fft.inverse(&spec_nodes[i]));
    let (mut imag, mut real) = (0.0f64, 0.0f64);
    for (i, s) in series.iter().enumerate() {
        for k in 0..grid.nt {
            let v = s[offset + k];
            imag = imag.max(v.im.abs());
            real = real.max(v.re.abs());
            out.set(k, i, C64::new(v.re, 0.0));
        }
    }
    report.imag_ratio = if real > 0.0 { imag / real } else { imag };
    Ok((out, report))
}
