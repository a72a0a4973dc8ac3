//! Phase-space discretisation: polar spatial nodes, uniform angles and times,
//! boundary ray sets with their `dξ` weights, sampled fields, quadrature and
//! the time Fourier transform.

use crate::geometry::{wrap_angle, Domain, PhasePoint, Point, TANGENTIAL_CUTOFF};
use crate::{par, Error, Result, C64};
use rustfft::{Fft, FftPlanner};
use smallvec::SmallVec;
use std::f64::consts::PI;
use std::sync::Arc;

/// Interpolation weights over spatial node indices.
pub type Stencil = SmallVec<[(usize, f64); 4]>;

/// Polar nodes in scaled coordinates: a centre node plus `n_r` rings of
/// `n_phi` nodes, the outermost ring lying on the boundary. Weights are the
/// areas of the surrounding annular cells (times `e^{2c}` on conformal
/// domains), which sum to the metric area.
#[derive(Clone, Debug)]
pub struct SpatialNodes {
    pub n_r: usize,
    pub n_phi: usize,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl SpatialNodes {
    fn build(dom: &Domain, n_target: usize) -> Result<SpatialNodes> {
        if n_target < 4 {
            return Err(Error::InvalidCounts(format!("N_x = {n_target} < 4")));
        }
        let n_r = ((n_target as f64 / (2.0 * PI)).sqrt().round() as usize).max(1);
        let n_phi = (((n_target - 1) as f64 / n_r as f64).round() as usize).max(4);
        let (a, b) = dom.semi_axes();
        let h = 1.0 / n_r as f64;
        let mut points = vec![[0.0, 0.0]];
        let mut weights = vec![PI * (0.5 * h).powi(2) * a * b];
        for i in 1..=n_r {
            let rho = i as f64 * h;
            let ring_area = if i < n_r {
                2.0 * PI * rho * h
            } else {
                PI * (1.0 - (1.0 - 0.5 * h).powi(2))
            };
            for k in 0..n_phi {
                let phi = 2.0 * PI * k as f64 / n_phi as f64;
                points.push(dom.from_scaled_polar(rho, phi));
                weights.push(ring_area * a * b / n_phi as f64);
            }
        }
        for (w, x) in weights.iter_mut().zip(&points) {
            *w *= dom.area_density(*x);
        }
        Ok(SpatialNodes { n_r, n_phi, points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn node(&self, ring: usize, k: usize) -> usize {
        1 + (ring - 1) * self.n_phi + (k % self.n_phi)
    }

    /// Bilinear weights in `(ρ, φ)`; inside the first ring the centre node
    /// and the first ring are blended linearly in `ρ`.
    pub fn stencil(&self, dom: &Domain, x: Point) -> Stencil {
        let (rho, phi) = dom.scaled_polar(x);
        let u = (rho.min(1.0)) * self.n_r as f64;
        let i0 = (u.floor() as usize).min(self.n_r - 1);
        let fr = u - i0 as f64;
        let v = phi / (2.0 * PI) * self.n_phi as f64;
        let k0 = (v.floor() as usize) % self.n_phi;
        let fa = v - v.floor();
        let mut s = Stencil::new();
        if i0 == 0 {
            s.push((0, 1.0 - fr));
            s.push((self.node(1, k0), fr * (1.0 - fa)));
            s.push((self.node(1, k0 + 1), fr * fa));
        } else {
            s.push((self.node(i0, k0), (1.0 - fr) * (1.0 - fa)));
            s.push((self.node(i0, k0 + 1), (1.0 - fr) * fa));
            s.push((self.node(i0 + 1, k0), fr * (1.0 - fa)));
            s.push((self.node(i0 + 1, k0 + 1), fr * fa));
        }
        s
    }

    /// Scaled ring index of a node (0 for the centre).
    pub fn ring_of(&self, i: usize) -> usize {
        if i == 0 {
            0
        } else {
            1 + (i - 1) / self.n_phi
        }
    }
}

/// An incoming boundary ray `(y, w) ∈ ∂₋SM` with its `dξ` weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryRay {
    /// Boundary parameter of `y`.
    pub phi: f64,
    /// Angle between `w` and the inward normal.
    pub alpha: f64,
    pub y: Point,
    /// Direction angle of `w`.
    pub theta: f64,
    /// `|⟨ν,w⟩| dℓ_g dθ` for this sample.
    pub weight: f64,
}

impl BoundaryRay {
    pub fn incoming(&self) -> PhasePoint {
        PhasePoint { x: self.y, theta: self.theta }
    }

    /// The reversed ray `(y, -w) ∈ ∂₊SM`.
    pub fn outgoing(&self) -> PhasePoint {
        PhasePoint::new(self.y, self.theta + PI)
    }
}

/// Sampled subset of `∂₋SM` with quadrature weights.
#[derive(Clone, Debug, Default)]
pub struct RaySet {
    pub rays: Vec<BoundaryRay>,
    /// Number of boundary positions used to build the set.
    pub n_boundary: usize,
}

impl RaySet {
    /// Midpoint product rule in (boundary parameter, incidence angle).
    pub fn product(dom: &Domain, n_boundary: usize, n_alpha: usize) -> Result<RaySet> {
        if n_boundary < 4 || n_alpha < 2 {
            return Err(Error::InvalidCounts(format!("ray set {n_boundary} x {n_alpha}")));
        }
        let dphi = 2.0 * PI / n_boundary as f64;
        let dalpha = PI / n_alpha as f64;
        let mut rays = Vec::with_capacity(n_boundary * n_alpha);
        for ib in 0..n_boundary {
            let phi = (ib as f64 + 0.5) * dphi;
            let y = dom.boundary_point(phi);
            let n_in = dom.inward_normal_angle(phi);
            let dl = dom.boundary_length_element(phi);
            for ia in 0..n_alpha {
                let alpha = -0.5 * PI + (ia as f64 + 0.5) * dalpha;
                let c = alpha.cos();
                if c < TANGENTIAL_CUTOFF {
                    continue;
                }
                rays.push(BoundaryRay { phi, alpha, y, theta: wrap_angle(n_in + alpha), weight: c * dl * dphi * dalpha });
            }
        }
        Ok(RaySet { rays, n_boundary })
    }

    /// Incoming rays whose directions are the grid angles `2πj/n_theta`.
    pub fn aligned(dom: &Domain, n_boundary: usize, n_theta: usize) -> Result<RaySet> {
        if n_boundary < 4 || n_theta < 4 {
            return Err(Error::InvalidCounts(format!("aligned ray set {n_boundary} x {n_theta}")));
        }
        let dphi = 2.0 * PI / n_boundary as f64;
        let dtheta = 2.0 * PI / n_theta as f64;
        let mut rays = Vec::new();
        for ib in 0..n_boundary {
            let phi = (ib as f64 + 0.5) * dphi;
            let y = dom.boundary_point(phi);
            let n_in = dom.inward_normal_angle(phi);
            let dl = dom.boundary_length_element(phi);
            for j in 0..n_theta {
                let theta = j as f64 * dtheta;
                let alpha = crate::profile::angle_diff(theta, n_in);
                let c = alpha.cos();
                if c < TANGENTIAL_CUTOFF {
                    continue;
                }
                rays.push(BoundaryRay { phi, alpha, y, theta, weight: c * dl * dphi * dtheta });
            }
        }
        Ok(RaySet { rays, n_boundary })
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

/// Discretisation of `[0,T] × SM`.
#[derive(Clone, Debug)]
pub struct PhaseGrid {
    pub domain: Domain,
    pub t_final: f64,
    pub nt: usize,
    pub dt: f64,
    pub nodes: SpatialNodes,
    pub ntheta: usize,
    pub dtheta: f64,
    pub boundary_rays: RaySet,
    /// Arclength step for ray quadratures.
    pub ray_step: f64,
}

impl PhaseGrid {
    /// `N_t` time nodes on `[0,T]`, about `N_x` spatial nodes, `N_θ` angles
    /// (even, so that velocity reversal maps grid angles to grid angles).
    pub fn build(dom: &Domain, t_final: f64, nt: usize, nx: usize, ntheta: usize) -> Result<PhaseGrid> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidParameters(format!("T = {t_final} must be positive")));
        }
        if nt < 4 || nx < 4 || ntheta < 4 {
            return Err(Error::InvalidCounts(format!("N_t = {nt}, N_x = {nx}, N_theta = {ntheta}; all must be >= 4")));
        }
        if ntheta % 2 != 0 {
            return Err(Error::InvalidCounts(format!("N_theta = {ntheta} must be even")));
        }
        let nodes = SpatialNodes::build(dom, nx)?;
        let (a, b) = dom.semi_axes();
        let ray_step = 0.5 * a.min(b) / nodes.n_r as f64;
        let n_b = (3 * ntheta / 2).max(8);
        let n_a = (ntheta / 2).max(4);
        let boundary_rays = RaySet::product(dom, n_b, n_a)?;
        Ok(PhaseGrid {
            domain: dom.clone(),
            t_final,
            nt,
            dt: t_final / (nt - 1) as f64,
            nodes,
            ntheta,
            dtheta: 2.0 * PI / ntheta as f64,
            boundary_rays,
            ray_step,
        })
    }

    /// Replaces the boundary ray set by a product rule of the given size.
    pub fn with_rays(mut self, n_boundary: usize, n_alpha: usize) -> Result<PhaseGrid> {
        self.boundary_rays = RaySet::product(&self.domain, n_boundary, n_alpha)?;
        Ok(self)
    }

    pub fn with_ray_set(mut self, rays: RaySet) -> PhaseGrid {
        self.boundary_rays = rays;
        self
    }

    pub fn nx(&self) -> usize {
        self.nodes.len()
    }

    pub fn theta(&self, j: usize) -> f64 {
        j as f64 * self.dtheta
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn phase_point(&self, i: usize, j: usize) -> PhasePoint {
        PhasePoint { x: self.nodes.points[i], theta: self.theta(j) }
    }

    /// Trapezoid weight of time node `k`.
    pub fn time_weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.nt {
            0.5 * self.dt
        } else {
            self.dt
        }
    }

    /// Index of the reversed angle `θ + π`.
    pub fn reverse_index(&self, j: usize) -> usize {
        (j + self.ntheta / 2) % self.ntheta
    }

    /// Periodic linear interpolation weights in the angle.
    pub fn angular_stencil(&self, theta: f64) -> [(usize, f64); 2] {
        let v = wrap_angle(theta) / self.dtheta;
        let j0 = (v.floor() as usize) % self.ntheta;
        let f = v - v.floor();
        [(j0, 1.0 - f), ((j0 + 1) % self.ntheta, f)]
    }

    pub fn spatial_stencil(&self, x: Point) -> Stencil {
        self.nodes.stencil(&self.domain, x)
    }

    /// Smallest spacing between neighbouring spatial nodes.
    pub fn spatial_spacing(&self) -> f64 {
        let (a, b) = self.domain.semi_axes();
        let radial = a.min(b) / self.nodes.n_r as f64;
        let angular = 2.0 * PI * a.min(b) / self.nodes.n_phi as f64;
        radial.min(angular)
    }

    /// Metric area from the spatial weights.
    pub fn area(&self) -> f64 {
        self.nodes.weights.iter().sum()
    }

    /// `∫_{SM} F dΣ` by the node rule.
    pub fn volume_integral<F: Fn(PhasePoint) -> f64 + Sync + Send>(&self, f: F) -> f64 {
        let per_node = par::map_range(self.nx(), |i| {
            (0..self.ntheta).map(|j| f(self.phase_point(i, j))).sum::<f64>() * self.nodes.weights[i] * self.dtheta
        });
        per_node.iter().sum()
    }

    /// `∫_{∂₋SM} ∫₀^{τ(y,w)} F(ρ_{y,w}(s)) ds dξ` over the boundary rays.
    pub fn santalo_integral<F: Fn(PhasePoint) -> f64 + Sync + Send>(&self, f: F) -> Result<f64> {
        let parts = par::map_range(self.boundary_rays.len(), |r| -> Result<f64> {
            let ray = &self.boundary_rays.rays[r];
            let path = self.domain.trace_geodesic(ray.incoming(), self.ray_step)?;
            Ok(trapezoid_path(&path.nodes, &f) * ray.weight)
        });
        let mut total = 0.0;
        for p in parts {
            total += p?;
        }
        Ok(total)
    }

    /// Santaló integral of a sampled field at time index `k`.
    pub fn santalo_field(&self, field: &PhaseField, k: usize) -> Result<f64> {
        self.check(field)?;
        self.santalo_integral(|p| field.interp(self, k, p).re)
    }

    /// Volume integral of a sampled field at time index `k`.
    pub fn volume_field(&self, field: &PhaseField, k: usize) -> Result<f64> {
        self.check(field)?;
        let mut total = 0.0;
        for j in 0..self.ntheta {
            for i in 0..self.nx() {
                total += field.get(k, i, j).re * self.nodes.weights[i];
            }
        }
        Ok(total * self.dtheta)
    }

    pub fn check(&self, field: &PhaseField) -> Result<()> {
        if field.nt != self.nt || field.nx != self.nx() || field.ntheta != self.ntheta {
            return Err(Error::ShapeMismatch(format!(
                "field ({}, {}, {}) vs grid ({}, {}, {})",
                field.nt,
                field.nx,
                field.ntheta,
                self.nt,
                self.nx(),
                self.ntheta
            )));
        }
        Ok(())
    }
}

fn trapezoid_path<F: Fn(PhasePoint) -> f64>(nodes: &[(f64, PhasePoint)], f: &F) -> f64 {
    let mut acc = 0.0;
    for w in nodes.windows(2) {
        acc += 0.5 * (w[1].0 - w[0].0) * (f(w[0].1) + f(w[1].1));
    }
    acc
}

/// Complex samples on `[0,T] × SM`, stored direction-major with time
/// contiguous: index `(j·N_x + i)·N_t + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseField {
    pub nt: usize,
    pub nx: usize,
    pub ntheta: usize,
    pub data: Vec<C64>,
}

impl PhaseField {
    pub fn zeros(grid: &PhaseGrid) -> PhaseField {
        PhaseField::new(grid.nt, grid.nx(), grid.ntheta)
    }

    pub fn new(nt: usize, nx: usize, ntheta: usize) -> PhaseField {
        PhaseField { nt, nx, ntheta, data: vec![C64::new(0.0, 0.0); nt * nx * ntheta] }
    }

    /// Samples `f(t, x, θ)` at every grid node.
    pub fn from_fn<F: Fn(f64, PhasePoint) -> C64 + Sync + Send>(grid: &PhaseGrid, f: F) -> PhaseField {
        let mut out = PhaseField::zeros(grid);
        let nt = grid.nt;
        par::for_each_chunk(&mut out.data, nt, |s, series| {
            let (j, i) = (s / grid.nx(), s % grid.nx());
            let p = grid.phase_point(i, j);
            for (k, v) in series.iter_mut().enumerate() {
                *v = f(grid.time(k), p);
            }
        });
        out
    }

    #[inline]
    pub fn index(&self, k: usize, i: usize, j: usize) -> usize {
        (j * self.nx + i) * self.nt + k
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> C64 {
        self.data[self.index(k, i, j)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: C64) {
        let idx = self.index(k, i, j);
        self.data[idx] = v;
    }

    pub fn series(&self, i: usize, j: usize) -> &[C64] {
        let s = (j * self.nx + i) * self.nt;
        &self.data[s..s + self.nt]
    }

    pub fn series_mut(&mut self, i: usize, j: usize) -> &mut [C64] {
        let s = (j * self.nx + i) * self.nt;
        &mut self.data[s..s + self.nt]
    }

    /// Interpolated value at time index `k` and an arbitrary phase point.
    pub fn interp(&self, grid: &PhaseGrid, k: usize, p: PhasePoint) -> C64 {
        let st = grid.spatial_stencil(p.x);
        let ang = grid.angular_stencil(p.theta);
        let mut acc = C64::new(0.0, 0.0);
        for &(j, wj) in &ang {
            if wj == 0.0 {
                continue;
            }
            for &(n, wn) in &st {
                acc += self.get(k, n, j) * (wj * wn);
            }
        }
        acc
    }

    /// Values at time index `k`, ordered `[j][i]`.
    pub fn time_slice(&self, k: usize) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.nx * self.ntheta);
        for j in 0..self.ntheta {
            for i in 0..self.nx {
                out.push(self.get(k, i, j));
            }
        }
        out
    }

    pub fn scale(&mut self, c: C64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn axpy(&mut self, a: C64, other: &PhaseField) {
        for (v, o) in self.data.iter_mut().zip(&other.data) {
            *v += a * o;
        }
    }

    pub fn map<F: Fn(C64) -> C64>(&self, f: F) -> PhaseField {
        PhaseField { nt: self.nt, nx: self.nx, ntheta: self.ntheta, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map<F: Fn(C64, C64) -> C64>(&self, other: &PhaseField, f: F) -> PhaseField {
        PhaseField {
            nt: self.nt,
            nx: self.nx,
            ntheta: self.ntheta,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn linf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// `‖f‖_{L²(SM_T)}` with the grid quadrature.
    pub fn l2(&self, grid: &PhaseGrid) -> f64 {
        self.inner(grid, self).re.max(0.0).sqrt()
    }

    /// `∫_{SM_T} f ḡ dΣ dt`.
    pub fn inner(&self, grid: &PhaseGrid, other: &PhaseField) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..self.ntheta {
            for i in 0..self.nx {
                let a = self.series(i, j);
                let b = other.series(i, j);
                let mut s = C64::new(0.0, 0.0);
                for k in 0..self.nt {
                    s += a[k] * b[k].conj() * grid.time_weight(k);
                }
                acc += s * grid.nodes.weights[i];
            }
        }
        acc * grid.dtheta
    }

    /// Plain Euclidean norm of the sample vector.
    pub fn vec_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Complex samples on `[0,T] × M`, stored `[i][k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpacetimeField {
    pub nt: usize,
    pub nx: usize,
    pub data: Vec<C64>,
}

impl SpacetimeField {
    pub fn zeros(grid: &PhaseGrid) -> SpacetimeField {
        SpacetimeField { nt: grid.nt, nx: grid.nx(), data: vec![C64::new(0.0, 0.0); grid.nt * grid.nx()] }
    }

    pub fn from_fn<F: Fn(f64, Point) -> f64>(grid: &PhaseGrid, f: F) -> SpacetimeField {
        let mut out = SpacetimeField::zeros(grid);
        for i in 0..grid.nx() {
            for k in 0..grid.nt {
                out.data[i * grid.nt + k] = C64::new(f(grid.time(k), grid.nodes.points[i]), 0.0);
            }
        }
        out
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> C64 {
        self.data[i * self.nt + k]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, v: C64) {
        self.data[i * self.nt + k] = v;
    }

    /// Replicates the field over all directions.
    pub fn expand(&self, ntheta: usize) -> PhaseField {
        let mut out = PhaseField::new(self.nt, self.nx, ntheta);
        for j in 0..ntheta {
            for i in 0..self.nx {
                out.series_mut(i, j).copy_from_slice(&self.data[i * self.nt..(i + 1) * self.nt]);
            }
        }
        out
    }

    /// Linear-in-time, bilinear-in-space interpolation; zero outside `[0,T]`.
    pub fn interp(&self, grid: &PhaseGrid, t: f64, x: Point) -> C64 {
        if t < 0.0 || t > grid.t_final + 1e-12 {
            return C64::new(0.0, 0.0);
        }
        let u = (t / grid.dt).min((self.nt - 1) as f64);
        let k0 = (u.floor() as usize).min(self.nt - 2);
        let f = u - k0 as f64;
        let mut acc = C64::new(0.0, 0.0);
        for (n, w) in grid.spatial_stencil(x) {
            acc += (self.get(k0, n) * (1.0 - f) + self.get(k0 + 1, n) * f) * w;
        }
        acc
    }

    /// `∫ |f|² dx dt` over nodes selected by `mask(t, x)`.
    pub fn masked_l2(&self, grid: &PhaseGrid, mask: impl Fn(f64, Point) -> bool) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.nx {
            for k in 0..self.nt {
                if mask(grid.time(k), grid.nodes.points[i]) {
                    acc += self.get(k, i).norm_sqr() * grid.nodes.weights[i] * grid.time_weight(k);
                }
            }
        }
        acc.sqrt()
    }

    pub fn l2(&self, grid: &PhaseGrid) -> f64 {
        self.masked_l2(grid, |_, _| true)
    }

    pub fn linf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn sub(&self, other: &SpacetimeField) -> SpacetimeField {
        SpacetimeField { nt: self.nt, nx: self.nx, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() }
    }

    pub fn add(&self, other: &SpacetimeField) -> SpacetimeField {
        SpacetimeField { nt: self.nt, nx: self.nx, data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Relative L² error of `approx` against `truth` over the nodes selected by
/// `mask`.
pub fn relative_l2(grid: &PhaseGrid, approx: &SpacetimeField, truth: &SpacetimeField, mask: impl Fn(f64, Point) -> bool + Copy) -> f64 {
    let e = approx.sub(truth).masked_l2(grid, mask);
    let n = truth.masked_l2(grid, mask);
    if n == 0.0 {
        e
    } else {
        e / n
    }
}

/// The interior region `t ∈ [0.1T, 0.9T]`, scaled radius ≤ 0.8.
pub fn interior_mask(grid: &PhaseGrid) -> impl Fn(f64, Point) -> bool + Copy + '_ {
    move |t, x| {
        let (rho, _) = grid.domain.scaled_polar(x);
        t >= 0.1 * grid.t_final - 1e-12 && t <= 0.9 * grid.t_final + 1e-12 && rho <= 0.8 + 1e-12
    }
}

/// Time Fourier transform `F(η) = Δt Σ f(t_n) e^{-iη t_n}` on a zero-padded
/// uniform grid `t_n = t₀ + nΔt`.
#[derive(Clone)]
pub struct TimeFft {
    pub n_orig: usize,
    pub n_pad: usize,
    pub t0: f64,
    pub dt: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for TimeFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TimeFft {{ n_orig: {}, n_pad: {}, t0: {}, dt: {} }}", self.n_orig, self.n_pad, self.t0, self.dt)
    }
}

impl TimeFft {
    /// `pad` is the zero-padding factor; values below 2 are raised to 2.
    pub fn new(n_orig: usize, t0: f64, dt: f64, pad: usize) -> TimeFft {
        let n_pad = n_orig * pad.max(2);
        let mut planner = FftPlanner::new();
        TimeFft { n_orig, n_pad, t0, dt, fwd: planner.plan_fft_forward(n_pad), inv: planner.plan_fft_inverse(n_pad) }
    }

    /// Checks uniformity of explicit sample times before planning.
    pub fn for_times(times: &[f64], pad: usize) -> Result<TimeFft> {
        if times.len() < 2 {
            return Err(Error::NonUniformGrid);
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(Error::NonUniformGrid);
        }
        for (n, t) in times.iter().enumerate() {
            if (t - (times[0] + n as f64 * dt)).abs() > 1e-9 * dt.max(1.0) {
                return Err(Error::NonUniformGrid);
            }
        }
        Ok(TimeFft::new(times.len(), times[0], dt, pad))
    }

    /// Angular frequency of bin `k` (signed).
    pub fn freq(&self, k: usize) -> f64 {
        let kk = if k <= self.n_pad / 2 { k as f64 } else { k as f64 - self.n_pad as f64 };
        2.0 * PI * kk / (self.n_pad as f64 * self.dt)
    }

    /// Bin holding the frequency `-η_k`.
    pub fn mirror(&self, k: usize) -> usize {
        (self.n_pad - k) % self.n_pad
    }

    pub fn forward(&self, samples: &[C64]) -> Vec<C64> {
        let mut buf = vec![C64::new(0.0, 0.0); self.n_pad];
        buf[..samples.len().min(self.n_orig)].copy_from_slice(&samples[..samples.len().min(self.n_orig)]);
        self.fwd.process(&mut buf);
        for (k, v) in buf.iter_mut().enumerate() {
            let eta = self.freq(k);
            *v *= C64::from_polar(self.dt, -eta * self.t0);
        }
        buf
    }

    pub fn inverse(&self, spectrum: &[C64]) -> Vec<C64> {
        let mut buf: Vec<C64> = spectrum
            .iter()
            .enumerate()
            .map(|(k, v)| v * C64::from_polar(1.0, self.freq(k) * self.t0))
            .collect();
        self.inv.process(&mut buf);
        let s = 1.0 / (self.n_pad as f64 * self.dt);
        buf.truncate(self.n_orig);
        for v in &mut buf {
            *v *= s;
        }
        buf
    }
}

/// Values on a ray set at every time node, stored `[ray][k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTrace {
    pub nrays: usize,
    pub nt: usize,
    pub data: Vec<C64>,
}

impl BoundaryTrace {
    pub fn zeros(nrays: usize, nt: usize) -> BoundaryTrace {
        BoundaryTrace { nrays, nt, data: vec![C64::new(0.0, 0.0); nrays * nt] }
    }

    pub fn series(&self, r: usize) -> &[C64] {
        &self.data[r * self.nt..(r + 1) * self.nt]
    }

    pub fn series_mut(&mut self, r: usize) -> &mut [C64] {
        &mut self.data[r * self.nt..(r + 1) * self.nt]
    }

    /// `∫∫ f ḡ dξ dt` using the ray weights of `rays`.
    pub fn inner(&self, grid: &PhaseGrid, rays: &RaySet, other: &BoundaryTrace) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..self.nrays {
            let a = self.series(r);
            let b = other.series(r);
            let mut s = C64::new(0.0, 0.0);
            for k in 0..self.nt {
                s += a[k] * b[k].conj() * grid.time_weight(k);
            }
            acc += s * rays.rays[r].weight;
        }
        acc
    }
}
