//! Phantoms for `q` and for sources, tapered to vanish on a collar of
//! `∂([0,T] × M)`.

use crate::config::{Bump, PhantomSpec};
use raylight::grid::{PhaseGrid, SpacetimeField};
use raylight::io;
use std::path::Path;

/// Width of the collar where phantoms vanish, as a fraction of `T` and of the
/// scaled radius.
pub const COLLAR: f64 = 0.05;

/// 0 on the collar, 1 beyond twice its width, C¹ in between.
fn taper(u: f64) -> f64 {
    let s = ((u - COLLAR) / COLLAR).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Taper at `(t, x)`; zero on the collar.
pub fn collar_window(grid: &PhaseGrid, t: f64, x: [f64; 2]) -> f64 {
    let tf = grid.t_final;
    let ut = t.min(tf - t) / tf;
    let (rho, _) = grid.domain.scaled_polar(x);
    taper(ut) * taper(1.0 - rho)
}

pub fn in_collar(grid: &PhaseGrid, t: f64, x: [f64; 2]) -> bool {
    let tf = grid.t_final;
    let (rho, _) = grid.domain.scaled_polar(x);
    t.min(tf - t) / tf <= COLLAR || 1.0 - rho <= COLLAR
}

fn bump_value(b: &Bump, t: f64, x: [f64; 2]) -> f64 {
    let [t0, x0, y0] = b.center;
    let [wt, wx] = b.widths;
    b.amplitude * (-(t - t0).powi(2) / (2.0 * wt * wt) - ((x[0] - x0).powi(2) + (x[1] - y0).powi(2)) / (2.0 * wx * wx)).exp()
}

fn check_bump(b: &Bump) -> Result<(), String> {
    if !(b.widths[0] > 0.0 && b.widths[1] > 0.0) {
        return Err(format!("bump widths {:?} must be positive", b.widths));
    }
    if !(b.amplitude.is_finite() && b.center.iter().all(|c| c.is_finite())) {
        return Err("bump amplitude and center must be finite".into());
    }
    Ok(())
}

/// Checks that do not need a grid.
pub fn check_spec(spec: &PhantomSpec) -> Result<(), String> {
    match spec {
        PhantomSpec::Zero => Ok(()),
        PhantomSpec::GaussianBump(b) => check_bump(b),
        PhantomSpec::SumOfBumps { bumps } => {
            if bumps.is_empty() {
                return Err("sum-of-bumps needs at least one bump".into());
            }
            bumps.iter().try_for_each(check_bump)
        }
        PhantomSpec::File { path } => {
            if path.exists() {
                Ok(())
            } else {
                Err(format!("phantom file {} does not exist", path.display()))
            }
        }
    }
}

/// Nodal values of the phantom on `grid`. Bumps are multiplied by the collar
/// taper; a field read from file must already vanish on the collar.
pub fn generate_phantom(spec: &PhantomSpec, grid: &PhaseGrid) -> Result<SpacetimeField, String> {
    check_spec(spec)?;
    let bumps: Vec<Bump> = match spec {
        PhantomSpec::Zero => return Ok(SpacetimeField::zeros(grid)),
        PhantomSpec::GaussianBump(b) => vec![*b],
        PhantomSpec::SumOfBumps { bumps } => bumps.clone(),
        PhantomSpec::File { path } => {
            let f = io::read_spacetime_field(path, grid).map_err(|e| format!("{}: {e}", path.display()))?;
            for i in 0..grid.nx() {
                for k in 0..grid.nt {
                    if f.get(k, i).norm() != 0.0 && in_collar(grid, grid.time(k), grid.nodes.points[i]) {
                        return Err(format!("{}: nonzero value in the boundary collar at t = {:.3}, node {i}", path.display(), grid.time(k)));
                    }
                }
            }
            return Ok(f);
        }
    };
    Ok(SpacetimeField::from_fn(grid, |t, x| collar_window(grid, t, x) * bumps.iter().map(|b| bump_value(b, t, x)).sum::<f64>()))
}

/// Generates the phantom and writes it with its sidecar.
pub fn write_phantom(spec: &PhantomSpec, grid: &PhaseGrid, path: &Path) -> Result<SpacetimeField, String> {
    let f = generate_phantom(spec, grid)?;
    io::write_spacetime_field(path, grid, &f).map_err(|e| e.to_string())?;
    Ok(f)
}

/// True when the phantom is identically zero, so the medium can drop `q`.
pub fn is_zero(f: &SpacetimeField) -> bool {
    f.data.iter().all(|v| v.norm() == 0.0)
}
