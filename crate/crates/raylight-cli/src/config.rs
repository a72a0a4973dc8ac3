//! JSON experiment configuration. Every field has a default, so `{}` is a
//! valid config; unknown keys are rejected.

use crate::CliError;
use raylight::geometry::{Domain, Factor, Shape};
use raylight::grid::PhaseGrid;
use raylight::media::{tabulated_vertical_cutoff, Kernel, Medium, Sigma};
use raylight::profile::{BoundaryProfile, Profile, TimeProfile};
use raylight::transport::{PhaseKind, SolverOptions};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainSpec,
    pub grid: GridSpec,
    pub medium: MediumSpec,
    /// Nonlinear coefficient used to simulate measurements.
    pub q: PhantomSpec,
    /// Source for `reconstruct-source`.
    pub source: PhantomSpec,
    /// Boundary data of `forward`.
    pub data: DataSpec,
    pub solver: SolverSpec,
    pub go: GoSpec,
    pub ladder: LadderSpec,
    pub inversion: InversionSpec,
    pub santalo: SantaloSpec,
    pub thresholds: Thresholds,
    pub output: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            domain: DomainSpec::default(),
            grid: GridSpec::default(),
            medium: MediumSpec::default(),
            q: PhantomSpec::GaussianBump(Bump { center: [1.0, 0.2, -0.1], widths: [0.3, 0.3], amplitude: 0.8 }),
            source: PhantomSpec::GaussianBump(Bump { center: [1.0, 0.2, -0.1], widths: [0.3, 0.3], amplitude: 0.8 }),
            data: DataSpec::default(),
            solver: SolverSpec::default(),
            go: GoSpec::default(),
            ladder: LadderSpec::default(),
            inversion: InversionSpec::default(),
            santalo: SantaloSpec::default(),
            thresholds: Thresholds::default(),
            output: PathBuf::from("out"),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSpec {
    pub shape: ShapeSpec,
    pub conformal: Option<ConformalSpec>,
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec { shape: ShapeSpec::Disk { radius: 1.0 }, conformal: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ShapeSpec {
    Disk { radius: f64 },
    Ellipse { a: f64, b: f64 },
}

/// Conformal factor `c(x)` of the metric `e^{2c}δ`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ConformalSpec {
    Quadratic { k: f64 },
    Gaussian { amplitude: f64, center: [f64; 2], width: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub t_final: f64,
    pub nt: usize,
    pub nx: usize,
    pub ntheta: usize,
    /// Boundary positions × angles of the product ray set (`None` keeps the
    /// grid default).
    pub rays: Option<[usize; 2]>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { t_final: 2.0, nt: 17, nx: 200, ntheta: 16, rays: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MediumSpec {
    /// Constant absorption.
    pub sigma: f64,
    pub scattering: ScatteringSpec,
    pub m: u32,
}

impl Default for MediumSpec {
    fn default() -> Self {
        MediumSpec { sigma: 0.3, scattering: ScatteringSpec::Isotropic { mu: 0.05 / (2.0 * PI) }, m: 2 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScatteringSpec {
    None,
    Isotropic { mu: f64 },
    /// `c·χ(x,θ)χ(x,θ')` with `χ` a smooth cutoff of `|∂_θτ₋|` ramping from 0
    /// at `lo` to 1 at `hi`, so that tangential directions do not scatter.
    SeparableCutoff { c: f64, lo: f64, hi: f64 },
}

/// Bump `amplitude·exp(−(t−t₀)²/2w_t² − |x−x₀|²/2w_x²)`; `center = [t₀, x₀, y₀]`,
/// `widths = [w_t, w_x]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: [f64; 3],
    pub widths: [f64; 2],
    pub amplitude: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PhantomSpec {
    Zero,
    GaussianBump(Bump),
    SumOfBumps { bumps: Vec<Bump> },
    /// A spacetime field written by an earlier run.
    File { path: PathBuf },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TimeSpec {
    Constant { value: f64 },
    Bump { center: f64, half_width: f64 },
    Gaussian { center: f64, width: f64 },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoundarySpec {
    Uniform,
    Bump { phi0: f64, phi_half: f64, alpha0: f64, alpha_half: f64 },
    Gaussian { phi0: f64, phi_width: f64, alpha0: f64, alpha_width: f64 },
}

/// Boundary profile `time(t)·boundary(φ, α)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub time: TimeSpec,
    pub boundary: BoundarySpec,
}

impl ProfileSpec {
    pub fn constant(value: f64) -> ProfileSpec {
        ProfileSpec { time: TimeSpec::Constant { value }, boundary: BoundarySpec::Uniform }
    }

    pub fn to_profile(self) -> Profile {
        let time = match self.time {
            TimeSpec::Constant { value } => TimeProfile::Constant(value),
            TimeSpec::Bump { center, half_width } => TimeProfile::Bump { center, half_width },
            TimeSpec::Gaussian { center, width } => TimeProfile::Gaussian { center, width },
        };
        let boundary = match self.boundary {
            BoundarySpec::Uniform => BoundaryProfile::Uniform,
            BoundarySpec::Bump { phi0, phi_half, alpha0, alpha_half } => BoundaryProfile::Bump { phi0, phi_half, alpha0, alpha_half },
            BoundarySpec::Gaussian { phi0, phi_width, alpha0, alpha_width } => BoundaryProfile::Gaussian { phi0, phi_width, alpha0, alpha_width },
        };
        Profile { time, boundary }
    }

    /// Upper bound of the profile.
    pub fn sup(&self) -> f64 {
        match self.time {
            TimeSpec::Constant { value } => value.abs(),
            _ => 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub amplitude: f64,
    /// Constant initial value.
    pub initial: f64,
    pub incoming: ProfileSpec,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec { amplitude: 0.05, initial: 1.0, incoming: ProfileSpec::constant(1.0) }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverSpec { tol: d.tol, max_iter: d.max_iter }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseSpec {
    Euclidean,
    Riemannian,
}

impl PhaseSpec {
    pub fn kind(self) -> PhaseKind {
        match self {
            PhaseSpec::Euclidean => PhaseKind::Euclidean,
            PhaseSpec::Riemannian => PhaseKind::Riemannian,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GoSpec {
    /// Frequencies in units of 1/diameter.
    pub lambdas: Vec<f64>,
    pub profile: ProfileSpec,
    pub phase: PhaseSpec,
}

impl Default for GoSpec {
    fn default() -> Self {
        GoSpec {
            lambdas: vec![10.0, 20.0, 40.0, 80.0, 160.0],
            profile: ProfileSpec {
                time: TimeSpec::Bump { center: 0.8, half_width: 0.6 },
                boundary: BoundarySpec::Bump { phi0: PI, phi_half: 1.0, alpha0: 0.0, alpha_half: 1.0 },
            },
            phase: PhaseSpec::Euclidean,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LadderSpec {
    pub top: f64,
    pub ratio: f64,
    pub rungs: usize,
    /// Small-data radius of the simulated measurements.
    pub delta: f64,
}

impl Default for LadderSpec {
    fn default() -> Self {
        LadderSpec { top: 0.05, ratio: 0.5, rungs: 4, delta: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSpec {
    Direct,
    Go,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSpec {
    /// Probe frequency (absolute).
    pub lambda: f64,
    pub kappa: f64,
    /// Pulse width in time steps.
    pub zeta_steps: f64,
    pub rays: [usize; 2],
    /// Nodes carrying the unknowns of the light-ray inversion.
    pub inversion_nx: Option<usize>,
}

impl Default for PlanSpec {
    fn default() -> Self {
        PlanSpec { lambda: 80.0, kappa: 0.3, zeta_steps: 4.0, rays: [32, 16], inversion_nx: Some(80) }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct InversionSpec {
    pub mode: ModeSpec,
    /// Least-squares regularisation; `None` keeps the mode default.
    pub reg: Option<f64>,
    pub max_iter: Option<usize>,
    /// Singular-value energy kept by light-ray inversions.
    pub energy: Option<f64>,
    /// Gaussian noise on the differenced data, relative to its maximum.
    pub noise: f64,
    /// Probing profiles of direct mode.
    pub probes: Vec<ProfileSpec>,
    pub plan: PlanSpec,
    /// Aligned measurement rays `[boundary positions, angles]`.
    pub measurement_rays: Option<[usize; 2]>,
    /// Store every simulated measurement under `<out>/measurements`.
    pub record: bool,
    /// Replay measurements from a directory instead of simulating them.
    pub measurements: Option<PathBuf>,
}

impl Default for InversionSpec {
    fn default() -> Self {
        let side = |phi0| ProfileSpec {
            time: TimeSpec::Constant { value: 1.0 },
            boundary: BoundarySpec::Bump { phi0, phi_half: 2.0, alpha0: 0.0, alpha_half: 1.4 },
        };
        InversionSpec {
            mode: ModeSpec::Direct,
            reg: None,
            max_iter: None,
            energy: None,
            noise: 0.0,
            probes: vec![ProfileSpec::constant(1.0), side(0.0), side(PI)],
            plan: PlanSpec::default(),
            measurement_rays: None,
            record: false,
            measurements: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SantaloSpec {
    pub samples: usize,
}

impl Default for SantaloSpec {
    fn default() -> Self {
        SantaloSpec { samples: 20 }
    }
}

/// Pass marks checked by the commands; a miss exits with status 4.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub q_rel_l2: f64,
    pub source_rel_l2: f64,
    pub identity_gap: f64,
    pub decay_ratio: f64,
    pub santalo: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { q_rel_l2: 0.15, source_rel_l2: 0.10, identity_gap: 0.05, decay_ratio: 0.3, santalo: 0.01 }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Range checks that do not need the grid.
    pub fn check(&self) -> Result<(), CliError> {
        let g = &self.grid;
        if !(g.t_final > 0.0 && g.t_final.is_finite()) {
            return Err(bad(format!("grid.t_final = {} must be positive", g.t_final)));
        }
        if g.nt < 2 || g.nx < 10 || g.ntheta < 4 || g.ntheta % 2 != 0 {
            return Err(bad(format!("grid counts nt={} nx={} ntheta={} (need nt ≥ 2, nx ≥ 10, even ntheta ≥ 4)", g.nt, g.nx, g.ntheta)));
        }
        let m = &self.medium;
        if !(m.sigma >= 0.0 && m.sigma.is_finite()) || m.m < 2 {
            return Err(bad(format!("medium sigma = {}, m = {} (need sigma ≥ 0, m ≥ 2)", m.sigma, m.m)));
        }
        match m.scattering {
            ScatteringSpec::Isotropic { mu } if !(mu >= 0.0) => return Err(bad("medium.scattering.mu must be nonnegative")),
            ScatteringSpec::SeparableCutoff { c, lo, hi } if !(c >= 0.0 && lo >= 0.0 && hi > lo) => {
                return Err(bad("separable cutoff needs c ≥ 0 and 0 ≤ lo < hi"))
            }
            _ => {}
        }
        for (name, p) in [("q", &self.q), ("source", &self.source)] {
            crate::phantom::check_spec(p).map_err(|e| bad(format!("{name}: {e}")))?;
        }
        if self.go.lambdas.len() < 2 || self.go.lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(bad("go.lambdas needs at least two positive values"));
        }
        let i = &self.inversion;
        if !(i.noise >= 0.0) {
            return Err(bad("inversion.noise must be nonnegative"));
        }
        if let Some(e) = i.energy {
            if !(e > 0.0 && e <= 1.0) {
                return Err(bad("inversion.energy must lie in (0, 1]"));
            }
        }
        if i.mode == ModeSpec::Direct && i.probes.is_empty() {
            return Err(bad("direct mode needs at least one probe"));
        }
        if let Some(dir) = &i.measurements {
            if !dir.join(raylight::io::MANIFEST).exists() {
                return Err(bad(format!("measurement directory {} has no {}", dir.display(), raylight::io::MANIFEST)));
            }
        }
        let t = &self.thresholds;
        if [t.q_rel_l2, t.source_rel_l2, t.identity_gap, t.decay_ratio, t.santalo].iter().any(|v| !(*v > 0.0)) {
            return Err(bad("thresholds must be positive"));
        }
        if self.santalo.samples == 0 {
            return Err(bad("santalo.samples must be positive"));
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<Domain, CliError> {
        let shape = match self.domain.shape {
            ShapeSpec::Disk { radius } => Shape::Disk { radius },
            ShapeSpec::Ellipse { a, b } => Shape::Ellipse { a, b },
        };
        let dom = match &self.domain.conformal {
            None => match shape {
                Shape::Disk { radius } => Domain::disk(radius),
                Shape::Ellipse { a, b } => Domain::ellipse(a, b),
            },
            Some(ConformalSpec::Quadratic { k }) => Domain::conformal(shape, Factor::Quadratic { k: *k }),
            Some(ConformalSpec::Gaussian { amplitude, center, width }) => {
                Domain::conformal(shape, Factor::Gaussian { amplitude: *amplitude, center: *center, width: *width })
            }
        };
        dom.map_err(|e| bad(format!("domain: {e}")))
    }

    pub fn grid(&self, dom: &Domain) -> Result<PhaseGrid, CliError> {
        let g = &self.grid;
        let grid = PhaseGrid::build(dom, g.t_final, g.nt, g.nx, g.ntheta).map_err(|e| bad(format!("grid: {e}")))?;
        match g.rays {
            None => Ok(grid),
            Some([nb, na]) => grid.with_rays(nb, na).map_err(|e| bad(format!("grid.rays: {e}"))),
        }
    }

    /// The medium without `q`.
    pub fn medium(&self, grid: &PhaseGrid) -> Result<Medium, CliError> {
        let m = &self.medium;
        let med = match m.scattering {
            ScatteringSpec::None => Medium::constant(m.sigma, 0.0, m.m),
            ScatteringSpec::Isotropic { mu } => Medium::constant(m.sigma, mu, m.m),
            ScatteringSpec::SeparableCutoff { c, lo, hi } => tabulated_vertical_cutoff(&grid.domain, grid, lo, hi, 360)
                .and_then(|chi| Medium::new(Sigma::Constant(m.sigma), Kernel::Separable { c, chi }, m.m, m.sigma, 2.0 * PI * c)),
        };
        med.map_err(|e| bad(format!("medium: {e}")))
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions { tol: self.solver.tol, max_iter: self.solver.max_iter, ..SolverOptions::default() }
    }
}
