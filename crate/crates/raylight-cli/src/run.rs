//! The experiment commands. Each run writes its artifacts, a `config.json`
//! with the effective configuration and a `manifest.json` listing
//! parameters, checks and files.

use crate::config::{ExperimentConfig, ModeSpec, PhantomSpec, ProfileSpec, ScatteringSpec};
use crate::phantom::{generate_phantom, in_collar, is_zero, write_phantom};
use crate::{CliError, StageExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use raylight::geometry::{Domain, PhasePoint};
use raylight::go::{decay_scan, profile_fn};
use raylight::grid::{interior_mask, relative_l2, PhaseGrid, RaySet, SpacetimeField};
use raylight::inversion::{
    identity_residual, reconstruct_q, reconstruct_source, EpsilonLadder, MeasurementFamily, ProbePlan, QOptions, QReport, SimulatedFamily,
};
use raylight::io::{self, DirectoryFamily, RecordingFamily};
use raylight::media::{validate_class_m, validate_omega, Medium};
use raylight::raytransforms::LightrayOptions;
use raylight::transport::{BoundaryData, Interpolated, Measurement, SolverOptions, Transport};
use raylight::C64;
use serde::Serialize;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Validate,
    Forward,
    GoDecay,
    IdentityCheck,
    ReconstructQ,
    ReconstructSource,
    SantaloCheck,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Command::Validate => "validate",
            Command::Forward => "forward",
            Command::GoDecay => "go-decay",
            Command::IdentityCheck => "identity-check",
            Command::ReconstructQ => "reconstruct-q",
            Command::ReconstructSource => "reconstruct-source",
            Command::SantaloCheck => "santalo-check",
        };
        f.write_str(s)
    }
}

/// Command-line overrides of the config.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
}

/// A pass mark checked by a command.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: Option<f64>,
    pub pass: bool,
}

impl Check {
    fn below(name: &str, value: f64, limit: f64) -> Check {
        Check { name: name.into(), value, limit: Some(limit), pass: value < limit }
    }

    fn flag(name: &str, pass: bool) -> Check {
        Check { name: name.into(), value: if pass { 1.0 } else { 0.0 }, limit: None, pass }
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out: PathBuf,
    pub artifacts: Vec<String>,
    pub checks: Vec<Check>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: String,
    seed: u64,
    threads: usize,
    status: &'static str,
    checks: &'a [Check],
    artifacts: &'a [String],
    config: &'a ExperimentConfig,
}

/// Output directory with the list of files written so far.
struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    /// A binary field; its sidecar is listed too.
    fn field(&mut self, name: &str) -> PathBuf {
        let p = self.path(name);
        self.files.push(io::sidecar_path(Path::new(name)).to_string_lossy().into_owned());
        p
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let p = self.path(name);
        let out = |e: csv::Error| CliError::Output(format!("{}: {e}", p.display()));
        let mut w = csv::Writer::from_path(&p).map_err(out)?;
        w.write_record(header).map_err(out)?;
        for r in rows {
            w.write_record(r).map_err(out)?;
        }
        w.flush().map_err(|e| CliError::Output(format!("{}: {e}", p.display())))
    }

    fn text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    dom: Domain,
    grid: PhaseGrid,
    medium: Medium,
    solver: SolverOptions,
    out: Artifacts,
    checks: Vec<Check>,
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn row(name: &str, v: f64) -> Vec<String> {
    vec![name.to_string(), num(v)]
}

/// Runs `command` and writes its artifacts. Threshold misses are reported as
/// [`CliError::Threshold`] after everything has been written.
pub fn run_pipeline(cfg: ExperimentConfig, command: Command, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let mut cfg = cfg;
    if let Some(out) = &opts.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    cfg.check()?;
    let threads = opts.threads;
    raylight::par::with_threads(threads, move || run_inner(cfg, command, threads))
}

fn run_inner(cfg: ExperimentConfig, command: Command, threads: usize) -> Result<RunSummary, CliError> {
    let dom = cfg.domain()?;
    let grid = cfg.grid(&dom)?;
    let medium = cfg.medium(&grid)?;
    std::fs::create_dir_all(&cfg.output).map_err(|e| CliError::Output(format!("{}: {e}", cfg.output.display())))?;
    let out = Artifacts { dir: cfg.output.clone(), files: Vec::new() };
    let solver = cfg.solver();
    let mut ctx = Ctx { cfg, dom, grid, medium, solver, out, checks: Vec::new() };
    match command {
        Command::Validate => validate(&mut ctx)?,
        Command::Forward => forward(&mut ctx)?,
        Command::GoDecay => go_decay(&mut ctx)?,
        Command::IdentityCheck => identity_check(&mut ctx)?,
        Command::ReconstructQ => recover_q(&mut ctx)?,
        Command::ReconstructSource => recover_source(&mut ctx)?,
        Command::SantaloCheck => santalo_check(&mut ctx)?,
    }
    let config_text = serde_json::to_string_pretty(&ctx.cfg).map_err(|e| CliError::Output(e.to_string()))?;
    ctx.out.text("config.json", &(config_text + "\n"))?;
    ctx.out.files.push("manifest.json".into());
    let failed: Vec<&Check> = ctx.checks.iter().filter(|c| !c.pass).collect();
    let manifest = Manifest {
        tool: "raylight",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        seed: ctx.cfg.seed,
        threads,
        status: if failed.is_empty() { "pass" } else { "threshold-failure" },
        checks: &ctx.checks,
        artifacts: &ctx.out.files,
        config: &ctx.cfg,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Output(e.to_string()))?;
    let mp = ctx.out.dir.join("manifest.json");
    std::fs::write(&mp, text + "\n").map_err(|e| CliError::Output(format!("{}: {e}", mp.display())))?;
    if !failed.is_empty() {
        let names: Vec<String> = failed.iter().map(|c| format!("{} = {:.4e}", c.name, c.value)).collect();
        return Err(CliError::Threshold(names.join(", ")));
    }
    Ok(RunSummary { out: ctx.out.dir, artifacts: ctx.out.files, checks: ctx.checks })
}

fn phantom(ctx: &mut Ctx, spec: &PhantomSpec, name: &str) -> Result<SpacetimeField, CliError> {
    let p = ctx.out.field(name);
    write_phantom(spec, &ctx.grid, &p).map_err(|e| CliError::Config(format!("{name}: {e}")))
}

fn with_q(med: &Medium, q: &SpacetimeField) -> Medium {
    if is_zero(q) {
        med.clone().without_q()
    } else {
        med.clone().with_q(q.clone())
    }
}

fn ladder(cfg: &ExperimentConfig) -> Result<EpsilonLadder, CliError> {
    let l = &cfg.ladder;
    EpsilonLadder::geometric(l.top, l.ratio, l.rungs, cfg.medium.m).map_err(|e| CliError::Config(format!("ladder: {e}")))
}

fn profile_data(dom: &Domain, amplitude: f64, initial: f64, incoming: ProfileSpec) -> BoundaryData {
    let prof = incoming.to_profile();
    let dom = dom.clone();
    BoundaryData::new(
        Some(Arc::new(move |_| C64::new(amplitude * initial, 0.0))),
        Some(Arc::new(move |t, p: PhasePoint| C64::new(amplitude * prof.eval(&dom, t, p.x, p.theta), 0.0))),
    )
}

fn validate(ctx: &mut Ctx) -> Result<(), CliError> {
    let g = &ctx.grid;
    let mut checks = Vec::new();
    let omega = validate_omega(&ctx.medium, g);
    checks.push(Check::flag("class_omega", omega.pass));
    let scat_m = matches!(ctx.cfg.medium.scattering, ScatteringSpec::SeparableCutoff { .. });
    if ctx.dom.factor.is_some() || scat_m {
        let rep = validate_class_m(&ctx.medium, &ctx.dom, g, None).stage("class M check")?;
        checks.push(Check::flag("class_m", rep.symmetric && rep.support_ok));
    }
    let exact = {
        let (a, b) = ctx.dom.semi_axes();
        std::f64::consts::PI * a * b
    };
    checks.push(Check::below("area_rel_error", (g.area() - exact).abs() / exact, 0.01));
    for (name, spec) in [("q", ctx.cfg.q.clone()), ("source", ctx.cfg.source.clone())] {
        let f = generate_phantom(&spec, g).map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        let mut collar = 0.0f64;
        for i in 0..g.nx() {
            for k in 0..g.nt {
                if in_collar(g, g.time(k), g.nodes.points[i]) {
                    collar = collar.max(f.get(k, i).norm());
                }
            }
        }
        checks.push(Check { name: format!("{name}_collar_max"), value: collar, limit: Some(0.0), pass: collar == 0.0 });
    }
    let l = ladder(&ctx.cfg)?;
    let sup = ctx.cfg.inversion.probes.iter().map(|p| p.sup()).fold(ctx.cfg.data.incoming.sup().max(ctx.cfg.data.initial.abs()), f64::max);
    checks.push(Check::flag("ladder_within_radius", l.validate(ctx.cfg.ladder.delta, sup).is_ok()));
    if ctx.cfg.inversion.mode == ModeSpec::Go {
        checks.push(Check::flag("probe_plan", go_plan(ctx).is_ok()));
    }
    let rows: Vec<Vec<String>> = checks.iter().map(|c| vec![c.name.clone(), c.pass.to_string(), num(c.value)]).collect();
    ctx.out.csv("validate.csv", &["check", "pass", "value"], &rows)?;
    ctx.checks.extend(checks);
    Ok(())
}

fn forward(ctx: &mut Ctx) -> Result<(), CliError> {
    let q = phantom(ctx, &ctx.cfg.q.clone(), "q.bin")?;
    let g = &ctx.grid;
    let d = &ctx.cfg.data;
    let data = profile_data(&ctx.dom, d.amplitude, d.initial, d.incoming).with_bound(ctx.cfg.ladder.delta);
    let rays = g.boundary_rays.clone();
    let mut rows = Vec::new();
    let mut stats = Vec::new();
    for (tag, med) in [("", with_q(&ctx.medium, &q)), ("_linear", ctx.medium.clone().without_q())] {
        let t = Transport::with_options(g, &med, ctx.solver.clone());
        let (sol, meas) = t.measure_on(&data, &rays, None).stage("forward solve")?;
        let up = ctx.out.field(&format!("u{tag}.bin"));
        io::write_phase_field(&up, g, &sol.field).stage("write solution")?;
        let mp = ctx.out.field(&format!("measurement{tag}.bin"));
        io::write_measurement(&mp, g, &rays, &meas).stage("write measurement")?;
        stats.push([sol.iterations as f64, sol.contraction, sol.field.linf(), sol.field.l2(g), meas.max_abs()]);
    }
    for (n, name) in ["iterations", "contraction", "linf", "l2", "measurement_max"].iter().enumerate() {
        rows.push(vec![name.to_string(), num(stats[0][n]), num(stats[1][n])]);
    }
    ctx.out.csv("forward.csv", &["quantity", "nonlinear", "linear"], &rows)
}

fn go_decay(ctx: &mut Ctx) -> Result<(), CliError> {
    let g = &ctx.grid;
    let go = &ctx.cfg.go;
    let lambdas: Vec<f64> = go.lambdas.iter().map(|l| l / ctx.dom.diameter).collect();
    let phi = profile_fn(&ctx.dom, go.profile.to_profile());
    let tab = decay_scan(&ctx.medium.clone().without_q(), g, &lambdas, phi, go.phase.kind(), &ctx.solver).stage("decay scan")?;
    ctx.out.text("decay.csv", &tab.to_csv())?;
    let rows = vec![
        row("end_ratio", tab.end_ratio()),
        row("decreasing_fraction", tab.decreasing_fraction),
        row("r_slope", tab.r_slope),
        row("k_slope", tab.k_slope),
    ];
    ctx.out.csv("decay_summary.csv", &["quantity", "value"], &rows)?;
    ctx.checks.push(Check::below("end_ratio", tab.end_ratio(), ctx.cfg.thresholds.decay_ratio));
    Ok(())
}

fn identity_check(ctx: &mut Ctx) -> Result<(), CliError> {
    let q = phantom(ctx, &ctx.cfg.q.clone(), "q.bin")?;
    let g = &ctx.grid;
    let med = with_q(&ctx.medium, &q);
    let reference = ctx.medium.clone().without_q();
    let t = Transport::with_options(g, &reference, ctx.solver.clone());
    let d = &ctx.cfg.data;
    let u = t.solve_linear(None, &profile_data(&ctx.dom, 1.0, d.initial, d.incoming)).stage("linear solve")?.field;
    let adj_data = BoundaryData::new(
        Some(Arc::new(|p: PhasePoint| C64::new(1.0 + 0.3 * p.x[0], 0.0))),
        Some(Arc::new(|t, p: PhasePoint| C64::new((0.5 * t).cos() * (1.0 + 0.2 * p.x[1]), 0.0))),
    );
    let u0 = t.solve_adjoint(None, &adj_data).stage("adjoint solve")?.field;
    let rep = identity_residual(g, &med, &reference, &u, &Interpolated { grid: g, field: &u0 }, &g.boundary_rays, &ctx.solver).stage("integral identity")?;
    let rows: Vec<Vec<String>> = [("volume", rep.lhs), ("boundary", rep.boundary), ("final", rep.final_term), ("boundary_plus_final", rep.rhs)]
        .iter()
        .map(|(n, v)| vec![n.to_string(), num(v.re), num(v.im)])
        .collect();
    ctx.out.csv("identity.csv", &["term", "re", "im"], &rows)?;
    ctx.out.csv("identity_gap.csv", &["quantity", "value"], &[row("gap", rep.gap)])?;
    if !is_zero(&q) {
        ctx.checks.push(Check::below("identity_gap", rep.gap, ctx.cfg.thresholds.identity_gap));
    }
    Ok(())
}

fn go_plan(ctx: &Ctx) -> raylight::Result<ProbePlan> {
    let p = &ctx.cfg.inversion.plan;
    let rays = ctx.grid.clone().with_rays(p.rays[0], p.rays[1])?.boundary_rays;
    ProbePlan::new(&ctx.grid, &rays, p.lambda, ctx.cfg.medium.m, Some(p.kappa), Some(p.zeta_steps * ctx.grid.dt), ctx.cfg.go.phase.kind())
}

fn q_options(ctx: &Ctx) -> Result<QOptions, CliError> {
    let inv = &ctx.cfg.inversion;
    let mut o = match inv.mode {
        ModeSpec::Direct => {
            let mut o = QOptions::direct(ladder(&ctx.cfg)?);
            o.probes = inv.probes.iter().map(|p| p.to_profile()).collect();
            if let Some(r) = inv.reg {
                o.lsq.reg = r;
            }
            if let Some(m) = inv.max_iter {
                o.lsq.max_iter = m;
            }
            o
        }
        ModeSpec::Go => {
            let plan = go_plan(ctx).map_err(|e| CliError::Config(format!("probe plan: {e}")))?;
            let mut o = QOptions::go(ladder(&ctx.cfg)?, plan);
            o.inversion_nx = inv.plan.inversion_nx;
            if let Some(r) = inv.reg {
                o.light.lsq.reg = r;
            }
            if let Some(m) = inv.max_iter {
                o.light.lsq.max_iter = m;
            }
            if let Some(e) = inv.energy {
                o.light.energy = e;
            }
            o
        }
    };
    o.noise = inv.noise;
    o.seed = ctx.cfg.seed;
    o.solver = ctx.solver.clone();
    Ok(o)
}

fn measurement_rays(ctx: &Ctx) -> Result<RaySet, CliError> {
    let inv = &ctx.cfg.inversion;
    let spec = match (inv.measurement_rays, inv.mode) {
        (Some(r), _) => Some(r),
        (None, ModeSpec::Go) => Some([64, ctx.grid.ntheta]),
        (None, ModeSpec::Direct) => None,
    };
    match spec {
        None => Ok(ctx.grid.boundary_rays.clone()),
        Some([nb, na]) => RaySet::aligned(&ctx.dom, nb, na).map_err(|e| CliError::Config(format!("measurement rays: {e}"))),
    }
}

fn recover_q(ctx: &mut Ctx) -> Result<(), CliError> {
    let q = phantom(ctx, &ctx.cfg.q.clone(), "q_true.bin")?;
    let opts = q_options(ctx)?;
    let rays = measurement_rays(ctx)?;
    let g = &ctx.grid;
    let run = |fam: &dyn MeasurementFamily| reconstruct_q(fam, &ctx.medium, g, &opts).stage("reconstruct q");
    let (rec, rep): (SpacetimeField, QReport) = match &ctx.cfg.inversion.measurements {
        Some(dir) => {
            let fam = DirectoryFamily::open(dir, g, &rays).stage("open measurements")?;
            run(&fam)?
        }
        None => {
            let sim = SimulatedFamily::new(g, &with_q(&ctx.medium, &q), &rays, ctx.cfg.ladder.delta, &ctx.solver);
            if ctx.cfg.inversion.record {
                let dir = ctx.out.dir.join("measurements");
                let fam = RecordingFamily::new(sim, &dir, g).stage("record measurements")?;
                let r = run(&fam)?;
                let entries = fam.finish().stage("record measurements")?;
                ctx.out.files.push(format!("measurements/{}", io::MANIFEST));
                for e in entries {
                    ctx.out.files.push(format!("measurements/{}", e.file));
                }
                r
            } else {
                run(&sim)?
            }
        }
    };
    let p = ctx.out.field("q_hat.bin");
    io::write_spacetime_field(&p, g, &rec).stage("write q estimate")?;
    if let Some(s) = &rep.extracted {
        let p = ctx.out.field("lightray_data.bin");
        io::write_sinogram(&p, g, s).stage("write light-ray data")?;
    }
    let interior = relative_l2(g, &rec, &q, interior_mask(g));
    let full = relative_l2(g, &rec, &q, |_, _| true);
    let rows = vec![
        row("rel_l2_interior", interior),
        row("rel_l2_full", full),
        row("q_hat_linf", rec.linf()),
        row("iterations", rep.iterations as f64),
        row("converged", if rep.converged { 1.0 } else { 0.0 }),
        row("noise_floor", rep.noise_floor),
        row("data_norm", rep.data_norm),
    ];
    ctx.out.csv("errors.csv", &["metric", "value"], &rows)?;
    if is_zero(&q) {
        ctx.checks.push(Check { name: "null_q_hat_linf".into(), value: rec.linf(), limit: Some(rep.noise_floor), pass: rec.linf() <= rep.noise_floor.max(1e-12) });
    } else {
        ctx.checks.push(Check::below("rel_l2_interior", interior, ctx.cfg.thresholds.q_rel_l2));
    }
    Ok(())
}

fn add_noise(m: &mut Measurement, level: f64, seed: u64) {
    if level <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = level * m.max_abs();
    for v in m.final_values.iter_mut().chain(m.outgoing.data.iter_mut()) {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        *v += C64::new(a, b) * s;
    }
}

fn recover_source(ctx: &mut Ctx) -> Result<(), CliError> {
    let s = phantom(ctx, &ctx.cfg.source.clone(), "source_true.bin")?;
    let g = &ctx.grid;
    let med = ctx.medium.clone().without_q();
    let t = Transport::with_options(g, &med, ctx.solver.clone());
    let src = s.expand(g.ntheta);
    let zero = BoundaryData::zero();
    let sol = t.solve_linear(Some(&src), &zero).stage("source forward solve")?;
    let outgoing = t.outgoing(&sol.field, Some(&src), &zero, false, &g.boundary_rays).stage("source forward solve")?;
    let mut meas = Measurement { final_values: t.final_values(&sol.field), outgoing };
    add_noise(&mut meas, ctx.cfg.inversion.noise, ctx.cfg.seed);
    let mp = ctx.out.field("measurement.bin");
    io::write_measurement(&mp, g, &g.boundary_rays, &meas).stage("write measurement")?;
    let inv = &ctx.cfg.inversion;
    let mut lo = LightrayOptions { energy: inv.energy.unwrap_or(0.9999), ..LightrayOptions::default() };
    if let Some(r) = inv.reg {
        lo.lsq.reg = r;
    }
    if let Some(m) = inv.max_iter {
        lo.lsq.max_iter = m;
    }
    let (rec, rep) = reconstruct_source(g, &med, &meas, &g.boundary_rays, &lo).stage("reconstruct source")?;
    let p = ctx.out.field("source_hat.bin");
    io::write_spacetime_field(&p, g, &rec).stage("write source estimate")?;
    let interior = relative_l2(g, &rec, &s, interior_mask(g));
    let rows = vec![
        row("rel_l2_interior", interior),
        row("rel_l2_full", relative_l2(g, &rec, &s, |_, _| true)),
        row("source_hat_linf", rec.linf()),
        row("slices", rep.slices.len() as f64),
        row("imag_ratio", rep.imag_ratio),
    ];
    ctx.out.csv("errors.csv", &["metric", "value"], &rows)?;
    if is_zero(&s) {
        ctx.checks.push(Check { name: "null_source_hat_linf".into(), value: rec.linf(), limit: Some(0.0), pass: rec.linf() == 0.0 });
    } else {
        ctx.checks.push(Check::below("rel_l2_interior", interior, ctx.cfg.thresholds.source_rel_l2));
    }
    Ok(())
}

fn santalo_check(ctx: &mut Ctx) -> Result<(), CliError> {
    let g = &ctx.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for n in 0..ctx.cfg.santalo.samples {
        let k: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = move |p: PhasePoint| {
            2.0 + k[0] * p.x[0] + k[1] * p.x[1] + k[2] * p.theta.cos() + k[3] * (2.0 * p.theta).sin() + k[4] * p.x[0] * p.x[1] + k[5] * (p.x[0] + p.theta).cos()
        };
        let vol = g.volume_integral(&f);
        let san = g.santalo_integral(&f).stage("santalo integral")?;
        let gap = (vol - san).abs() / vol.abs();
        worst = worst.max(gap);
        rows.push(vec![n.to_string(), num(vol), num(san), num(gap)]);
    }
    ctx.out.csv("santalo.csv", &["sample", "volume", "santalo", "rel_gap"], &rows)?;
    ctx.checks.push(Check::below("santalo_max_gap", worst, ctx.cfg.thresholds.santalo));
    Ok(())
}
