use raylight::geometry::Domain;
use raylight::grid::{interior_mask, relative_l2, PhaseField, PhaseGrid, SpacetimeField};
use raylight::inversion::{
    differenced_measurement, identity_residual, ladder_linearize, monotonicity_check, reconstruct_q, reconstruct_source, Certificate, EpsilonLadder,
    MeasurementFamily, MollifiedLightray, MonotonicityOptions, ProbePlan, QMode, QOptions, SimulatedFamily,
};
use raylight::lsq::LinearOperator;
use raylight::media::Medium;
use raylight::raytransforms::LightrayOptions;
use raylight::transport::{BoundaryData, Interpolated, Measurement, PhaseKind, SolverOptions, Transport};
use raylight::{Error, C64};
use std::f64::consts::PI;
use std::sync::Arc;

fn grid(nx: usize, nth: usize, nt: usize) -> PhaseGrid {
    PhaseGrid::build(&Domain::disk(1.0).unwrap(), 2.0, nt, nx, nth).unwrap()
}

fn qf(t: f64, x: [f64; 2]) -> f64 {
    0.8 * (-(t - 1.0).powi(2) / (2.0 * 0.09)).exp() * (-((x[0] - 0.2).powi(2) + (x[1] + 0.1).powi(2)) / (2.0 * 0.09)).exp()
}

fn unit_data() -> BoundaryData {
    BoundaryData::new(Some(Arc::new(|_| C64::new(1.0, 0.0))), Some(Arc::new(|_, _| C64::new(1.0, 0.0))))
}

#[test]
fn zero_q_gives_zero_differences() {
    let g = grid(60, 8, 9);
    let med = Medium::constant(0.3, 0.05 / (2.0 * PI), 2).unwrap();
    let t = Transport::new(&g, &med);
    for lin in ladder_linearize(&t, &unit_data(), &[0.2, 0.1], 2, &g.boundary_rays).unwrap() {
        assert_eq!(lin.field.linf(), 0.0);
        assert_eq!(lin.measurement.max_abs(), 0.0);
    }
    let fam = SimulatedFamily::new(&g, &med.clone().with_q(SpacetimeField::zeros(&g)), &g.boundary_rays, 1.0, &SolverOptions::default());
    let (d, _) = differenced_measurement(&fam, "p", &unit_data(), 0.1, 2, None, 1e-12).unwrap();
    assert!(d.max_abs() < 1e-9, "{}", d.max_abs());
}

#[test]
fn second_difference_converges_to_the_linearisation() {
    let g = grid(100, 16, 17);
    let q = SpacetimeField::from_fn(&g, qf);
    let med = Medium::constant(0.3, 0.05 / (2.0 * PI), 2).unwrap();
    let lin = Transport::new(&g, &med);
    let u = lin.solve_linear(None, &unit_data()).unwrap().field;
    let mut src = PhaseField::zeros(&g);
    for j in 0..g.ntheta {
        for i in 0..g.nx() {
            for k in 0..g.nt {
                src.set(k, i, j, -(q.get(k, i) * u.get(k, i, j).powu(2)));
            }
        }
    }
    let w = lin.solve_linear(Some(&src), &BoundaryData::zero()).unwrap().field;
    let t = Transport::new(&g, &med.clone().with_q(q));
    let lins = ladder_linearize(&t, &unit_data(), &[0.2, 0.1, 0.05], 2, &g.boundary_rays).unwrap();
    let errs: Vec<f64> = lins.iter().map(|l| l.field.zip_map(&w, |a, b| a - b).l2(&g) / w.l2(&g)).collect();
    for p in errs.windows(2) {
        assert!(p[1] < 0.7 * p[0], "{errs:?}");
    }
}

#[test]
fn identity_is_trivial_for_equal_media() {
    let g = grid(60, 8, 9);
    let q = SpacetimeField::from_fn(&g, qf);
    let med = Medium::constant(0.3, 0.0, 2).unwrap().with_q(q);
    let t = Transport::new(&g, &med.clone().without_q());
    let u = t.solve_linear(None, &unit_data()).unwrap().field;
    let u0 = t.solve_adjoint(None, &unit_data()).unwrap().field;
    let rep = identity_residual(&g, &med, &med, &u, &Interpolated { grid: &g, field: &u0 }, &g.boundary_rays, &SolverOptions::default()).unwrap();
    assert_eq!(rep.lhs.norm(), 0.0);
    assert_eq!(rep.rhs.norm(), 0.0);
    assert_eq!(rep.gap, 0.0);
    let other = Medium::constant(0.3, 0.0, 3).unwrap();
    assert!(matches!(
        identity_residual(&g, &med, &other, &u, &Interpolated { grid: &g, field: &u0 }, &g.boundary_rays, &SolverOptions::default()),
        Err(Error::ShapeMismatch(_))
    ));
}

#[test]
fn family_replays_the_forward_solver() {
    let g = grid(60, 8, 9);
    let med = Medium::constant(0.3, 0.05 / (2.0 * PI), 2).unwrap().with_q(SpacetimeField::from_fn(&g, qf));
    let fam = SimulatedFamily::new(&g, &med, &g.boundary_rays, 1.0, &SolverOptions::default());
    let a = fam.measure("x", &unit_data(), 0.3, None).unwrap();
    let (_, b) = Transport::new(&g, &med).measure_on(&unit_data().scaled(0.3), &g.boundary_rays, None).unwrap();
    assert_eq!(a.final_values, b.final_values);
    assert_eq!(a.outgoing.data, b.outgoing.data);
}

#[test]
fn probe_plan_validation() {
    let g = grid(60, 8, 9);
    let rays = g.boundary_rays.clone();
    assert!(matches!(ProbePlan::new(&g, &rays, 0.0, 2, None, None, PhaseKind::Euclidean), Err(Error::ZeroLambda)));
    assert!(matches!(ProbePlan::new(&g, &rays, 10.0, 2, Some(3.5), None, PhaseKind::Euclidean), Err(Error::PlanSupportViolation(_))));
    let mut plan = ProbePlan::new(&g, &rays, 10.0, 2, None, None, PhaseKind::Euclidean).unwrap();
    assert_eq!(plan.eta, 20.0);
    plan.times.truncate(plan.times.len() / 2);
    assert!(matches!(plan.validate(&g), Err(Error::PlanSupportViolation(_))));
    let mut o = QOptions::direct(EpsilonLadder::geometric(0.1, 0.5, 2, 2).unwrap());
    o.mode = QMode::GoPipeline;
    let med = Medium::constant(0.3, 0.0, 2).unwrap();
    let fam = SimulatedFamily::new(&g, &med, &rays, 1.0, &SolverOptions::default());
    assert!(reconstruct_q(&fam, &med, &g, &o).is_err());
}

#[test]
fn mollified_slices_match_the_time_domain_operator() {
    let g = grid(100, 16, 17);
    let med = Medium::constant(0.3, 0.0, 2).unwrap();
    let rays = g.clone().with_rays(16, 8).unwrap().boundary_rays;
    let plan = ProbePlan::new(&g, &rays, 20.0, 2, Some(0.4), None, PhaseKind::Euclidean).unwrap();
    let op = MollifiedLightray::build(&g, &med, &plan).unwrap();
    let q = SpacetimeField::from_fn(&g, qf);
    // The slices sum the pulse over the unbounded time lattice, so pad the
    // plan window by a few pulse widths.
    let pad = 8;
    let times: Vec<f64> = (0..plan.times.len() + 2 * pad).map(|k| plan.times[0] + (k as f64 - pad as f64) * g.dt).collect();
    let tv = op.apply(&g, &q, &times);
    let n = times.len();
    for eta in [0.0, 2.5, -7.0] {
        let sl = op.slice(eta, 50_000_000).unwrap();
        let qh: Vec<C64> = (0..g.nx()).map(|i| (0..g.nt).map(|k| q.get(k, i) * C64::from_polar(g.time_weight(k), -eta * g.time(k))).sum()).collect();
        let mut y = vec![C64::new(0.0, 0.0); sl.nrays];
        sl.apply(&qh, &mut y);
        let (mut e, mut nn) = (0.0, 0.0);
        for (r, yr) in y.iter().enumerate() {
            let d: C64 = (0..n).map(|k| tv[r * n + k] * C64::from_polar(g.dt, -eta * times[k])).sum();
            e += (d - yr).norm_sqr();
            nn += d.norm_sqr();
        }
        assert!((e / nn).sqrt() < 1e-10, "eta {eta}: {}", (e / nn).sqrt());
    }
}

#[test]
fn monotonicity_certificates() {
    let g = grid(100, 16, 17);
    let q = SpacetimeField::from_fn(&g, qf);
    let med1 = Medium::constant(0.3, 0.0, 2).unwrap().with_q(SpacetimeField::zeros(&g));
    let med2 = Medium::constant(0.3, 0.0, 2).unwrap().with_q(q);
    let o = MonotonicityOptions::default();
    match monotonicity_check(&g, &med1, &med2, &o).unwrap() {
        Certificate::Distinct { max_integral, time, .. } => {
            assert!(max_integral > 1e-4);
            assert!((time - 1.0).abs() <= 0.25, "located at t = {time}");
        }
        c => panic!("{c:?}"),
    }
    assert!(matches!(monotonicity_check(&g, &med2, &med2, &o).unwrap(), Certificate::Equal { .. }));
    assert!(matches!(monotonicity_check(&g, &med2, &med1, &o), Err(Error::MonotonicityViolated { .. })));
}

#[test]
fn source_null_and_scattering_refusal() {
    let g = grid(100, 16, 17);
    let med = Medium::constant(0.3, 0.0, 2).unwrap();
    let zero = Measurement::zeros(&g, &g.boundary_rays);
    let (s, _) = reconstruct_source(&g, &med, &zero, &g.boundary_rays, &LightrayOptions::default()).unwrap();
    assert_eq!(s.linf(), 0.0);
    let scat = Medium::constant(0.3, 0.1, 2).unwrap();
    match reconstruct_source(&g, &scat, &zero, &g.boundary_rays, &LightrayOptions::default()) {
        Err(Error::Stage { source, .. }) => assert!(matches!(*source, Error::NonzeroScattering)),
        other => panic!("{:?}", other.err()),
    }
}

#[test]
fn direct_recovery_degrades_with_noise() {
    let g = grid(60, 8, 9);
    let q = SpacetimeField::from_fn(&g, qf);
    let med = Medium::constant(0.3, 0.05 / (2.0 * PI), 2).unwrap();
    let fam = SimulatedFamily::new(&g, &med.clone().with_q(q.clone()), &g.boundary_rays, 1.0, &SolverOptions::default());
    let mut o = QOptions::direct(EpsilonLadder::geometric(0.05, 0.5, 2, 2).unwrap());
    o.lsq.max_iter = 40;
    let mut errs = Vec::new();
    for noise in [0.0, 0.05, 0.2] {
        o.noise = noise;
        o.seed = 7;
        let (rec, _) = reconstruct_q(&fam, &med, &g, &o).unwrap();
        errs.push(relative_l2(&g, &rec, &q, interior_mask(&g)));
    }
    assert!(errs.windows(2).all(|e| e[1] >= e[0]), "{errs:?}");
    // Same seed, same result.
    let (a, _) = reconstruct_q(&fam, &med, &g, &o).unwrap();
    let (b, _) = reconstruct_q(&fam, &med, &g, &o).unwrap();
    assert_eq!(a.data, b.data);
}
