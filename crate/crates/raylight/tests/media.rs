use proptest::prelude::*;
use raylight::geometry::Domain;
use raylight::grid::PhaseGrid;
use raylight::media::{validate_class_m, validate_omega, vertical_cutoff, Kernel, Medium, Sigma};
use std::f64::consts::PI;
use std::sync::Arc;

fn grid() -> PhaseGrid {
    PhaseGrid::build(&Domain::disk(1.0).unwrap(), 1.0, 6, 120, 16).unwrap()
}

#[test]
fn isotropic_critical_and_supercritical() {
    let g = grid();
    assert!(validate_omega(&Medium::constant(1.0, 1.0 / (2.0 * PI), 2).unwrap(), &g).pass);
    let bad = validate_omega(&Medium::constant(1.0, 1.0 / PI, 2).unwrap(), &g);
    assert!(!bad.pass);
    assert!((bad.out_excess - 1.0).abs() < 1e-12);
    assert!(!bad.messages.is_empty());
}

#[test]
fn constructed_subcritical_kernel_passes() {
    let g = grid();
    let sig = |x: [f64; 2], _t: f64| (1.0 + 0.5 * x[0]).max(0.0);
    let smax = 1.5;
    let kernel = Kernel::General(Arc::new(move |x, a, b| 0.9 * sig(x, a) * sig(x, b) / (2.0 * PI * smax)));
    let med = Medium::new(Sigma::Func(Arc::new(sig)), kernel, 2, smax, 0.9 * smax / (2.0 * PI)).unwrap();
    let rep = validate_omega(&med, &g);
    assert!(rep.pass, "{:?}", rep.messages);
    // Quadrature oracle for the row integral: ∫ μ dv' = 0.9 σ(x)²/smax ≤ σ(x).
    assert!(rep.out_excess <= 0.0 && rep.in_excess <= 0.0);
}

#[test]
fn class_m_examples() {
    let g = grid();
    let dom = g.domain.clone();
    let zero = validate_class_m(&Medium::constant(1.0, 0.0, 2).unwrap(), &dom, &g, None).unwrap();
    assert!(zero.symmetric && zero.support_ok);

    let iso = validate_class_m(&Medium::constant(1.0, 0.1, 2).unwrap(), &dom, &g, None).unwrap();
    assert!(iso.symmetric);
    assert!(!iso.support_ok);
    assert!(iso.worst_violation.is_some());

    let chi = vertical_cutoff(&dom, 0.1, 0.3);
    let sep = Medium::new(Sigma::Constant(1.0), Kernel::Separable { c: 0.1, chi }, 2, 1.0, 0.1).unwrap();
    let rep = validate_class_m(&sep, &dom, &g, None).unwrap();
    assert!(rep.symmetric && rep.support_ok, "{rep:?}");
    assert!((rep.cutoff - 0.1).abs() < 1e-12);
}

#[test]
fn asymmetric_kernel_is_flagged() {
    let g = grid();
    let k = Kernel::General(Arc::new(|_, a: f64, b: f64| 0.05 * (1.0 + 0.5 * (a - 2.0 * b).cos())));
    let med = Medium::new(Sigma::Constant(1.0), k, 2, 1.0, 0.1).unwrap();
    let rep = validate_class_m(&med, &g.domain, &g, None).unwrap();
    assert!(!rep.symmetric);
    assert!(rep.max_asymmetry > 1e-3);
}

#[test]
fn power_below_two_rejected() {
    assert!(Medium::constant(1.0, 0.0, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scaling_down_keeps_omega(mu in 0.0f64..0.16, s in 0.0f64..1.0, sigma in 0.5f64..1.5) {
        let g = grid();
        let med = Medium::constant(sigma, mu, 2).unwrap();
        let before = validate_omega(&med, &g).pass;
        let mut smaller = med.clone();
        smaller.mu = med.mu.scaled(s);
        smaller.mu0 = med.mu0 * s;
        if before {
            prop_assert!(validate_omega(&smaller, &g).pass);
        }
    }

    #[test]
    fn zero_kernel_always_in_class_m(sigma in 0.0f64..3.0, a in 1.0f64..2.0) {
        let d = Domain::ellipse(a, 1.0).unwrap();
        let g = PhaseGrid::build(&d, 1.0, 6, 60, 8).unwrap();
        let rep = validate_class_m(&Medium::constant(sigma, 0.0, 3).unwrap(), &d, &g, None).unwrap();
        prop_assert!(rep.symmetric && rep.support_ok);
    }
}
