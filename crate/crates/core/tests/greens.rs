//! Green's-function invariants: spectral exactness, symmetry, contour
//! independence, analyticity and the complex momentum roots.

mod common;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

use common::{cases, coarse_fixture};
use waveguide_core::bands::BlochSolver;
use waveguide_core::greens::{
    contour_check, find_complex_roots, residue_identity_check, trace_resolvent, ContinuedGreens, ContourSpec,
    QuadratureSettings, TraceGrid,
};

fn rel(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn vector(values: &[(f64, f64)]) -> Vec<C64> {
    values.iter().map(|&(re, im)| C64::new(re, im)).collect()
}

fn continued(eps: f64) -> ContinuedGreens {
    let fx = coarse_fixture();
    let quad = QuadratureSettings::default();
    let spec = ContourSpec::c_eps(&fx.dirac, fx.t_abs(), eps, &quad);
    ContinuedGreens::new(&fx.model.forms, &fx.dirac, eps, spec).unwrap()
}

proptest! {
    #![proptest_config(cases(12))]

    #[test]
    fn extension_is_the_adjoint_of_restriction(
        phi in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 64),
        u in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 400),
    ) {
        let fx = coarse_fixture();
        let tr = TraceGrid::from_forms(&fx.model.forms);
        let phi = &vector(&phi)[..tr.len()];
        let u = &vector(&u)[..tr.n_dofs];
        let lhs: C64 = tr.extend(phi).iter().zip(u).map(|(a, b)| a * b).sum();
        let rhs = tr.pairing(phi, &tr.restrict(u));
        prop_assert!((lhs - rhs).norm() <= 1e-13 * (1.0 + lhs.norm()));
    }

    #[test]
    fn band_sum_reproduces_the_direct_resolvent(p in -PI..PI, lam_re in -40.0..-1.0f64, lam_im in -1.0..1.0f64) {
        // Below the spectrum every band is evanescent; the full band sum is
        // the exact discrete resolvent.
        let fx = coarse_fixture();
        let forms = &fx.model.forms;
        let tr = TraceGrid::from_forms(forms);
        let lambda = C64::new(lam_re, lam_im);
        let direct = trace_resolvent(forms, 0.0, p, lambda, &tr).unwrap();
        let (vals, vecs) = BlochSolver::new(forms, 0.0).unwrap().solve(p);
        let mut sum = DMatrix::from_element(tr.len(), tr.len(), C64::new(0.0, 0.0));
        for (n, &value) in vals.iter().enumerate() {
            let t: Vec<C64> = vecs.column(n).iter().copied().collect();
            let t = tr.restrict(&t);
            sum += tr.dyad(&t, &t) / (lambda - value);
        }
        prop_assert!(rel(&sum, &direct) <= 1e-9, "relative difference {:e}", rel(&sum, &direct));
    }

    #[test]
    fn resolvent_obeys_schwarz_symmetry(p in -PI..PI, lam_re in 150.0..260.0f64, lam_im in 0.1..2.0f64) {
        let fx = coarse_fixture();
        let tr = TraceGrid::from_forms(&fx.model.forms);
        let lambda = C64::new(lam_re, lam_im);
        let g = tr.symmetrized(&trace_resolvent(&fx.model.forms, 0.0, p, lambda, &tr).unwrap());
        let g_conj = tr.symmetrized(&trace_resolvent(&fx.model.forms, 0.0, p, lambda.conj(), &tr).unwrap());
        prop_assert!(rel(&g_conj, &g.adjoint()) <= 1e-12);
    }

    #[test]
    fn complex_roots_are_mirrored_and_sign_consistent(a in -1.0..1.0f64, b in -1.0..1.0f64) {
        let fx = coarse_fixture();
        let eps = 1e-2;
        let step = 0.4 * fx.t_abs() * eps;
        let lambda = C64::new(fx.dirac.lambda_star + a * step, b * step);
        let root = find_complex_roots(&fx.model.forms, &fx.dirac, eps, lambda, eps.cbrt()).unwrap();
        prop_assert_eq!(root.q_minus, -root.q_plus);
        prop_assert!(*root.newton_residuals.last().unwrap() <= 1e-10 * fx.dirac.lambda_star);
        prop_assert!(root.branch_certificate.consistent);
        if b != 0.0 {
            prop_assert_eq!(root.q_plus.im.signum(), b.signum());
        }
        prop_assert!((root.q_plus - fx.dirac.q_star).norm() < eps.cbrt());
    }
}

#[test]
fn continued_operator_is_independent_of_the_semicircle_radius() {
    let fx = coarse_fixture();
    let eps = 1e-2;
    let te = fx.t_abs() * eps;
    for lambda in [C64::new(fx.dirac.lambda_star + 0.25 * te, 0.0), C64::new(fx.dirac.lambda_star - 0.2 * te, -0.1 * te)] {
        let rep = contour_check(&fx.model.forms, &fx.dirac, fx.t_abs(), eps, lambda, &QuadratureSettings::default()).unwrap();
        assert!(rep.independence <= 1e-8, "independence {:e} at {lambda}", rep.independence);
        assert!(rep.self_convergence <= 1e-8, "self-convergence {:e}", rep.self_convergence);
    }
}

#[test]
fn continued_operator_is_analytic_in_the_energy() {
    let fx = coarse_fixture();
    let eps = 1e-2;
    let te = fx.t_abs() * eps;
    let g = continued(eps);
    let centre = C64::new(fx.dirac.lambda_star + 0.1 * te, -0.05 * te);
    let radius = 0.1 * te;
    // Mean value property on a circle (trapezoid rule, spectrally accurate).
    let nodes = 24;
    let mut mean = g.operator(centre).matrix * C64::new(0.0, 0.0);
    for k in 0..nodes {
        let z = centre + C64::from_polar(radius, 2.0 * PI * k as f64 / nodes as f64);
        mean += g.operator(z).matrix / C64::new(nodes as f64, 0.0);
    }
    let exact = g.operator(centre).matrix;
    assert!(rel(&mean, &exact) <= 1e-9, "mean value defect {:e}", rel(&mean, &exact));
    // The spectral derivative matches a centred difference.
    let dl = 1e-4 * te;
    let fd = (g.operator(centre + dl).matrix - g.operator(centre - dl).matrix) / C64::new(2.0 * dl, 0.0);
    assert!(rel(&fd, &g.derivative(centre)) <= 1e-6);
}

#[test]
fn residue_term_is_essential_and_exact() {
    let fx = coarse_fixture();
    let eps = 1e-2;
    let lambda = fx.dirac.lambda_star + 0.25 * fx.t_abs() * eps;
    let rep = residue_identity_check(&fx.model.forms, &fx.dirac, eps, lambda, &QuadratureSettings::default()).unwrap();
    assert!(rep.discrepancy <= 1e-8, "discrepancy {:e}", rep.discrepancy);
    assert!(rep.discrepancy_without_residue > 0.1);
    assert!((rep.slope_plus + rep.slope_minus).abs() <= 1e-8 * rep.slope_plus.abs());
}
