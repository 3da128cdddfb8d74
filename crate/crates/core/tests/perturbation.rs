//! Coupling coefficient and the asymptotic laws near the Dirac point and
//! the fold crossings.

mod common;

use num_complex::Complex64 as C64;
use proptest::prelude::*;

use common::{cases, default_fixture};
use waveguide_core::bands::group_velocity;
use waveguide_core::bands::{solve_bands, DiracData};
use waveguide_core::perturbation::{
    compute_coupling, eigenfunction_asymptotics_check, eigvec_coefficient, fold_asymptotics_check,
    gap_asymptotics_check, gap_ratio, reduced_dispersion, ReducedMatrix,
};

fn rephased(d: &DiracData, theta: f64, phi: f64) -> DiracData {
    let mut out = d.clone();
    let (a, b) = (C64::from_polar(1.0, theta), C64::from_polar(1.0, phi));
    out.v_n.iter_mut().for_each(|z| *z *= a);
    out.v_m.iter_mut().for_each(|z| *z *= b);
    out
}

#[test]
fn shipped_structure_satisfies_the_coupling_conditions() {
    let fx = default_fixture();
    let cp = &fx.coupling;
    assert!(cp.t_star.norm() > 0.0);
    assert!(cp.strict_condition(1e-8), "diagonal terms {} {}", cp.diag_n, cp.diag_m);
    assert!(cp.relaxed_condition_margin > 0.0);
}

#[test]
fn degenerate_point_has_zero_defect() {
    let fx = default_fixture();
    let rep = gap_asymptotics_check(&fx.model.forms, &fx.dirac, &fx.coupling, &[0.0], &[0.0]).unwrap();
    assert_eq!(rep.rows.len(), 1);
    assert!(rep.rows[0].defect == 0.0);
}

#[test]
fn gap_defect_converges_at_first_order() {
    let fx = default_fixture();
    let mut rows = Vec::new();
    for eps in [1e-2, 1e-3] {
        let scale = fx.t_abs() * eps / fx.dirac.alpha;
        let ps: Vec<f64> = [0.25, 0.5, 1.0, 2.0].iter().map(|f| f * scale).collect();
        rows.extend(gap_asymptotics_check(&fx.model.forms, &fx.dirac, &fx.coupling, &[eps], &ps).unwrap().rows);
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.p.abs() + r.eps.abs(), r.defect)).collect();
    let order = waveguide_core::perturbation::fit_loglog(&pts);
    assert!(order >= 0.9, "fitted order {order}");
}

#[test]
fn eigenvector_law_examples() {
    let fx = default_fixture();
    let eps = 1e-3;
    // f_ε(0) = t*/|t*| is unimodular.
    assert!((eigvec_coefficient(&fx.coupling, &fx.dirac, eps, 0.0).norm() - 1.0).abs() <= 1e-14);
    // Far on the p > 0 side the exact vector aligns with v_m.
    let p = 200.0 * fx.t_abs() * eps / fx.dirac.alpha;
    let row = eigenfunction_asymptotics_check(&fx.model.forms, &fx.dirac, &fx.coupling, eps, p).unwrap();
    assert!(row.coefficient.norm() < 1e-2);
    assert!(row.angle < 1e-2, "angle {}", row.angle);
}

#[test]
fn fold_examples() {
    let fx = default_fixture();
    let forms = &fx.model.forms;
    let d = &fx.dirac;
    // ε = 0, p = q*: the defect vanishes by definition of q*.
    let rep = fold_asymptotics_check(forms, d, &[0.0], &[0.0]).unwrap();
    assert!(rep.rows.iter().all(|r| r.defect <= 1e-9 * d.lambda_star));
    // The slope at the fold moves by at most C′·ε; the spectrum is even in ε,
    // so the shift is in fact quadratic and the ratio shift/ε shrinks.
    let bands = |eps: f64| solve_bands(forms, &[d.q_star], eps, d.band_indices.1 + 1).unwrap();
    let slope = |eps: f64| group_velocity(forms, &bands(eps).bands[d.band_indices.0][0], eps).unwrap();
    let s0 = slope(0.0);
    let shifts: Vec<f64> = [1e-3, 1e-2].iter().map(|&e| (slope(e) - s0).abs()).collect();
    assert!(shifts[0] / 1e-3 <= shifts[1] / 1e-2, "slope shifts {shifts:?}");
    assert!(shifts[1] <= 1e-2 * s0.abs(), "slope shifts {shifts:?}");
    // Sampled linear bounds hold with the fitted constants.
    let sweep = fold_asymptotics_check(forms, d, &[0.0, 1e-3], &[-1e-2, -1e-3, 1e-3, 1e-2]).unwrap();
    for r in &sweep.rows {
        let dist = (r.p - r.centre).abs() + r.eps.abs();
        assert!(r.defect <= sweep.c_value * dist * (1.0 + 1e-12));
        assert!(r.slope_defect <= sweep.c_slope * dist * (1.0 + 1e-12));
    }
}

proptest! {
    #![proptest_config(cases(12))]

    #[test]
    fn coupling_magnitude_is_gauge_invariant(theta in -3.0..3.0f64, phi in -3.0..3.0f64) {
        let fx = default_fixture();
        let cp = compute_coupling(&rephased(&fx.dirac, theta, phi), &fx.model.forms);
        prop_assert!((cp.t_star.norm() - fx.t_abs()).abs() <= 1e-10 * fx.t_abs());
    }

    #[test]
    fn reduced_matrix_is_hermitian_and_singular_on_the_model(eps in -0.1..0.1f64, p in -0.1..0.1f64, lam in -5.0..5.0f64) {
        let fx = default_fixture();
        let m = ReducedMatrix::new(&fx.dirac, &fx.coupling, eps, p, C64::new(lam, 0.0));
        prop_assert!(m.hermitian_defect() <= 1e-14 * (m.m11.norm() + m.m12.norm() + m.m22.norm()));
        prop_assert!((m.m12 - m.m21.conj()).norm() == 0.0);
        let (lo, hi) = reduced_dispersion(&fx.coupling, &fx.dirac, eps, p);
        for root in [lo, hi] {
            let at = ReducedMatrix::new(&fx.dirac, &fx.coupling, eps, p, C64::new(root - fx.dirac.lambda_star, 0.0));
            let size = (fx.dirac.alpha * p).powi(2) + (fx.t_abs() * eps).powi(2);
            prop_assert!(at.det().norm() <= 1e-9 * size.max(1e-300) + 1e-12);
        }
    }

    #[test]
    fn gap_is_even_in_eps(eps in 1e-3..2e-2f64) {
        let fx = default_fixture();
        let forms = &fx.model.forms;
        let plus = gap_ratio(forms, &fx.dirac, &fx.coupling, eps).unwrap();
        let minus = gap_ratio(forms, &fx.dirac, &fx.coupling, -eps).unwrap();
        prop_assert!((plus - minus).abs() <= 1e-7, "{plus} vs {minus}");
    }

    #[test]
    fn eigenvector_angle_is_mirror_symmetric(f in 0.1..5.0f64) {
        let fx = default_fixture();
        let eps = 1e-3;
        let p = f * fx.t_abs() * eps / fx.dirac.alpha;
        let right = eigenfunction_asymptotics_check(&fx.model.forms, &fx.dirac, &fx.coupling, eps, p).unwrap();
        let left = eigenfunction_asymptotics_check(&fx.model.forms, &fx.dirac, &fx.coupling, eps, -p).unwrap();
        prop_assert!((right.angle - left.angle).abs() <= 1e-6);
    }
}
