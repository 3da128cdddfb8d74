//! Finite tiled strip: assembly structure, the unperturbed spectrum against
//! the Bloch bands, and the mirror symmetry between the two media.

mod common;

use std::f64::consts::PI;

use common::{coarse_fixture, default_fixture};
use waveguide_core::bands::BlochSolver;
use waveguide_core::supercell::{build_supercell, solve_supercell, SupercellSettings, Truncation};

fn settings(n: usize, truncation: Truncation) -> SupercellSettings {
    SupercellSettings { n_cells_per_side: n, truncation, n_eigen: 6, ..SupercellSettings::default() }
}

fn window(half_width: f64) -> (f64, f64) {
    let l = coarse_fixture().dirac.lambda_star;
    (l - half_width, l + half_width)
}

#[test]
fn tiling_counts_shared_faces_once() {
    let fx = coarse_fixture();
    let mesh = &fx.model.forms.mesh;
    let face = mesh.periodic_pairing.len();
    let interior = mesh.nodes.len() - face;
    for n in [1usize, 3] {
        let cells = 2 * n + 1;
        let neumann = build_supercell(&fx.model.forms, 0.01, &settings(n, Truncation::Neumann), window(1.0)).unwrap();
        assert_eq!(neumann.n_dofs(), cells * interior + face);
        let dirichlet = build_supercell(&fx.model.forms, 0.01, &settings(n, Truncation::Dirichlet), window(1.0)).unwrap();
        assert_eq!(dirichlet.n_dofs(), cells * interior - face);
        let mut seen: Vec<i64> = neumann.cell_of.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen, (-(n as i64)..=n as i64).collect::<Vec<_>>());
        // Symmetric pencil.
        for m in [&neumann.stiffness, &neumann.mass] {
            let dense = m.to_dense();
            assert!((&dense - dense.transpose()).amax() <= 1e-12 * dense.amax());
        }
    }
}

/// Lowest eigenvalues of the unperturbed Neumann strip of `2n+1` cells.
fn lowest_strip_values(fx: &common::Fixture, n: usize, count: usize) -> Vec<f64> {
    let problem = build_supercell(&fx.model.forms, 0.0, &settings(n, Truncation::Neumann), (-1.0, 20.0)).unwrap();
    let mut values: Vec<f64> = solve_supercell(&problem, -0.5, count, 1e-12).unwrap().iter().map(|m| m.eigenvalue).collect();
    values.sort_by(f64::total_cmp);
    values
}

#[test]
fn unperturbed_strip_matches_the_uniform_guide() {
    // Without the perturbation the structure is a uniform strip of length
    // L = 2N+1 with Neumann ends: the lowest eigenvalues are (πj/L)².
    let n = 3;
    let length = (2 * n + 1) as f64;
    let exact: Vec<f64> = (0..6).map(|j| (PI * j as f64 / length).powi(2)).collect();
    let error = |fx: &common::Fixture| {
        let values = lowest_strip_values(fx, n, exact.len());
        assert_eq!(values.len(), exact.len());
        assert!(values[0].abs() <= 1e-9);
        values.iter().zip(&exact).skip(1).map(|(v, e)| (v - e).abs() / e).fold(0.0, f64::max)
    };
    let (coarse, fine) = (error(coarse_fixture()), error(default_fixture()));
    assert!(fine <= 1e-3, "relative error {fine:e}");
    let order = (coarse / fine).log2();
    assert!(order > 1.8, "error {coarse:e} -> {fine:e}, order {order:.2}");
    // The reflected strip is periodic over 2L, so the same values are the
    // lowest band at p = πj/L.
    let fx = default_fixture();
    let solver = BlochSolver::new(&fx.model.forms, 0.0).unwrap();
    let values = lowest_strip_values(fx, n, exact.len());
    for (j, v) in values.iter().enumerate().skip(1) {
        let band = solver.eigenvalues(PI * j as f64 / length)[0];
        assert!((band - v).abs() <= 2.0 * fine * v, "j = {j}: band {band} vs strip {v}");
    }
}

#[test]
fn opposite_media_give_mirrored_strips() {
    let fx = coarse_fixture();
    let eps = 0.05;
    let te = fx.t_abs() * eps;
    let s = settings(4, Truncation::Dirichlet);
    let solve = |e: f64| {
        let problem = build_supercell(&fx.model.forms, e, &s, window(2.0 * te)).unwrap();
        solve_supercell(&problem, fx.dirac.lambda_star, 6, 1e-11).unwrap()
    };
    let (plus, minus) = (solve(eps), solve(-eps));
    assert_eq!(plus.len(), minus.len());
    for (a, b) in plus.iter().zip(&minus) {
        assert!((a.eigenvalue - b.eigenvalue).abs() <= 1e-8 * a.eigenvalue, "{} vs {}", a.eigenvalue, b.eigenvalue);
        assert!((a.localization_score - b.localization_score).abs() <= 1e-6);
        for ((k, x), (kb, y)) in a.cell_norms.iter().zip(b.cell_norms.iter().rev()) {
            assert_eq!(*k, -kb);
            assert!((x - y).abs() <= 1e-5 * (x + y).max(1e-12), "cell {k}: {x} vs {y}");
        }
    }
}
