//! Structural invariants of the mesh and the assembled cell forms.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

use waveguide_core::cell::{assemble_forms, AssembledForms};
use waveguide_core::index::{IndexField, ScalarField};
use waveguide_core::mesh::{build_mesh, CellGeometry, EdgeTag, Mesh, Obstacle};

fn geometry(height: f64, h: f64, obstacle: Option<(f64, f64)>) -> CellGeometry {
    CellGeometry {
        strip_height: height,
        obstacles: obstacle.map(|(y, r)| vec![Obstacle { center: [0.5, y], radius: r }]).unwrap_or_default(),
        mesh_target_h: h,
    }
}

fn cosine_index(amplitude: f64, frequency: f64) -> IndexField {
    IndexField {
        base: ScalarField::Constant(1.0),
        direction: ScalarField::CosineProfile { offset: 0.0, amplitude, frequency, window: [0.0, 1.0] },
    }
}

fn forms(height: f64, h: f64, obstacle: Option<(f64, f64)>) -> AssembledForms {
    let mesh = build_mesh(&geometry(height, h, obstacle)).expect("mesh");
    assemble_forms(&mesh, &cosine_index(0.3, 2.0)).expect("assembly")
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn max_abs_c(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.norm()))
}

/// Permutation matrix of the unknown-level mirror map.
fn mirror_matrix(f: &AssembledForms) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(f.n_dofs, f.n_dofs);
    for (i, &j) in f.mirror.iter().enumerate() {
        p[(j, i)] = 1.0;
    }
    p
}

fn total_area(mesh: &Mesh) -> f64 {
    (0..mesh.elements.len()).map(|e| mesh.element_area(e)).sum()
}

fn obstacle_strategy() -> impl Strategy<Value = Option<(f64, f64)>> {
    prop_oneof![Just(None), (0.35..0.65f64, 0.08..0.2f64).prop_map(Some)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mesh_is_conforming_periodic_and_mirror_symmetric(
        height in 0.2..1.0f64,
        inv_h in 6usize..14,
        obstacle in obstacle_strategy(),
    ) {
        let obstacle = obstacle.map(|(y, r)| (y * height, r * height));
        let geom = geometry(height, 1.0 / inv_h as f64, obstacle);
        let mesh = build_mesh(&geom).unwrap();
        // Conforming tiling: areas add up to the cell minus the obstacle.
        let hole = obstacle.map(|(_, r)| std::f64::consts::PI * r * r).unwrap_or(0.0);
        let area = total_area(&mesh);
        prop_assert!((0..mesh.elements.len()).all(|e| mesh.element_area(e) > 0.0));
        // A polygonal hole inscribed in the disk removes between half of its
        // area (coarsest admissible polygon) and all of it.
        prop_assert!(area >= height - hole - 1e-12 && area <= height - 0.5 * hole + 1e-12, "area {area} vs {}", height - hole);
        // Periodic pairing preserves x₂ exactly.
        for &(l, r) in &mesh.periodic_pairing {
            prop_assert_eq!(mesh.nodes[l][1], mesh.nodes[r][1]);
            prop_assert_eq!(mesh.nodes[l][0], 0.0);
            prop_assert_eq!(mesh.nodes[r][0], 1.0);
        }
        // Trace nodes share one x₁.
        prop_assert!(mesh.trace_nodes.iter().all(|&k| mesh.nodes[k][0] == 0.5));
        // The mirror is an involutive node permutation mapping x₁ to 1 − x₁.
        for (i, &j) in mesh.mirror.iter().enumerate() {
            prop_assert_eq!(mesh.mirror[j], i);
            prop_assert!((mesh.nodes[j][0] - (1.0 - mesh.nodes[i][0])).abs() <= 1e-12);
            prop_assert!((mesh.nodes[j][1] - mesh.nodes[i][1]).abs() <= 1e-12);
        }
        // The strip walls are tagged Neumann.
        let neumann = mesh.boundary_edges.iter().filter(|(_, t)| *t == EdgeTag::Neumann).count();
        prop_assert!(neumann > 0);
    }

    #[test]
    fn forms_are_hermitian_and_mirror_covariant(
        inv_h in 6usize..12,
        obstacle in obstacle_strategy(),
    ) {
        let height = 0.5;
        let f = forms(height, 1.0 / inv_h as f64, obstacle.map(|(y, r)| (y * height, r * height)));
        let w = &f.whole;
        let (k, m0, mb, md) = (w.k.to_dense(), w.m0.to_dense(), w.m_base.to_dense(), w.m_dir.to_dense());
        let scale = max_abs(&k);
        for m in [&k, &m0, &mb, &md] {
            prop_assert!(max_abs(&(m - m.transpose())) <= 1e-12 * scale);
        }
        prop_assert!(m0.clone().cholesky().is_some());
        prop_assert!(mb.clone().cholesky().is_some());
        let c = f.c_skew.to_dense();
        prop_assert!(max_abs(&(&c + c.transpose())) <= 1e-12 * scale);
        let p = mirror_matrix(&f);
        prop_assert!(max_abs(&(&p * &p - DMatrix::identity(f.n_dofs, f.n_dofs))) == 0.0);
        for m in [&k, &m0, &mb, &md] {
            prop_assert!(max_abs(&(&p * m * &p - m)) <= 1e-12 * scale);
        }
        prop_assert!(max_abs(&(&p * &c * &p + &c)) <= 1e-12 * scale);
    }

    #[test]
    fn bloch_pencil_symmetries(re in -3.0..3.0f64, im in -0.5..0.5f64, eps in -0.1..0.1f64) {
        let f = forms(0.3, 1.0 / 8.0, None);
        let p = C64::new(re, im);
        let (a, m) = f.bloch_matrix(p, eps);
        let scale = max_abs_c(&a);
        // Schwarz reflection: A(p̄) = A(p)ᴴ.
        let (a_conj, _) = f.bloch_matrix(p.conj(), eps);
        prop_assert!(max_abs_c(&(&a_conj - a.adjoint())) <= 1e-12 * scale);
        // Mirror conjugation: P A(p) P = A(−p).
        let pm = mirror_matrix(&f).map(|v| C64::new(v, 0.0));
        let (a_neg, _) = f.bloch_matrix(-p, eps);
        prop_assert!(max_abs_c(&(&pm * &a * &pm - a_neg)) <= 1e-12 * scale);
        // Real p: Hermitian pencil with a positive mass, hence real spectrum.
        let (a_real, _) = f.bloch_matrix(C64::new(re, 0.0), eps);
        prop_assert!(max_abs_c(&(&a_real - a_real.adjoint())) <= 1e-12 * scale);
        prop_assert!(max_abs_c(&(&m - m.adjoint())) == 0.0);
    }
}

#[test]
fn trace_line_weights_cover_the_interface() {
    let f = forms(0.4, 1.0 / 10.0, None);
    let total: f64 = f.trace.weights.iter().sum();
    assert!((total - 0.4).abs() <= 1e-12);
    assert!(f.trace.weights.iter().all(|&w| w > 0.0));
}

#[test]
fn obstacle_shortens_the_interface() {
    let f = forms(0.5, 1.0 / 10.0, Some((0.25, 0.1)));
    let total: f64 = f.trace.weights.iter().sum();
    assert!(total < 0.5 - 0.15 && total > 0.5 - 0.25, "trace length {total}");
}
