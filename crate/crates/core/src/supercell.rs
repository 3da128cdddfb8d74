//! Finite strip of tiled cells with the `−ε` medium left of the interface
//! line and the `+ε` medium right of it: an independent eigensolver check of
//! interface modes.
//!
//! The strip consists of the central cell (which contains the interface
//! line, with each half in its own medium) and `n_cells_per_side` full
//! cells on either side.

use serde::{Deserialize, Serialize};

use crate::cell::{eval_inside, p1_gradients, AssembledForms};
use crate::error::Result;
use crate::greens::fit_rate;
use crate::linalg::{c, reverse_cuthill_mckee, shift_invert_lanczos, BandMatrix, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    Neumann,
    Dirichlet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupercellSettings {
    pub n_cells_per_side: usize,
    pub truncation: Truncation,
    /// Number of eigenpairs requested around the shift.
    pub n_eigen: usize,
    /// Half-width of the reported window in units of `|t*|ε`.
    pub window: f64,
    pub tol: f64,
    /// Decay rates are fitted on cells `2..=fit_cells` of each side.
    pub fit_cells: usize,
}

impl Default for SupercellSettings {
    fn default() -> Self {
        SupercellSettings { n_cells_per_side: 16, truncation: Truncation::Neumann, n_eigen: 8, window: 1.0, tol: 1e-9, fit_cells: 8 }
    }
}

#[derive(Debug, Clone)]
pub struct SupercellProblem {
    pub n_cells_per_side: usize,
    pub truncation: Truncation,
    pub eps: f64,
    /// Last cell (per side) entering the decay fits.
    pub fit_cells: usize,
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    /// Global coordinates (interface at `x₁ = 0`) of the free unknowns.
    pub coords: Vec<[f64; 2]>,
    /// Cell index of every unknown for localization diagnostics.
    pub cell_of: Vec<i64>,
    /// Mass matrices restricted to the elements of each half cell, keyed by
    /// cell index and side (`true` = right half).
    half_mass: Vec<(i64, bool, CsrMatrix)>,
    pub lambda_window: (f64, f64),
    pub bandwidth: usize,
}

#[derive(Debug, Clone)]
pub struct SupercellMode {
    pub eigenvalue: f64,
    pub localization_score: f64,
    /// `L²(n²)` norm per cell, cells `−N..=N`.
    pub cell_norms: Vec<(i64, f64)>,
    /// Fitted decay rates of the cell norms to the right and to the left.
    pub decay_right: f64,
    pub decay_left: f64,
    pub field: Vec<f64>,
}

/// Assembles the joined strip.
pub fn build_supercell(forms: &AssembledForms, eps: f64, settings: &SupercellSettings, lambda_window: (f64, f64)) -> Result<SupercellProblem> {
    let mesh = &forms.mesh;
    let n_side = settings.n_cells_per_side as i64;
    let n_local = mesh.nodes.len();
    // Left-face node of a periodic pair -> its right-face partner.
    let mut left_partner = vec![usize::MAX; n_local];
    for &(l, r) in &mesh.periodic_pairing {
        left_partner[l] = r;
    }
    let cells: Vec<i64> = (-n_side..=n_side).collect();
    let mut global = vec![vec![usize::MAX; n_local]; cells.len()];
    let mut coords = Vec::new();
    let mut cell_of = Vec::new();
    for (ci, &k) in cells.iter().enumerate() {
        for a in 0..n_local {
            if ci > 0 && left_partner[a] != usize::MAX {
                global[ci][a] = global[ci - 1][left_partner[a]];
                continue;
            }
            global[ci][a] = coords.len();
            let x = mesh.nodes[a];
            coords.push([k as f64 + x[0] - 0.5, x[1]]);
            cell_of.push(k);
        }
    }
    let n = coords.len();
    let mut kt = Vec::new();
    let mut mt = Vec::new();
    let mut per_half: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); 2 * cells.len()];
    for (ci, &k) in cells.iter().enumerate() {
        for (e, tri) in mesh.elements.iter().enumerate() {
            let p = [mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]];
            let (g, area) = p1_gradients(&p);
            let centroid = mesh.centroid(e);
            let right_half = centroid[0] > 0.5;
            let right = if k == 0 { right_half } else { k > 0 };
            let e_sign = if right { eps } else { -eps };
            let gl = [global[ci][tri[0]], global[ci][tri[1]], global[ci][tri[2]]];
            for i in 0..3 {
                for j in 0..3 {
                    kt.push((gl[i], gl[j], area * (g[i][0] * g[j][0] + g[i][1] * g[j][1])));
                }
            }
            for s in 0..3 {
                let t = (s + 1) % 3;
                let q = [0.5 * (p[s][0] + p[t][0]), 0.5 * (p[s][1] + p[t][1])];
                let nv = eval_inside(&forms.index.base, q, centroid) + e_sign * eval_inside(&forms.index.direction, q, centroid);
                let wq = area / 3.0 * nv * nv * 0.25;
                for &a in &[s, t] {
                    for &b in &[s, t] {
                        mt.push((gl[a], gl[b], wq));
                        per_half[2 * ci + right_half as usize].push((gl[a], gl[b], wq));
                    }
                }
            }
        }
    }
    // Dirichlet truncation removes the two outer faces.
    let x_end = n_side as f64 + 0.5;
    let keep: Vec<bool> = coords
        .iter()
        .map(|x| settings.truncation == Truncation::Neumann || (x[0].abs() - x_end).abs() > 1e-9)
        .collect();
    let mut reduced = vec![usize::MAX; n];
    let mut m = 0;
    for i in 0..n {
        if keep[i] {
            reduced[i] = m;
            m += 1;
        }
    }
    let remap = |t: &[(usize, usize, f64)]| -> Vec<(usize, usize, f64)> {
        t.iter()
            .filter(|(i, j, _)| keep[*i] && keep[*j])
            .map(|&(i, j, v)| (reduced[i], reduced[j], v))
            .collect()
    };
    let k0 = CsrMatrix::from_triplets(m, m, &remap(&kt));
    let mut adjacency = vec![Vec::new(); m];
    for (i, j, _) in k0.iter() {
        if i != j {
            adjacency[i].push(j);
        }
    }
    let perm = reverse_cuthill_mckee(&adjacency);
    let stiffness = k0.permuted(&perm);
    let mass = CsrMatrix::from_triplets(m, m, &remap(&mt)).permuted(&perm);
    let mut coords_r = vec![[0.0; 2]; m];
    let mut cell_r = vec![0; m];
    for i in 0..n {
        if keep[i] {
            coords_r[perm[reduced[i]]] = coords[i];
            cell_r[perm[reduced[i]]] = cell_of[i];
        }
    }
    let half_mass = per_half
        .iter()
        .enumerate()
        .map(|(h, t)| (cells[h / 2], h % 2 == 1, CsrMatrix::from_triplets(m, m, &remap(t)).permuted(&perm)))
        .collect();
    let bandwidth = stiffness.bandwidth();
    Ok(SupercellProblem {
        n_cells_per_side: settings.n_cells_per_side,
        fit_cells: settings.fit_cells.min(settings.n_cells_per_side.saturating_sub(2)),
        truncation: settings.truncation,
        eps,
        stiffness,
        mass,
        coords: coords_r,
        cell_of: cell_r,
        half_mass,
        lambda_window,
        bandwidth,
    })
}

impl SupercellProblem {
    pub fn n_dofs(&self) -> usize {
        self.coords.len()
    }

    fn half_masses(&self, x: &[f64]) -> Vec<(i64, bool, f64)> {
        self.half_mass
            .iter()
            .map(|(k, r, m)| {
                let mx = m.matvec_real(x);
                (*k, *r, x.iter().zip(&mx).map(|(a, b)| a * b).sum::<f64>().max(0.0))
            })
            .collect()
    }
}

/// Eigenpairs in the window around `sigma`, with localization diagnostics.
pub fn solve_supercell(problem: &SupercellProblem, sigma: f64, n_eigen: usize, tol: f64) -> Result<Vec<SupercellMode>> {
    let n = problem.n_dofs();
    let bw = problem.bandwidth;
    let mut band = BandMatrix::zeros(n, bw, bw);
    for (i, j, v) in problem.stiffness.iter() {
        band.add(i, j, c(v));
    }
    for (i, j, v) in problem.mass.iter() {
        band.add(i, j, c(-sigma * v));
    }
    let lu = band.factor()?;
    let solve = |b: &[f64]| -> Vec<f64> {
        let mut z: Vec<_> = b.iter().map(|&v| c(v)).collect();
        lu.solve_in_place(&mut z);
        z.iter().map(|v| v.re).collect()
    };
    let apply_k = |x: &[f64]| problem.stiffness.matvec_real(x);
    let apply_m = |x: &[f64]| problem.mass.matvec_real(x);
    let pairs = shift_invert_lanczos(n, sigma, n_eigen, &solve, &apply_k, &apply_m, tol)?;
    let (lo, hi) = problem.lambda_window;
    let mut out = Vec::new();
    for (lam, x) in pairs {
        if lam < lo || lam > hi {
            continue;
        }
        let halves = problem.half_masses(&x);
        let norms: Vec<(i64, f64)> = halves
            .chunks(2)
            .map(|h| (h[0].0, (h[0].2 + h[1].2).sqrt()))
            .collect();
        let total: f64 = halves.iter().map(|h| h.2).sum();
        // Four cell lengths around the interface: |x₁| < 2.
        let central: f64 = halves
            .iter()
            .filter(|(k, r, _)| {
                let centre = *k as f64 + if *r { 0.25 } else { -0.25 };
                centre.abs() < 2.0
            })
            .map(|h| h.2)
            .sum();
        let rate = |sign: i64| {
            let pts: Vec<(f64, f64)> = norms
                .iter()
                .filter(|(k, _)| k * sign >= 2 && k * sign <= problem.fit_cells as i64)
                .map(|(k, v)| ((k * sign) as f64, *v))
                .collect();
            let ks: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            -fit_rate(&ks, &ys)
        };
        out.push(SupercellMode {
            eigenvalue: lam,
            localization_score: central / total,
            decay_right: rate(1),
            decay_left: rate(-1),
            cell_norms: norms,
            field: x,
        });
    }
    Ok(out)
}

