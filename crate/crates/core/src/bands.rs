//! Bloch band structure: dense eigensolves on quasi-momentum grids, ascending
//! and analytic labelings, Hellmann–Feynman slopes, Dirac-point detection with
//! the flux-diagonal propagating basis, and complex-momentum eigenpairs.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::AssembledForms;
use crate::error::{Error, Result};
use crate::linalg::{self, c, column, dotc, max_weight_assignment, rayleigh_refine, PencilReducer, C64};

#[derive(Debug, Clone)]
pub struct BlochEigenpair {
    pub p: C64,
    pub value: C64,
    /// Right eigenvector, `vᴴ M v = 1`.
    pub vector: Vec<C64>,
    /// Left eigenvector with `wᴴ M v = 1` (equal to `vector` for real `p`).
    pub left: Vec<C64>,
    pub band_ascending: usize,
    pub band_analytic: Option<usize>,
    /// Distance to the nearest other computed eigenvalue.
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct BandDiagram {
    pub eps: f64,
    pub p_grid: Vec<f64>,
    /// `bands[n][k]`: ascending band `n` at grid point `k`.
    pub bands: Vec<Vec<BlochEigenpair>>,
    /// `analytic_map[k][n]`: analytic label of ascending band `n` at point `k`.
    pub analytic_map: Vec<Vec<usize>>,
    /// Number of grid transitions resolved by the global assignment pass.
    pub ambiguous_transitions: usize,
}

impl BandDiagram {
    pub fn value(&self, band: usize, k: usize) -> f64 {
        self.bands[band][k].value.re
    }

    /// Smallest gap between consecutive ascending bands over the grid.
    pub fn min_gaps(&self) -> Vec<f64> {
        (0..self.bands.len().saturating_sub(1))
            .map(|n| {
                (0..self.p_grid.len())
                    .map(|k| self.value(n + 1, k) - self.value(n, k))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }
}

/// Dense Bloch eigensolver with the p-independent parts of the reduced
/// pencil precomputed, so one solve costs a single Hermitian
/// eigen-decomposition.
#[derive(Debug, Clone)]
pub struct BlochSolver {
    pub eps: f64,
    reducer: PencilReducer,
    bk: DMatrix<C64>,
    bc: DMatrix<C64>,
    bm0: DMatrix<C64>,
}

impl BlochSolver {
    pub fn new(forms: &AssembledForms, eps: f64) -> Result<Self> {
        let reducer = forms.reducer(eps)?;
        let n = forms.n_dofs;
        let red = |m: &crate::linalg::CsrMatrix| reducer.reduce(&m.to_dense().map(c));
        let bk = red(&forms.whole.k);
        let bc = red(&forms.c_skew);
        let bm0 = red(&forms.whole.m0);
        debug_assert_eq!(bk.nrows(), n);
        Ok(BlochSolver { eps, reducer, bk, bc, bm0 })
    }

    pub fn reducer(&self) -> &PencilReducer {
        &self.reducer
    }

    fn reduced(&self, p: C64) -> DMatrix<C64> {
        let mut b = self.bk.clone();
        b += &self.bc * (C64::new(0.0, -2.0) * p);
        b += &self.bm0 * (p * p);
        b
    }

    /// All eigenpairs at real `p` (ascending, M-orthonormal columns).
    pub fn solve(&self, p: f64) -> (Vec<f64>, DMatrix<C64>) {
        let (vals, y) = PencilReducer::reduced_hermitian_eigen(self.reduced(c(p)));
        (vals, self.reducer.back_transform() * y)
    }

    /// Ascending eigenvalues at real `p` (no eigenvectors).
    pub fn eigenvalues(&self, p: f64) -> Vec<f64> {
        PencilReducer::reduced_hermitian_values(self.reduced(c(p)))
    }

    /// Eigenvalues and the trace rows of all eigenvectors at real `p`.
    pub fn solve_trace(&self, p: f64, trace_dofs: &[usize]) -> (Vec<f64>, DMatrix<C64>) {
        let (vals, y) = PencilReducer::reduced_hermitian_eigen(self.reduced(c(p)));
        let lh = self.reducer.back_transform();
        let rows = lh.select_rows(trace_dofs.iter());
        (vals, rows * y)
    }

    /// Like [`solve_trace`](Self::solve_trace), additionally returning the
    /// full eigenvector of one band.
    pub fn solve_trace_with(&self, p: f64, trace_dofs: &[usize], band: usize) -> (Vec<f64>, DMatrix<C64>, Vec<C64>) {
        let (vals, y) = PencilReducer::reduced_hermitian_eigen(self.reduced(c(p)));
        let lh = self.reducer.back_transform();
        let rows = lh.select_rows(trace_dofs.iter());
        let full = lh * y.column(band);
        (vals, rows * y, full.iter().copied().collect())
    }

    /// Eigenpairs with real part in `[lo, hi]` at complex `p`.
    pub fn solve_complex_window(&self, p: C64, lo: f64, hi: f64) -> Vec<(C64, nalgebra::DVector<C64>, nalgebra::DVector<C64>)> {
        // The reduced matrix is formed directly, hence the identity here.
        let b = self.reduced(p);
        let n = b.nrows();
        let (q, t) = b.schur().unpack();
        let lh = self.reducer.back_transform();
        let scale = (0..n).map(|i| t[(i, i)].norm()).fold(1.0, f64::max);
        let guard = |d: C64| if d.norm() < 1e-14 * scale { c(1e-14 * scale) } else { d };
        let mut out = Vec::new();
        for k in 0..n {
            let lam = t[(k, k)];
            if lam.re < lo || lam.re > hi {
                continue;
            }
            let mut x = nalgebra::DVector::from_element(n, C64::new(0.0, 0.0));
            x[k] = c(1.0);
            for i in (0..k).rev() {
                let mut acc = C64::new(0.0, 0.0);
                for j in i + 1..=k {
                    acc += t[(i, j)] * x[j];
                }
                x[i] = -acc / guard(t[(i, i)] - lam);
            }
            let mut s = nalgebra::DVector::from_element(n, C64::new(0.0, 0.0));
            s[k] = c(1.0);
            for i in k + 1..n {
                let mut acc = C64::new(0.0, 0.0);
                for j in k..i {
                    acc += t[(j, i)].conj() * s[j];
                }
                s[i] = acc / guard(lam.conj() - t[(i, i)].conj());
            }
            out.push((lam, lh * (&q * x), lh * (&q * s)));
        }
        out
    }
}

/// Uniform grid of `2·n` points on `[−π, π)` shifted by half a step so it is
/// symmetric under `p ↦ −p`.
pub fn symmetric_grid(n: usize) -> Vec<f64> {
    let m = 2 * n;
    let step = 2.0 * std::f64::consts::PI / m as f64;
    (0..m).map(|k| -std::f64::consts::PI + (k as f64 + 0.5) * step).collect()
}

pub fn solve_bands(forms: &AssembledForms, p_grid: &[f64], eps: f64, n_bands: usize) -> Result<BandDiagram> {
    if n_bands == 0 || n_bands > forms.n_dofs {
        return Err(Error::Config(format!("n_bands must lie in 1..={}", forms.n_dofs)));
    }
    if p_grid.iter().any(|p| p.abs() > std::f64::consts::PI + 1e-12) {
        return Err(Error::Config("quasi-momentum grid must lie in [-pi, pi]".into()));
    }
    let solver = BlochSolver::new(forms, eps)?;
    let m = forms.m_real(eps);
    let solved: Vec<(Vec<f64>, DMatrix<C64>)> = p_grid.par_iter().map(|&p| solver.solve(p)).collect();
    let mut bands: Vec<Vec<BlochEigenpair>> = vec![Vec::with_capacity(p_grid.len()); n_bands];
    for (k, (vals, vecs)) in solved.iter().enumerate() {
        for n in 0..n_bands {
            let gap_lo = if n > 0 { vals[n] - vals[n - 1] } else { f64::INFINITY };
            let gap_hi = if n + 1 < vals.len() { vals[n + 1] - vals[n] } else { f64::INFINITY };
            let v = column(vecs, n);
            bands[n].push(BlochEigenpair {
                p: c(p_grid[k]),
                value: c(vals[n]),
                left: v.clone(),
                vector: v,
                band_ascending: n,
                band_analytic: None,
                gap: gap_lo.min(gap_hi),
            });
        }
    }
    // Analytic labeling by eigenvector overlap between neighbouring points.
    let mut analytic_map = vec![(0..n_bands).collect::<Vec<_>>()];
    let mut ambiguous = 0;
    for k in 0..p_grid.len().saturating_sub(1) {
        let mut overlap = vec![vec![0.0; n_bands]; n_bands];
        for i in 0..n_bands {
            let mv = m.matvec(&bands[i][k].vector);
            for (j, row) in overlap[i].iter_mut().enumerate() {
                *row = dotc(&bands[j][k + 1].vector, &mv).norm();
            }
        }
        let mut greedy: Vec<usize> = overlap
            .iter()
            .map(|row| (0..n_bands).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap())
            .collect();
        let mut seen = vec![false; n_bands];
        let mut clean = true;
        for (i, &j) in greedy.iter().enumerate() {
            if seen[j] || overlap[i][j] < 0.8 {
                clean = false;
            }
            seen[j] = true;
        }
        if !clean {
            ambiguous += 1;
            greedy = max_weight_assignment(&overlap);
        }
        let prev = analytic_map.last().unwrap().clone();
        let mut next = vec![0usize; n_bands];
        for i in 0..n_bands {
            next[greedy[i]] = prev[i];
        }
        analytic_map.push(next);
    }
    for (k, map) in analytic_map.iter().enumerate() {
        for n in 0..n_bands {
            bands[n][k].band_analytic = Some(map[n]);
        }
    }
    Ok(BandDiagram { eps, p_grid: p_grid.to_vec(), bands, analytic_map, ambiguous_transitions: ambiguous })
}

/// Hellmann–Feynman slope `μ′(p) = vᴴ A′(p) v / vᴴ M v` of a simple real pair.
pub fn group_velocity(forms: &AssembledForms, pair: &BlochEigenpair, eps: f64) -> Result<f64> {
    let scale = pair.value.norm().max(1.0);
    if pair.gap < 1e-8 * scale {
        return Err(Error::Degenerate(format!(
            "eigenvalue {} at p = {} is not simple (gap {:.3e})",
            pair.value, pair.p, pair.gap
        )));
    }
    let d = forms.da_terms(pair.p).matvec(forms.n_dofs, &pair.vector);
    let mv = forms.apply_m(eps, &pair.vector);
    Ok((dotc(&pair.vector, &d) / dotc(&pair.vector, &mv)).re)
}

/// Derivative of a (possibly non-Hermitian) eigenvalue branch,
/// `λ′(p) = (w, A′(p) v) / (w, M v)`.
pub fn branch_derivative(forms: &AssembledForms, pair: &BlochEigenpair, eps: f64) -> C64 {
    let d = forms.da_terms(pair.p).matvec(forms.n_dofs, &pair.vector);
    let mv = forms.apply_m(eps, &pair.vector);
    dotc(&pair.left, &d) / dotc(&pair.left, &mv)
}

/// Eigenpairs of the pencil at complex `p` with real parts in `window`.
pub fn solve_bands_complex(
    forms: &AssembledForms,
    p: C64,
    eps: f64,
    window: (f64, f64),
) -> Result<Vec<BlochEigenpair>> {
    let solver = BlochSolver::new(forms, eps)?;
    let found = solver.solve_complex_window(p, window.0, window.1);
    let scale = window.0.abs().max(window.1.abs()).max(1.0);
    let mut out = Vec::new();
    for (k, (lam, v, w)) in found.iter().enumerate() {
        let gap = found
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(_, o)| (o.0 - lam).norm())
            .fold(f64::INFINITY, f64::min);
        if gap < 1e-8 * scale {
            return Err(Error::Degenerate(format!("eigenvalue collision near {lam} at p = {p}")));
        }
        let seed_v: Vec<C64> = v.iter().copied().collect();
        let seed_w: Vec<C64> = w.iter().copied().collect();
        let pair = refine_pair(forms, p, eps, *lam, &seed_v, &seed_w)?;
        out.push(BlochEigenpair { gap, ..pair });
    }
    out.sort_by(|a, b| a.value.re.total_cmp(&b.value.re));
    for (k, pr) in out.iter_mut().enumerate() {
        pr.band_ascending = k;
    }
    Ok(out)
}

/// Two-sided Rayleigh refinement of an eigenpair of `(A(p), M(ε))`.
pub fn refine_pair(
    forms: &AssembledForms,
    p: C64,
    eps: f64,
    lambda0: C64,
    v0: &[C64],
    w0: &[C64],
) -> Result<BlochEigenpair> {
    let band = |s: C64| forms.shifted_band(p, eps, s);
    let apply_a = |x: &[C64]| forms.apply_a(p, x);
    let apply_m = |x: &[C64]| forms.apply_m(eps, x);
    let r = rayleigh_refine(&band, &apply_a, &apply_m, lambda0, v0, w0, 1e-13, 30)?;
    Ok(BlochEigenpair {
        p,
        value: r.value,
        vector: r.right,
        left: r.left,
        band_ascending: 0,
        band_analytic: None,
        gap: f64::NAN,
    })
}

/// Continues an eigenpair to a new quasi-momentum by Rayleigh refinement
/// seeded with the previous vectors; the overlap with the seed guards
/// against branch jumps.
pub fn continue_pair(forms: &AssembledForms, eps: f64, p: C64, prev: &BlochEigenpair) -> Result<BlochEigenpair> {
    // First-order predictor for the eigenvalue.
    let slope = branch_derivative(forms, prev, eps);
    let guess = prev.value + slope * (p - prev.p);
    let pair = refine_pair(forms, p, eps, guess, &prev.vector, &prev.left)?;
    let mv = forms.apply_m(eps, &pair.vector);
    let ov = dotc(&prev.vector, &mv).norm();
    if ov < 0.5 {
        return Err(Error::BranchTracking(format!(
            "overlap {ov:.3} between p = {} and p = {}",
            prev.p, p
        )));
    }
    Ok(BlochEigenpair { band_ascending: prev.band_ascending, band_analytic: prev.band_analytic, ..pair })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiracSettings {
    /// Lower ascending band index (0-based) of the Dirac pair; searched when
    /// absent.
    pub lower_band: Option<usize>,
    pub degeneracy_tol: f64,
    pub scan_points: usize,
    pub separation_margin: f64,
}

impl Default for DiracSettings {
    fn default() -> Self {
        DiracSettings { lower_band: None, degeneracy_tol: 1e-6, scan_points: 128, separation_margin: 1e-3 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DiracReport {
    pub gap_at_detection: f64,
    pub alpha_flux: f64,
    pub flux_defect: f64,
    pub cross_flux: f64,
    pub cross_flux_literal: f64,
    pub mirror_factor: C64,
    pub mirror_residual: f64,
    pub q_residual: f64,
    pub fold_slope: f64,
    /// Smallest `|λ_n(p) − λ*|/λ*` over bands other than the Dirac pair.
    pub separation: f64,
    /// Smallest gap between band `𝔫*` and its neighbours on the scan.
    pub min_band_gap: f64,
    pub phase_rule: &'static str,
}

#[derive(Debug, Clone)]
pub struct DiracData {
    pub lambda_star: f64,
    pub alpha: f64,
    pub v_n: Vec<C64>,
    pub v_m: Vec<C64>,
    pub q_star: f64,
    /// `(𝔫*, 𝔫*+1)`, 0-based ascending indices.
    pub band_indices: (usize, usize),
    /// Eigenvector of band `𝔫*` at `+q*` (M-normalized).
    pub fold_vector: Vec<C64>,
    pub report: DiracReport,
}

/// 2×2 matrix `Q_ij = q(b_j, b_i)` of the flux form on a basis.
fn flux_matrix(forms: &AssembledForms, basis: &[Vec<C64>; 2]) -> [[C64; 2]; 2] {
    let mut q = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            q[i][j] = forms.flux_form(&basis[j], &basis[i], C64::new(0.0, 0.0));
        }
    }
    q
}

/// Eigen-decomposition of a 2×2 Hermitian matrix, eigenvalues descending.
fn herm2(h: [[C64; 2]; 2]) -> ([f64; 2], [[C64; 2]; 2]) {
    let m = DMatrix::from_row_slice(2, 2, &[h[0][0], h[0][1], h[1][0], h[1][1]]);
    let e = m.symmetric_eigen();
    let (i0, i1) = if e.eigenvalues[0] >= e.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let col = |k: usize| [e.eigenvectors[(0, k)], e.eigenvectors[(1, k)]];
    ([e.eigenvalues[i0], e.eigenvalues[i1]], [col(i0), col(i1)])
}

fn combine2(basis: &[Vec<C64>; 2], coef: [C64; 2]) -> Vec<C64> {
    basis[0].iter().zip(&basis[1]).map(|(a, b)| coef[0] * a + coef[1] * b).collect()
}

/// Locates the Dirac point, builds the flux-diagonal propagating basis and
/// the fold crossing `q*`.
pub fn find_dirac(forms: &AssembledForms, settings: &DiracSettings) -> Result<DiracData> {
    let solver = BlochSolver::new(forms, 0.0)?;
    let (vals, vecs) = solver.solve(0.0);
    let candidates: Vec<usize> = match settings.lower_band {
        Some(b) => vec![b],
        None => (0..vals.len() - 1)
            .filter(|&k| vals[k] > 1e-8 && (vals[k + 1] - vals[k]) <= settings.degeneracy_tol * vals[k])
            .collect(),
    };
    if candidates.is_empty() {
        let gap = (0..vals.len() - 1)
            .filter(|&k| vals[k] > 1e-8)
            .map(|k| (vals[k + 1] - vals[k]) / vals[k])
            .fold(f64::INFINITY, f64::min);
        return Err(Error::NoDegeneracy { gap });
    }
    let mut first_err = None;
    for &lower in &candidates {
        match dirac_at(forms, &solver, &vals, &vecs, lower, settings) {
            Ok(d) => return Ok(d),
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    Err(first_err.unwrap())
}

fn dirac_at(
    forms: &AssembledForms,
    solver: &BlochSolver,
    vals: &[f64],
    vecs: &DMatrix<C64>,
    lower: usize,
    settings: &DiracSettings,
) -> Result<DiracData> {
    if lower + 1 >= vals.len() {
        return Err(Error::Config(format!("band {lower} out of range")));
    }
    let lambda_star = 0.5 * (vals[lower] + vals[lower + 1]);
    let gap = (vals[lower + 1] - vals[lower]) / lambda_star.abs().max(1e-300);
    if !(gap <= settings.degeneracy_tol) || lambda_star <= 0.0 {
        return Err(Error::NoDegeneracy { gap });
    }
    let basis = [column(vecs, lower), column(vecs, lower + 1)];
    let n = forms.n_dofs;

    // Hellmann–Feynman slopes: eigenvalues of the projected A′(0).
    let da = forms.da_terms(C64::new(0.0, 0.0));
    let mut d = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        let col = da.matvec(n, &basis[i]);
        for j in 0..2 {
            d[j][i] = dotc(&basis[j], &col);
        }
    }
    let (hf, _) = herm2(d);
    let alpha = hf[0];
    let scale = lambda_star.sqrt();
    if alpha.abs() < 1e-8 * scale {
        return Err(Error::ZeroSlope { alpha });
    }

    // Flux diagonalization via the skew part of the flux matrix.
    let q = flux_matrix(forms, &basis);
    let mut s = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            s[i][j] = (q[i][j] - q[j][i].conj()) * C64::new(0.0, -0.5);
        }
    }
    let (sig, cvec) = herm2(s);
    if (sig[0] - sig[1]).abs() < 1e-8 * scale {
        return Err(Error::ZeroSlope { alpha: sig[0] - sig[1] });
    }
    let mut v_n = combine2(&basis, cvec[0]);
    // Phase fixing on the trace line.
    let tr = &forms.trace;
    let mean: C64 = tr.dofs.iter().zip(&tr.weights).map(|(&k, w)| v_n[k] * *w).sum();
    let mag: f64 = tr.dofs.iter().zip(&tr.weights).map(|(&k, w)| v_n[k].norm() * *w).sum();
    let h = forms.mesh.strip_height;
    let (anchor, rule) = if mean.norm() > 1e-6 * mag {
        (mean, "trace mean")
    } else {
        let first: C64 = tr
            .dofs
            .iter()
            .zip(&tr.weights)
            .zip(&tr.x2)
            .map(|((&k, w), y)| v_n[k] * *w * (*y - 0.5 * h))
            .sum();
        (first, "trace first moment")
    };
    if anchor.norm() > 0.0 {
        let ph = anchor.conj() / anchor.norm();
        linalg::scale(&mut v_n, ph);
    }
    let v_m = forms.apply_mirror(&v_n);

    let zero = C64::new(0.0, 0.0);
    let qnn = forms.flux_form(&v_n, &v_n, zero);
    let qmm = forms.flux_form(&v_m, &v_m, zero);
    let qnm = forms.flux_form(&v_n, &v_m, zero);
    let qmn = forms.flux_form(&v_m, &v_n, zero);
    let alpha_flux = 2.0 * qnn.im;
    let flux_defect = (qnn - C64::new(0.0, 0.5 * alpha)).norm().max((qmm + C64::new(0.0, 0.5 * alpha)).norm());
    let cross_skew = (qnm - qmn.conj()).norm() * 0.5;
    let cross_literal = qnm.norm().max(qmn.norm());
    // Mirror relation.
    // Mirror relation against the independently diagonalized negative-flux
    // vector.
    let mb = &forms.whole.m_base;
    let v_minus = combine2(&basis, cvec[1]);
    let tau = dotc(&v_minus, &mb.matvec(&v_m));
    let resid: Vec<C64> = v_m.iter().zip(&v_minus).map(|(a, b)| a - tau * b).collect();
    let mirror_residual = dotc(&resid, &mb.matvec(&resid)).re.max(0.0).sqrt();

    // Fold crossing of the ascending band `lower` on (0, π].
    let f = |p: f64| -> f64 {
        solver.eigenvalues(p)[lower] - lambda_star
    };
    let np = settings.scan_points.max(8);
    let grid: Vec<f64> = (1..=np).map(|j| std::f64::consts::PI * j as f64 / np as f64).collect();
    let scan: Vec<Vec<f64>> = grid.par_iter().map(|&p| solver.eigenvalues(p)).collect();
    let fv: Vec<f64> = scan.iter().map(|v| v[lower] - lambda_star).collect();
    let roots: Vec<usize> = (0..np - 1).filter(|&j| fv[j] < 0.0 && fv[j + 1] >= 0.0).collect();
    let sign_changes = (0..np - 1).filter(|&j| (fv[j] < 0.0) != (fv[j + 1] < 0.0)).count();
    let Some(&j0) = roots.first() else {
        return Err(Error::NoFoldCrossing { band: lower });
    };
    if fv[0] >= 0.0 {
        return Err(Error::SeparationViolated(format!(
            "band {lower} is not below the Dirac energy just right of p = 0"
        )));
    }
    if sign_changes != 1 {
        return Err(Error::SeparationViolated(format!(
            "band {lower} crosses the Dirac energy {sign_changes} times on (0, pi]"
        )));
    }
    let (mut a, mut b) = (grid[j0], grid[j0 + 1]);
    let (mut fa, mut fb) = (fv[j0], fv[j0 + 1]);
    let tol = 1e-12 * lambda_star;
    let mut q_star = 0.5 * (a + b);
    for _ in 0..200 {
        // Secant step safeguarded by bisection.
        let mut x = b - fb * (b - a) / (fb - fa);
        if !(x > a && x < b) || (b - a) > 1e-3 {
            x = 0.5 * (a + b);
        }
        let fx = f(x);
        q_star = x;
        if fx.abs() <= tol {
            break;
        }
        if fx < 0.0 {
            a = x;
            fa = fx;
        } else {
            b = x;
            fb = fx;
        }
        if b - a < 1e-15 {
            break;
        }
    }
    let (vq, wq) = solver.solve(q_star);
    let q_residual = (vq[lower] - lambda_star).abs();
    let fold_vector = column(&wq, lower);
    let fold_pair = BlochEigenpair {
        p: c(q_star),
        value: c(vq[lower]),
        left: fold_vector.clone(),
        vector: fold_vector.clone(),
        band_ascending: lower,
        band_analytic: None,
        gap: (vq[lower + 1] - vq[lower]).min(vq[lower] - vq[lower.saturating_sub(1)]),
    };
    let fold_slope = group_velocity(forms, &fold_pair, 0.0)?;
    if fold_slope <= 0.0 {
        return Err(Error::SeparationViolated(format!(
            "band {lower} is not increasing at q* (slope {fold_slope:.3e})"
        )));
    }
    // Separation of the remaining bands from the Dirac energy.
    let mut separation = f64::INFINITY;
    let mut min_band_gap = f64::INFINITY;
    for v in &scan {
        for (bnd, &lam) in v.iter().enumerate() {
            if bnd != lower && bnd != lower + 1 {
                separation = separation.min((lam - lambda_star).abs() / lambda_star);
            }
        }
        if v[lower + 1] <= lambda_star {
            return Err(Error::SeparationViolated(format!(
                "band {} drops below the Dirac energy",
                lower + 1
            )));
        }
        let lo_gap = if lower > 0 { v[lower] - v[lower - 1] } else { f64::INFINITY };
        min_band_gap = min_band_gap.min(lo_gap).min(v[lower + 1] - v[lower]);
    }
    if separation < settings.separation_margin {
        return Err(Error::SeparationViolated(format!(
            "another band comes within {separation:.3e} (relative) of the Dirac energy"
        )));
    }
    Ok(DiracData {
        lambda_star,
        alpha,
        v_n,
        v_m,
        q_star,
        band_indices: (lower, lower + 1),
        fold_vector,
        report: DiracReport {
            gap_at_detection: gap,
            alpha_flux,
            flux_defect,
            cross_flux: cross_skew,
            cross_flux_literal: cross_literal,
            mirror_factor: tau,
            mirror_residual,
            q_residual,
            fold_slope,
            separation,
            min_band_gap,
            phase_rule: rule,
        },
    })
}
