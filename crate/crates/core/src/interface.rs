//! Interface operator `𝔾^Γ_ε(λ) = (𝔾̃_ε(λ) + 𝔾̃_{−ε}(λ))|_Γ`, its ε → 0
//! limit `2𝕋 + β(h) ℙ^Dirac`, the characteristic-value search in
//! `λ = λ* + εh`, and the bifurcated mode.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::AssembledForms;
use crate::field::{Medium, PhysicalCell};
use crate::error::{Error, Result};
use crate::greens::{
    arc_nodes, find_complex_roots, fit_rate, graded_panels, panel_nodes, trace_resolvent, ContinuedGreens, FarField, far_field_growth,
    ContourSpec, QuadratureSettings, TraceGrid,
};
use crate::bands::DiracData;
use crate::linalg::{c, smallest_singular, C64, I};
use crate::perturbation::CouplingData;

/// Which closed form of `β(h)` is used in the limit operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaVariant {
    /// `−h / (|t*| α √(1 − h²/|t*|²))`
    Squared,
    /// `−h / (|t*| α √(1 − h²/|t*|))`
    Linear,
}

pub fn beta(h: C64, t_abs: f64, alpha: f64, variant: BetaVariant) -> C64 {
    let d = match variant {
        BetaVariant::Squared => t_abs * t_abs,
        BetaVariant::Linear => t_abs,
    };
    -h / (t_abs * alpha * (c(1.0) - h * h / d).sqrt())
}

/// Discretized limit operator.
#[derive(Debug, Clone)]
pub struct LimitOperator {
    pub t_matrix: DMatrix<C64>,
    pub p_dirac: DMatrix<C64>,
    pub t_abs: f64,
    pub alpha: f64,
    /// Multiplier applied to `β` (1 reproduces the closed form verbatim).
    pub beta_scale: f64,
    pub variant: BetaVariant,
    pub trace: TraceGrid,
    pub node_count: usize,
}

impl LimitOperator {
    pub fn beta(&self, h: C64) -> C64 {
        self.beta_scale * beta(h, self.t_abs, self.alpha, self.variant)
    }

    /// `2𝕋 + β(h) ℙ^Dirac`.
    pub fn matrix(&self, h: C64) -> DMatrix<C64> {
        &self.t_matrix * c(2.0) + &self.p_dirac * self.beta(h)
    }

    pub fn with_variant(&self, variant: BetaVariant, beta_scale: f64) -> Self {
        LimitOperator { variant, beta_scale, ..self.clone() }
    }
}

/// Quadrature of the limit operator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitSettings {
    /// Radius of the semicircle passing below `+q*`.
    pub radius: f64,
    pub gl_order: usize,
    pub panel_length: f64,
    pub arc_panels: usize,
    pub beta_variant: BetaVariant,
    /// Multiplier of the closed-form `β(h)`. The discrete interface operator
    /// carries the Dirac dyad of both `±ε` halves, which is why the measured
    /// coefficient is twice the closed form.
    pub beta_scale: f64,
}

impl Default for LimitSettings {
    fn default() -> Self {
        LimitSettings {
            radius: 0.05,
            gl_order: 16,
            panel_length: 0.25,
            arc_panels: 2,
            beta_variant: BetaVariant::Squared,
            beta_scale: 2.0,
        }
    }
}

/// `𝕋` at `ε = 0`, `λ = λ*`: principal value of the full band sum with
/// the residue dyads at `∓q*`. The band sum is the exact discrete trace
/// resolvent, which is meromorphic in `p`; the principal value plus the
/// residue contribution equals the integral along the real axis indented
/// below `+q*`, which is what is evaluated (banded solves only). The Dirac
/// branches enter through `(g(p) + g(−p))`, which is regular at `p = 0` on
/// the trace.
pub fn assemble_limit_operator(
    forms: &AssembledForms,
    dirac: &DiracData,
    coupling: &CouplingData,
    settings: &LimitSettings,
) -> Result<LimitOperator> {
    let trace = TraceGrid::from_forms(forms);
    let qs = dirac.q_star;
    let r = settings.radius;
    let lam = c(dirac.lambda_star);
    let norm = 2.0 / (2.0 * PI);
    let mut nodes: Vec<(C64, C64)> = Vec::new();
    for (p, w) in panel_nodes(&graded_panels(0.0, qs - r, None, None, 4.0, settings.panel_length), settings.gl_order, 0) {
        nodes.push((c(p), c(w)));
    }
    nodes.extend(arc_nodes(qs, r, false, settings.arc_panels, settings.gl_order, 0));
    for (p, w) in panel_nodes(&graded_panels(qs + r, PI, None, None, 4.0, settings.panel_length), settings.gl_order, 0) {
        nodes.push((c(p), c(w)));
    }
    let parts: Vec<DMatrix<C64>> = nodes
        .par_iter()
        .map(|&(p, w)| -> Result<DMatrix<C64>> { Ok(complex_trace_resolvent(forms, p, lam, &trace)? * (w * norm)) })
        .collect::<Result<Vec<_>>>()?;
    let nt = trace.len();
    let mut t_matrix = DMatrix::from_element(nt, nt, C64::new(0.0, 0.0));
    for m in parts {
        t_matrix += m;
    }
    let tv = trace.restrict(&dirac.v_n);
    let p_dirac = trace.dyad(&tv, &tv);
    Ok(LimitOperator {
        t_matrix,
        p_dirac,
        t_abs: coupling.t_star.norm(),
        alpha: dirac.alpha,
        beta_scale: settings.beta_scale,
        variant: settings.beta_variant,
        trace,
        node_count: nodes.len(),
    })
}

/// Trace resolvent at a complex quasi-momentum of the unperturbed pencil.
fn complex_trace_resolvent(forms: &AssembledForms, p: C64, lambda: C64, trace: &TraceGrid) -> Result<DMatrix<C64>> {
    if p.im == 0.0 {
        return trace_resolvent(forms, 0.0, p.re, lambda, trace);
    }
    let lu = forms.shifted_band(p, 0.0, lambda).factor()?;
    let nt = trace.len();
    let mut g = DMatrix::from_element(nt, nt, C64::new(0.0, 0.0));
    for j in 0..nt {
        let mut e = vec![C64::new(0.0, 0.0); nt];
        e[j] = c(1.0);
        let x = lu.solve(&trace.extend(&e));
        for i in 0..nt {
            g[(i, j)] = -x[trace.dofs[i]];
        }
    }
    Ok(g)
}

/// `‖𝕋 ψ‖ / (‖𝕋‖ ‖ψ‖)` for `ψ = ∂₁ v_{𝔫*}|_Γ`.
pub fn kernel_residual(forms: &AssembledForms, dirac: &DiracData, limit: &LimitOperator) -> f64 {
    let psi = forms.normal_derivative(&dirac.v_n, c(0.0));
    let tpsi = &limit.t_matrix * DVector::from_vec(psi.clone());
    let tr = &limit.trace;
    tr.norm(tpsi.as_slice()) / (tr.op_norm(&limit.t_matrix) * tr.norm(&psi))
}

/// Interface operator family for one ε, with both continued operators cached.
#[derive(Debug, Clone)]
pub struct InterfaceOperator {
    pub eps: f64,
    pub lambda_star: f64,
    pub t_abs: f64,
    pub plus: ContinuedGreens,
    pub minus: ContinuedGreens,
}

#[derive(Debug, Clone)]
pub struct InterfaceOperatorSample {
    pub h: C64,
    pub lambda: C64,
    pub matrix: DMatrix<C64>,
    pub sigma_min: f64,
    pub norm: f64,
    pub plus: DMatrix<C64>,
    pub minus: DMatrix<C64>,
}

impl InterfaceOperator {
    pub fn new(
        forms_plus: &AssembledForms,
        dirac: &DiracData,
        coupling: &CouplingData,
        eps: f64,
        quad: &QuadratureSettings,
    ) -> Result<Self> {
        let t_abs = coupling.t_star.norm();
        let spec = |e: f64| ContourSpec::c_eps(dirac, t_abs, e, quad);
        let plus = ContinuedGreens::new(forms_plus, dirac, eps, spec(eps))?;
        let minus = ContinuedGreens::new(forms_plus, dirac, -eps, spec(-eps))?;
        Ok(InterfaceOperator { eps, lambda_star: dirac.lambda_star, t_abs, plus, minus })
    }

    pub fn lambda(&self, h: C64) -> C64 {
        self.lambda_star + self.eps * h
    }

    pub fn matrix(&self, h: C64) -> DMatrix<C64> {
        let l = self.lambda(h);
        self.plus.operator(l).matrix + self.minus.operator(l).matrix
    }

    /// `d/dh 𝔾^Γ_ε(λ* + εh)`.
    pub fn derivative(&self, h: C64) -> DMatrix<C64> {
        let l = self.lambda(h);
        (self.plus.derivative(l) + self.minus.derivative(l)) * c(self.eps)
    }

    pub fn sample(&self, h: C64) -> InterfaceOperatorSample {
        let l = self.lambda(h);
        let plus = self.plus.operator(l).matrix;
        let minus = self.minus.operator(l).matrix;
        let matrix = &plus + &minus;
        let s = self.plus.trace.symmetrized(&matrix);
        let (sigma_min, _, norm) = smallest_singular(&s);
        InterfaceOperatorSample { h, lambda: l, matrix, sigma_min, norm, plus, minus }
    }

    /// Relative smallest singular value in the weighted trace norm, with the
    /// right singular vector mapped back to a density.
    pub fn singular(&self, h: C64) -> (f64, f64, Vec<C64>) {
        let m = self.matrix(h);
        let s = self.plus.trace.symmetrized(&m);
        let (smin, v, smax) = smallest_singular(&s);
        let w = &self.plus.trace.weights;
        let phi: Vec<C64> = v.iter().zip(w).map(|(x, w)| x / w.sqrt()).collect();
        (smin, smax, phi)
    }
}

/// One row of the limit-operator convergence table.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub h_re: f64,
    pub h_im: f64,
    /// `‖𝔾^Γ − (2𝕋 + β ℙ)‖ / ‖2𝕋‖`.
    pub difference: f64,
    /// Same with the alternative β variant.
    pub difference_alternative: f64,
    /// Same with `β` omitted.
    pub difference_without_beta: f64,
    /// Fitted coefficient of `ℙ^Dirac` in `𝔾^Γ − 2𝕋`, divided by `β(h)`.
    pub beta_ratio_re: f64,
    pub beta_ratio_im: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Empirical order in ε of the difference (per h, then minimum).
    pub fitted_orders: Vec<f64>,
    pub monotone: bool,
}

/// Coefficient `c` minimizing `‖D − c P‖_F` in the symmetrized basis.
pub fn project_on(trace: &TraceGrid, d: &DMatrix<C64>, p: &DMatrix<C64>) -> C64 {
    let ds = trace.symmetrized(d);
    let ps = trace.symmetrized(p);
    let num: C64 = ps.iter().zip(ds.iter()).map(|(a, b)| a.conj() * b).sum();
    let den: f64 = ps.iter().map(|a| a.norm_sqr()).sum();
    num / den
}

pub fn default_h_samples(t_abs: f64, c0: f64) -> Vec<C64> {
    let r = c0 * t_abs;
    let mut out: Vec<C64> = [-0.8, -0.4, 0.0, 0.4, 0.8].iter().map(|&s| c(s * r)).collect();
    for (a, b) in [(0.3, 0.3), (-0.3, 0.3), (0.3, -0.3), (-0.3, -0.3)] {
        out.push(C64::new(a * r, b * r));
    }
    out
}

pub fn convergence_study(
    forms: &AssembledForms,
    dirac: &DiracData,
    coupling: &CouplingData,
    limit: &LimitOperator,
    eps_list: &[f64],
    h_samples: &[C64],
    quad: &QuadratureSettings,
) -> Result<ConvergenceReport> {
    let alt = limit.with_variant(
        match limit.variant {
            BetaVariant::Squared => BetaVariant::Linear,
            BetaVariant::Linear => BetaVariant::Squared,
        },
        limit.beta_scale,
    );
    let tr = &limit.trace;
    let scale = tr.op_norm(&(&limit.t_matrix * c(2.0)));
    let mut rows = Vec::new();
    for &eps in eps_list {
        let op = InterfaceOperator::new(forms, dirac, coupling, eps, quad)?;
        for &h in h_samples {
            let g = op.matrix(h);
            let d = &g - &limit.matrix(h);
            let d_alt = &g - &alt.matrix(h);
            let d0 = &g - &limit.t_matrix * c(2.0);
            let b = limit.beta(h);
            let ratio = if b.norm() > 0.0 { project_on(tr, &d0, &limit.p_dirac) / b } else { C64::new(f64::NAN, f64::NAN) };
            rows.push(ConvergenceRow {
                eps,
                h_re: h.re,
                h_im: h.im,
                difference: tr.op_norm(&d) / scale,
                difference_alternative: tr.op_norm(&d_alt) / scale,
                difference_without_beta: tr.op_norm(&d0) / scale,
                beta_ratio_re: ratio.re,
                beta_ratio_im: ratio.im,
            });
        }
    }
    let mut fitted_orders = Vec::new();
    let mut monotone = true;
    for k in 0..h_samples.len() {
        let col: Vec<&ConvergenceRow> = rows.iter().skip(k).step_by(h_samples.len()).collect();
        for w in col.windows(2) {
            if w[1].difference >= w[0].difference {
                monotone = false;
            }
        }
        let pts: Vec<(f64, f64)> = col.iter().map(|r| (r.eps.abs(), r.difference)).collect();
        fitted_orders.push(crate::perturbation::fit_loglog(&pts));
    }
    Ok(ConvergenceReport { rows, fitted_orders, monotone })
}

/// Characteristic-value search parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    /// `𝒥 = {|h| < c₀|t*|}`.
    pub c0: f64,
    /// Trapezoid nodes on the moment contour.
    pub moment_nodes: usize,
    /// Radius of the moment contour relative to `c₀|t*|`.
    pub moment_radius: f64,
    pub simplex_budget: usize,
    /// Relative `σ_min` tolerance of the Newton stage.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Cells per side of the mode-field window.
    pub window_cells: usize,
    /// Classification threshold as a multiple of the quadrature
    /// self-convergence estimate.
    pub coupling_factor: f64,
    /// Lower bound on the self-convergence estimate (round-off floor).
    pub coupling_floor: f64,
    /// Estimate the quadrature error by rebuilding the operator with doubled
    /// nodes (otherwise `coupling_floor` is used).
    pub self_convergence: bool,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            c0: 0.5,
            moment_nodes: 64,
            moment_radius: 1.0,
            simplex_budget: 200,
            newton_tol: 1e-8,
            newton_max_iter: 30,
            window_cells: 8,
            coupling_factor: 10.0,
            coupling_floor: 1e-12,
            self_convergence: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub radius: f64,
    pub nodes: usize,
    pub raw_re: f64,
    pub raw_im: f64,
    pub count: i64,
}

/// Argument-principle count `(1/2πi) ∮ tr(𝔾⁻¹ 𝔾′) dh` on `|h| = radius`.
pub fn moment_count(op: &InterfaceOperator, radius: f64, nodes: usize) -> Result<MomentReport> {
    let terms: Vec<C64> = (0..nodes)
        .into_par_iter()
        .map(|k| -> Result<C64> {
            let th = 2.0 * PI * (k as f64 + 0.5) / nodes as f64;
            let e = C64::from_polar(1.0, th);
            let h = radius * e;
            let g = op.matrix(h);
            let dg = op.derivative(h);
            let inv = g.try_inverse().ok_or_else(|| Error::Singular(format!("interface operator singular at h = {h}")))?;
            let tr = (inv * dg).trace();
            Ok(tr * I * h * (2.0 * PI / nodes as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    let raw: C64 = terms.iter().sum::<C64>() / (2.0 * PI * I);
    Ok(MomentReport { radius, nodes, raw_re: raw.re, raw_im: raw.im, count: raw.re.round() as i64 })
}

/// Deterministic Nelder–Mead minimization in two variables.
pub fn nelder_mead(f: &dyn Fn([f64; 2]) -> f64, x0: [f64; 2], step: f64, budget: usize, xtol: f64) -> ([f64; 2], f64, usize) {
    let mut simplex = [x0, [x0[0] + step, x0[1]], [x0[0], x0[1] + step]];
    let mut vals = [f(simplex[0]), f(simplex[1]), f(simplex[2])];
    let mut evals = 3;
    let lin = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    while evals < budget {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = [simplex[idx[0]], simplex[idx[1]], simplex[idx[2]]];
        vals = [vals[idx[0]], vals[idx[1]], vals[idx[2]]];
        let size = (0..3)
            .map(|k| ((simplex[k][0] - simplex[0][0]).powi(2) + (simplex[k][1] - simplex[0][1]).powi(2)).sqrt())
            .fold(0.0, f64::max);
        if size < xtol {
            break;
        }
        let centroid = [0.5 * (simplex[0][0] + simplex[1][0]), 0.5 * (simplex[0][1] + simplex[1][1])];
        let xr = lin(centroid, simplex[2], -1.0);
        let fr = f(xr);
        evals += 1;
        if fr < vals[0] {
            let xe = lin(centroid, simplex[2], -2.0);
            let fe = f(xe);
            evals += 1;
            if fe < fr {
                simplex[2] = xe;
                vals[2] = fe;
            } else {
                simplex[2] = xr;
                vals[2] = fr;
            }
        } else if fr < vals[1] {
            simplex[2] = xr;
            vals[2] = fr;
        } else {
            let (xc, fc) = if fr < vals[2] {
                let x = lin(centroid, xr, 0.5);
                (x, f(x))
            } else {
                let x = lin(centroid, simplex[2], 0.5);
                (x, f(x))
            };
            evals += 1;
            if fc < vals[2].min(fr) {
                simplex[2] = xc;
                vals[2] = fc;
            } else {
                for k in 1..3 {
                    simplex[k] = lin(simplex[0], simplex[k], 0.5);
                    vals[k] = f(simplex[k]);
                    evals += 1;
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    (simplex[best], vals[best], evals)
}

#[derive(Debug, Clone, Serialize)]
pub struct NewtonStep {
    pub h_re: f64,
    pub h_im: f64,
    pub sigma_rel: f64,
}

/// Newton iteration on the smallest-singular-pair functional
/// `h ↦ uᴴ S(h) v` with `(u, v)` refreshed at each iterate.
pub fn singular_newton(op: &InterfaceOperator, h0: C64, tol: f64, max_iter: usize) -> (C64, Vec<NewtonStep>) {
    let tr = &op.plus.trace;
    let mut h = h0;
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let s = tr.symmetrized(&op.matrix(h));
        let svd = s.clone().svd(true, true);
        let (k, smin) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, s)| (k, *s))
            .unwrap();
        let smax = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
        history.push(NewtonStep { h_re: h.re, h_im: h.im, sigma_rel: smin / smax });
        if smin <= tol * smax {
            break;
        }
        let u: DVector<C64> = svd.u.as_ref().unwrap().column(k).into_owned();
        let v: DVector<C64> = svd.v_t.as_ref().unwrap().row(k).adjoint();
        let ds = tr.symmetrized(&op.derivative(h));
        let f = (u.adjoint() * &s * &v)[(0, 0)];
        let df = (u.adjoint() * ds * &v)[(0, 0)];
        if df.norm() == 0.0 {
            break;
        }
        h -= f / df;
    }
    (h, history)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Interface,
    Resonant,
}

/// Mode field on the window: per cell, the values at the mesh nodes.
#[derive(Debug, Clone)]
pub struct ModeField {
    pub cells: Vec<i64>,
    pub values: Vec<Vec<C64>>,
    /// `L²(n²)` norm per cell.
    pub cell_norms: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyIdentity {
    pub gradient: f64,
    pub mass: f64,
    /// `|∫|∇u|² − λ ∫ n²|u|²| / ∫|∇u|²` over the window.
    pub residual: f64,
    /// `|λ| · (mass of the two end cells) / ∫|∇u|²`.
    pub truncation_bound: f64,
}

#[derive(Debug, Clone)]
pub struct ModeResult {
    pub eps: f64,
    pub lambda_star_found: C64,
    pub h_found: C64,
    pub phi: Vec<C64>,
    pub coupling_plus: C64,
    pub coupling_minus: C64,
    /// Couplings of the `−ε` medium (radiation to the left).
    pub coupling_left_plus: C64,
    pub coupling_left_minus: C64,
    /// Cauchy–Schwarz scale of the couplings, `‖φ‖ ‖u(q̄₊)‖_Γ`.
    pub coupling_scale: f64,
    pub coupling_tolerance: f64,
    pub self_convergence: f64,
    pub classification: Classification,
    pub moments: MomentReport,
    pub simplex_evaluations: usize,
    pub newton: Vec<NewtonStep>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// `‖𝔾^Γ φ‖ / ‖φ‖`.
    pub residual: f64,
    pub q_plus: C64,
    pub q_plus_left: C64,
    pub mode: ModeField,
    /// Fitted exponential rates of the cell norms (positive = growth away
    /// from the interface).
    pub growth_right: f64,
    pub growth_left: f64,
    pub energy: EnergyIdentity,
}

/// Couplings `⟨φ, conj u(·; q̄_±)⟩` of one medium at `λ`.
fn couplings(
    forms: &AssembledForms,
    dirac: &DiracData,
    eps: f64,
    lambda: C64,
    radius: f64,
    trace: &TraceGrid,
    phi: &[C64],
) -> Result<(C64, C64, f64, C64)> {
    let root = find_complex_roots(forms, dirac, eps, lambda, radius)?;
    let left = &root.pair.left;
    let t_plus = trace.restrict(left);
    let t_minus = trace.restrict(&forms.apply_mirror(left));
    let pair = |t: &[C64]| -> C64 { trace.weights.iter().zip(phi).zip(t).map(|((w, f), l)| *w * f * l.conj()).sum() };
    Ok((pair(&t_plus), pair(&t_minus), trace.norm(&t_plus) * trace.norm(phi), root.q_plus))
}

pub fn mode_field(
    forms: &AssembledForms,
    op: &InterfaceOperator,
    lambda: C64,
    phi: &[C64],
    window: usize,
) -> Result<ModeField> {
    let k = window as i64;
    let right_cells: Vec<i64> = (0..=k).collect();
    let left_cells: Vec<i64> = (-k..=0).collect();
    let right = op.plus.volume_field(forms, lambda, phi, &right_cells)?;
    let left = op.minus.volume_field(forms, lambda, phi, &left_cells)?;
    let nodes = &forms.mesh.nodes;
    let mut cells = Vec::new();
    let mut values = Vec::new();
    for (i, &c) in left_cells.iter().enumerate() {
        if c == 0 {
            let v: Vec<C64> = nodes
                .iter()
                .enumerate()
                .map(|(a, x)| {
                    if (x[0] - 0.5).abs() < 1e-12 {
                        0.5 * (right[0][a] - left[i][a])
                    } else if x[0] > 0.5 {
                        right[0][a]
                    } else {
                        -left[i][a]
                    }
                })
                .collect();
            cells.push(0);
            values.push(v);
        } else {
            cells.push(c);
            values.push(left[i].iter().map(|u| -u).collect());
        }
    }
    for (i, &c) in right_cells.iter().enumerate().skip(1) {
        cells.push(c);
        values.push(right[i].clone());
    }
    let phys = PhysicalCell::new(forms);
    let eps = op.eps;
    let cell_norms = cells
        .iter()
        .zip(&values)
        .map(|(&c, v)| phys.mass_norm(v, medium_of(c, eps)))
        .collect();
    Ok(ModeField { cells, values, cell_norms })
}

fn medium_of(cell: i64, eps: f64) -> Medium {
    match cell.cmp(&0) {
        std::cmp::Ordering::Greater => Medium::Uniform(eps),
        std::cmp::Ordering::Less => Medium::Uniform(-eps),
        std::cmp::Ordering::Equal => Medium::Joined(eps),
    }
}

pub fn energy_identity(forms: &AssembledForms, mode: &ModeField, lambda: C64, eps: f64) -> EnergyIdentity {
    let phys = PhysicalCell::new(forms);
    let mut grad = 0.0;
    let mut mass = 0.0;
    let mut ends = 0.0;
    let kmax = mode.cells.iter().map(|c| c.abs()).max().unwrap_or(0);
    for (&c, v) in mode.cells.iter().zip(&mode.values) {
        let (g, m) = phys.energy(v, medium_of(c, eps));
        grad += g;
        mass += m;
        if c.abs() == kmax {
            ends += m;
        }
    }
    let residual = (c(grad) - lambda * mass).norm() / grad;
    EnergyIdentity { gradient: grad, mass, residual, truncation_bound: lambda.norm() * ends / grad }
}

/// Exponential rate of the cell norms on cells `first..=last` of one side.
fn side_rate(mode: &ModeField, sign: i64, first: i64) -> f64 {
    let mut ks = Vec::new();
    let mut ys = Vec::new();
    for (&c, &n) in mode.cells.iter().zip(&mode.cell_norms) {
        if c * sign >= first {
            ks.push((c * sign) as f64);
            ys.push(n);
        }
    }
    fit_rate(&ks, &ys)
}

/// Two-stage characteristic-value search in `𝒥`, mode construction and
/// classification.
pub fn find_characteristic_value(
    forms: &AssembledForms,
    dirac: &DiracData,
    coupling: &CouplingData,
    op: &InterfaceOperator,
    settings: &SearchSettings,
    quad: &QuadratureSettings,
) -> Result<ModeResult> {
    let t_abs = coupling.t_star.norm();
    let radius_j = settings.c0 * t_abs;
    let moments = moment_count(op, settings.moment_radius * radius_j, settings.moment_nodes)?;
    if moments.count != 1 {
        return Err(Error::MomentCount { count: moments.count });
    }
    let objective = |x: [f64; 2]| -> f64 {
        let (smin, smax, _) = op.singular(C64::new(x[0], x[1]));
        (smin / smax).ln()
    };
    let (x, _, simplex_evaluations) = nelder_mead(&objective, [0.0, 0.0], 0.1 * radius_j, settings.simplex_budget, 1e-6 * radius_j);
    let (h_found, newton) = singular_newton(op, C64::new(x[0], x[1]), settings.newton_tol, settings.newton_max_iter);
    let last = newton.last().map(|s| s.sigma_rel).unwrap_or(f64::INFINITY);
    if last > settings.newton_tol {
        return Err(Error::Stagnation(format!("sigma_min/sigma_max = {last:.3e} at h = {h_found}")));
    }
    if h_found.norm() >= radius_j {
        return Err(Error::RootEscaped(format!("characteristic value h = {h_found} outside the search disc")));
    }
    let lambda = op.lambda(h_found);
    let (sigma_min, sigma_max, phi_raw) = op.singular(h_found);
    let trace = &op.plus.trace;
    let nphi = trace.norm(&phi_raw);
    let phi: Vec<C64> = phi_raw.iter().map(|x| x / nphi).collect();
    let g = op.matrix(h_found);
    let gphi = &g * DVector::from_vec(phi.clone());
    let residual = trace.norm(gphi.as_slice());
    let disc = op.plus.contour.radius;
    let (cp, cm, scale, q_plus) = couplings(forms, dirac, op.eps, lambda, disc, trace, &phi)?;
    let (clp, clm, _, q_plus_left) = couplings(forms, dirac, -op.eps, lambda, disc, trace, &phi)?;
    let self_convergence = if settings.self_convergence {
        let fine = InterfaceOperator::new(forms, dirac, coupling, op.eps, &quad.refined())?;
        let gf = fine.matrix(h_found);
        trace.op_norm(&(&gf - &g)) / trace.op_norm(&g)
    } else {
        0.0
    };
    let coupling_tolerance = settings.coupling_factor * self_convergence.max(settings.coupling_floor);
    let max_coupling = [cp, cm, clp, clm].iter().map(|z| z.norm()).fold(0.0, f64::max) / scale;
    let classification = if max_coupling <= coupling_tolerance { Classification::Interface } else { Classification::Resonant };
    let mode = mode_field(forms, op, lambda, &phi, settings.window_cells)?;
    let growth_right = side_rate(&mode, 1, 2);
    let growth_left = side_rate(&mode, -1, 2);
    let energy = energy_identity(forms, &mode, lambda, op.eps);
    Ok(ModeResult {
        eps: op.eps,
        lambda_star_found: lambda,
        h_found,
        phi,
        coupling_plus: cp,
        coupling_minus: cm,
        coupling_left_plus: clp,
        coupling_left_minus: clm,
        coupling_scale: scale,
        coupling_tolerance,
        self_convergence,
        classification,
        moments,
        simplex_evaluations,
        newton,
        sigma_min,
        sigma_max,
        residual,
        q_plus,
        q_plus_left,
        mode,
        growth_right,
        growth_left,
        energy,
    })
}

/// Far-field growth of a mode along the `+x₁` direction.
#[derive(Debug, Clone, Serialize)]
pub struct RadiatingGrowth {
    pub cells: Vec<i64>,
    pub norms: Vec<f64>,
    /// Fitted exponential rate of the cell norms.
    pub rate: f64,
    /// `|Im q₊|` at the found characteristic value.
    pub expected: f64,
}

/// Evaluates the right half of the mode on far cells, where the evanescent
/// Dirac tail has died out and only the outgoing Bloch wave remains, and
/// fits its growth. The contour is shrunk to half the admissible radius and
/// resolved for the largest cell index (contour independence makes this the
/// same field as the one of the search).
pub fn radiating_growth(
    forms: &AssembledForms,
    dirac: &DiracData,
    coupling: &CouplingData,
    mode: &ModeResult,
    cells: &[i64],
    gl_order: usize,
) -> Result<RadiatingGrowth> {
    let eps = mode.eps;
    let k_max = cells.iter().map(|k| k.unsigned_abs()).max().unwrap_or(1) as f64;
    let scale = coupling.t_star.norm() * eps.abs() / dirac.alpha;
    let far = FarField::new(dirac, eps, 0.5 * eps.abs().cbrt(), k_max, scale, gl_order);
    let (rate, norms) = far_field_growth(forms, &far, mode.lambda_star_found, &mode.phi, cells)?;
    Ok(RadiatingGrowth { cells: cells.to_vec(), norms, rate, expected: mode.q_plus.im.abs() })
}
