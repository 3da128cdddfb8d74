//! Spectral Green's function of the perturbed periodic operator restricted to
//! the trace line, its analytic continuation along a deformed quasi-momentum
//! contour, complex Bloch roots, the residue identity and the radiation
//! split of single-layer fields.
//!
//! All trace operators map a density `φ` (paired with trace values by the
//! trapezoid weights `W`) to trace values; the spectral representation at
//! quasi-momentum `p` is `Σ_n t_n t_nᴴ W / (λ − λ_n(p))` with `t_n` the trace
//! of the M-normalized Bloch vector. Contributions from `p < 0` equal those
//! of `−p` on the trace (mirror symmetry), so only `p > 0` is integrated.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bands::{branch_derivative, continue_pair, BlochEigenpair, BlochSolver, DiracData};
use crate::cell::AssembledForms;
use crate::error::{Error, Result};
use crate::field::{Medium, PhysicalCell};
use crate::linalg::{c, column, dotc, gauss_legendre, C64, I};

/// Trace-line quadrature: ordered nodes, trapezoid weights, restriction and
/// extension maps.
#[derive(Debug, Clone)]
pub struct TraceGrid {
    pub dofs: Vec<usize>,
    pub x2: Vec<f64>,
    pub weights: Vec<f64>,
    pub n_dofs: usize,
}

impl TraceGrid {
    pub fn from_forms(forms: &AssembledForms) -> Self {
        TraceGrid {
            dofs: forms.trace.dofs.clone(),
            x2: forms.trace.x2.clone(),
            weights: forms.trace.weights.clone(),
            n_dofs: forms.n_dofs,
        }
    }

    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    pub fn restrict(&self, u: &[C64]) -> Vec<C64> {
        self.dofs.iter().map(|&d| u[d]).collect()
    }

    pub fn extend(&self, phi: &[C64]) -> Vec<C64> {
        let mut b = vec![C64::new(0.0, 0.0); self.n_dofs];
        for (k, &d) in self.dofs.iter().enumerate() {
            b[d] += self.weights[k] * phi[k];
        }
        b
    }

    /// Bilinear pairing `⟨φ, ψ⟩ = Σ w φ ψ`.
    pub fn pairing(&self, phi: &[C64], psi: &[C64]) -> C64 {
        self.weights.iter().zip(phi).zip(psi).map(|((w, a), b)| *w * a * b).sum()
    }

    /// Weighted norm `(Σ w |φ|²)^{1/2}`.
    pub fn norm(&self, phi: &[C64]) -> f64 {
        self.weights.iter().zip(phi).map(|(w, a)| w * a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `W^{1/2} G W^{-1/2}`: the operator in an orthonormal trace basis.
    pub fn symmetrized(&self, g: &DMatrix<C64>) -> DMatrix<C64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| g[(i, j)] * (self.weights[i] / self.weights[j]).sqrt())
    }

    /// Operator norm in the weighted L² sense.
    pub fn op_norm(&self, g: &DMatrix<C64>) -> f64 {
        crate::linalg::spectral_norm(&self.symmetrized(g))
    }

    /// Trace dyad `t sᴴ W` as a matrix.
    pub fn dyad(&self, t: &[C64], s: &[C64]) -> DMatrix<C64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| t[i] * s[j].conj() * self.weights[j])
    }
}

/// Complex roots `q_± (λ)` of `λ_{𝔫*,ε}(q) = λ` near `±q*`.
#[derive(Debug, Clone)]
pub struct ComplexMomentumRoot {
    pub lambda: C64,
    pub q_plus: C64,
    pub q_minus: C64,
    pub newton_residuals: Vec<f64>,
    pub branch_certificate: BranchCertificate,
    /// `λ′_{𝔫*,ε}(q₊)`.
    pub derivative: C64,
    /// Eigenpair at `q₊` (left vector normalized against the right one).
    pub pair: BlochEigenpair,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchCertificate {
    pub im_lambda: f64,
    pub im_q: f64,
    /// Sign pattern `sign Im q₊ = sign Im λ` (with a tolerance for real λ).
    pub consistent: bool,
}

/// Eigenpair of band `𝔫*` at real `p` and perturbation `eps` from a dense
/// solve.
pub fn star_pair_real(solver: &BlochSolver, band: usize, p: f64) -> BlochEigenpair {
    let (vals, vecs) = solver.solve(p);
    let v = column(&vecs, band);
    let gap_lo = if band > 0 { vals[band] - vals[band - 1] } else { f64::INFINITY };
    BlochEigenpair {
        p: c(p),
        value: c(vals[band]),
        left: v.clone(),
        vector: v,
        band_ascending: band,
        band_analytic: None,
        gap: gap_lo.min(vals[band + 1] - vals[band]),
    }
}

pub fn find_complex_roots(
    forms: &AssembledForms,
    dirac: &DiracData,
    eps: f64,
    lambda: C64,
    radius: f64,
) -> Result<ComplexMomentumRoot> {
    let solver = BlochSolver::new(forms, eps)?;
    let start = star_pair_real(&solver, dirac.band_indices.0, dirac.q_star);
    find_complex_roots_from(forms, dirac, eps, lambda, radius, start)
}

/// Newton iteration on `p ↦ λ_{𝔫*,ε}(p) − λ` from a known eigenpair of the
/// propagating band, with eigenpairs continued by Rayleigh refinement.
pub fn find_complex_roots_from(
    forms: &AssembledForms,
    dirac: &DiracData,
    eps: f64,
    lambda: C64,
    radius: f64,
    start: BlochEigenpair,
) -> Result<ComplexMomentumRoot> {
    let scale = dirac.lambda_star;
    let mut pair = start;
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..50 {
        let f = pair.value - lambda;
        residuals.push(f.norm());
        if f.norm() <= 1e-12 * scale {
            converged = true;
            break;
        }
        let d = branch_derivative(forms, &pair, eps);
        let mut step = -f / d;
        // Damp steps that would leave the continuation disc.
        let limit = 0.25 * radius;
        if step.norm() > limit {
            step *= limit / step.norm();
        }
        let p_new = pair.p + step;
        if (p_new - dirac.q_star).norm() > radius {
            return Err(Error::RootEscaped(format!(
                "|q - q*| = {:.3e} exceeds the disc radius {radius:.3e} for lambda = {lambda}",
                (p_new - dirac.q_star).norm()
            )));
        }
        pair = continue_pair(forms, eps, p_new, &pair)?;
    }
    if !converged {
        return Err(Error::Newton(format!("no convergence for lambda = {lambda}")));
    }
    let q_plus = pair.p;
    let derivative = branch_derivative(forms, &pair, eps);
    let tol = 1e-10;
    let consistent = if lambda.im.abs() <= 1e-12 * scale {
        q_plus.im.abs() <= tol
    } else {
        q_plus.im.signum() == lambda.im.signum() && q_plus.im.abs() > 0.0
    };
    Ok(ComplexMomentumRoot {
        lambda,
        q_plus,
        q_minus: -q_plus,
        newton_residuals: residuals,
        branch_certificate: BranchCertificate { im_lambda: lambda.im, im_q: q_plus.im, consistent },
        derivative,
        pair,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContourKind {
    /// Real axis deformed by a semicircle of radius `|ε|^{1/3}` below `+q*`
    /// (and above `−q*`).
    CEps,
    /// Real axis with symmetric excisions (principal-value contour).
    CTildeTau,
    /// Closed rectangle (analyticity and winding checks).
    Box,
}

/// Quadrature parameters of the p-contours.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSettings {
    /// Gauss–Legendre order per panel.
    pub gl_order: usize,
    /// Maximal panel length on straight pieces.
    pub panel_length: f64,
    /// Geometric grading ratio towards singular scales.
    pub grading_ratio: f64,
    /// Number of Gauss–Legendre panels on each semicircle.
    pub arc_panels: usize,
    /// Smallest graded panel near `p = 0`, relative to `|t*|ε/α`.
    pub grade_fraction: f64,
    /// Principal-value excision radii (Richardson-extrapolated).
    pub tau: Vec<f64>,
    /// Number of panel halvings applied on top of the settings above.
    pub refinement: u32,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings {
            gl_order: 16,
            panel_length: 0.25,
            grading_ratio: 4.0,
            arc_panels: 2,
            grade_fraction: 0.5,
            tau: vec![1e-2, 5e-3, 2.5e-3],
            refinement: 0,
        }
    }
}

impl QuadratureSettings {
    pub fn refined(&self) -> Self {
        QuadratureSettings { refinement: self.refinement + 1, ..self.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct ContourSpec {
    pub kind: ContourKind,
    pub q_star: f64,
    pub radius: f64,
    /// Scale of the gap-opening region near `p = 0` (`|t*|ε/α`), used for
    /// grading; zero for the unperturbed operator.
    pub dirac_scale: f64,
    /// Semicircle in the upper half-plane around `+q*` (reflected contour).
    pub upper_arc: bool,
    pub quad: QuadratureSettings,
}

impl ContourSpec {
    pub fn c_eps(dirac: &DiracData, t_abs: f64, eps: f64, quad: &QuadratureSettings) -> Self {
        ContourSpec {
            kind: ContourKind::CEps,
            q_star: dirac.q_star,
            radius: eps.abs().cbrt(),
            dirac_scale: t_abs * eps.abs() / dirac.alpha,
            upper_arc: false,
            quad: quad.clone(),
        }
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Real node carrying the full band sum.
    RealFull,
    /// Real node under the semicircle carrying every band except `𝔫*`.
    RealDeflated,
    /// Complex node on the semicircle carrying band `𝔫*` only.
    Arc,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadNode {
    pub p: C64,
    /// Includes `dp`, the mirror doubling and `1/2π`.
    pub weight: C64,
    pub kind: NodeKind,
}

/// Splits `[a, b]` into panels: geometric towards `a` (first width `g_left`)
/// and/or `b` (`g_right`), uniform of length at most `h` in between.
pub fn graded_panels(a: f64, b: f64, g_left: Option<f64>, g_right: Option<f64>, ratio: f64, h: f64) -> Vec<(f64, f64)> {
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut lo = a;
    let mut hi = b;
    if let Some(g) = g_left {
        let mut w = g;
        while lo + w < 0.5 * (a + b) && w < h {
            left.push((lo, lo + w));
            lo += w;
            w *= ratio - 1.0;
            w = w.max(g);
        }
    }
    if let Some(g) = g_right {
        let mut w = g;
        while hi - w > lo.max(0.5 * (a + b)) && w < h {
            right.push((hi - w, hi));
            hi -= w;
            w *= ratio - 1.0;
            w = w.max(g);
        }
    }
    let n_mid = ((hi - lo) / h).ceil().max(1.0) as usize;
    let mut out = left;
    for k in 0..n_mid {
        let x0 = lo + (hi - lo) * k as f64 / n_mid as f64;
        let x1 = lo + (hi - lo) * (k + 1) as f64 / n_mid as f64;
        out.push((x0, x1));
    }
    right.reverse();
    out.extend(right);
    out
}

/// Gauss–Legendre nodes on a list of panels, each split `2^refinement` times.
pub fn panel_nodes(panels: &[(f64, f64)], order: usize, refinement: u32) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let split = 1usize << refinement;
    let mut out = Vec::new();
    for &(a, b) in panels {
        for s in 0..split {
            let a1 = a + (b - a) * s as f64 / split as f64;
            let b1 = a + (b - a) * (s + 1) as f64 / split as f64;
            let half = 0.5 * (b1 - a1);
            let mid = 0.5 * (a1 + b1);
            for k in 0..order {
                out.push((mid + half * x[k], half * w[k]));
            }
        }
    }
    out
}

/// Semicircle nodes `p = centre + r e^{iθ}` with `dp = i r e^{iθ} dθ`,
/// `θ: π → 2π` (lower) or `θ: π → 0` (upper), i.e. always from `centre − r`
/// to `centre + r`.
pub fn arc_nodes(centre: f64, r: f64, upper: bool, panels: usize, order: usize, refinement: u32) -> Vec<(C64, C64)> {
    let (t0, t1) = if upper { (PI, 0.0) } else { (PI, 2.0 * PI) };
    let pan: Vec<(f64, f64)> = (0..panels)
        .map(|k| {
            let a = t0 + (t1 - t0) * k as f64 / panels as f64;
            let b = t0 + (t1 - t0) * (k + 1) as f64 / panels as f64;
            (a, b)
        })
        .collect();
    // panel_nodes expects a < b for positive weights; handle orientation by
    // carrying the signed half-length.
    let (x, w) = gauss_legendre(order);
    let split = 1usize << refinement;
    let mut out = Vec::new();
    for &(a, b) in &pan {
        for s in 0..split {
            let a1 = a + (b - a) * s as f64 / split as f64;
            let b1 = a + (b - a) * (s + 1) as f64 / split as f64;
            let half = 0.5 * (b1 - a1);
            let mid = 0.5 * (a1 + b1);
            for k in 0..order {
                let th = mid + half * x[k];
                let e = C64::from_polar(1.0, th);
                out.push((centre + r * e, I * r * e * (half * w[k])));
            }
        }
    }
    out
}

impl ContourSpec {
    /// Quadrature nodes on the `p > 0` half of the contour.
    pub fn nodes(&self) -> Vec<QuadNode> {
        let q = &self.quad;
        let norm = 2.0 / (2.0 * PI);
        let mut out = Vec::new();
        let qs = self.q_star;
        let r = self.radius;
        let g0 = if self.dirac_scale > 0.0 { Some(q.grade_fraction * self.dirac_scale) } else { None };
        let push_real = |out: &mut Vec<QuadNode>, panels: Vec<(f64, f64)>, kind: NodeKind| {
            for (p, w) in panel_nodes(&panels, q.gl_order, q.refinement) {
                out.push(QuadNode { p: c(p), weight: c(norm * w), kind });
            }
        };
        match self.kind {
            ContourKind::CEps => {
                push_real(&mut out, graded_panels(0.0, qs - r, g0, None, q.grading_ratio, q.panel_length), NodeKind::RealFull);
                push_real(&mut out, graded_panels(qs - r, qs + r, None, None, q.grading_ratio, q.panel_length), NodeKind::RealDeflated);
                for (p, w) in arc_nodes(qs, r, self.upper_arc, q.arc_panels, q.gl_order, q.refinement) {
                    out.push(QuadNode { p, weight: w * norm, kind: NodeKind::Arc });
                }
                push_real(&mut out, graded_panels(qs + r, PI, None, None, q.grading_ratio, q.panel_length), NodeKind::RealFull);
            }
            ContourKind::CTildeTau => {
                let tau = q.tau[0];
                push_real(
                    &mut out,
                    graded_panels(0.0, qs - tau, g0, Some(tau), q.grading_ratio, q.panel_length),
                    NodeKind::RealFull,
                );
                push_real(
                    &mut out,
                    graded_panels(qs + tau, PI, Some(tau), None, q.grading_ratio, q.panel_length),
                    NodeKind::RealFull,
                );
            }
            ContourKind::Box => {
                // Rectangle around q* of half-width r and half-height r/2,
                // counter-clockwise.
                let corners = [
                    C64::new(qs - r, -0.5 * r),
                    C64::new(qs + r, -0.5 * r),
                    C64::new(qs + r, 0.5 * r),
                    C64::new(qs - r, 0.5 * r),
                ];
                let (x, w) = gauss_legendre(q.gl_order);
                let split = 1usize << q.refinement;
                for k in 0..4 {
                    let (a, b) = (corners[k], corners[(k + 1) % 4]);
                    for s in 0..split {
                        let a1 = a + (b - a) * (s as f64 / split as f64);
                        let b1 = a + (b - a) * ((s + 1) as f64 / split as f64);
                        for j in 0..q.gl_order {
                            let p = 0.5 * (a1 + b1) + 0.5 * (b1 - a1) * x[j];
                            out.push(QuadNode { p, weight: 0.5 * (b1 - a1) * w[j], kind: NodeKind::Arc });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Cached spectral data at one real quadrature node.
#[derive(Debug, Clone)]
struct RealSample {
    p: f64,
    weight: f64,
    values: Vec<f64>,
    /// Trace rows of all eigenvectors, `n_t × N`.
    traces: DMatrix<C64>,
    /// Excluded band and its full eigenvector (deflated nodes).
    skip: Option<(usize, Vec<C64>)>,
}

#[derive(Debug, Clone)]
struct ArcSample {
    weight: C64,
    pair: BlochEigenpair,
    t_right: Vec<C64>,
    t_left: Vec<C64>,
}

/// The continued single-layer operator `𝔾̃_ε(λ)` on a fixed contour, with
/// all λ-independent spectral data cached.
#[derive(Debug, Clone)]
pub struct ContinuedGreens {
    pub eps: f64,
    pub contour: ContourSpec,
    pub trace: TraceGrid,
    real: Vec<RealSample>,
    arc: Vec<ArcSample>,
}

/// One evaluation of the continued operator.
#[derive(Debug, Clone)]
pub struct ContinuedOperatorSample {
    pub lambda: C64,
    pub eps: f64,
    /// Maps densities to trace values.
    pub matrix: DMatrix<C64>,
    /// Semicircle (propagating-band) contribution.
    pub propagating: DMatrix<C64>,
    /// Real-axis band sums.
    pub remainder: DMatrix<C64>,
}

impl ContinuedGreens {
    pub fn new(forms: &AssembledForms, dirac: &DiracData, eps: f64, contour: ContourSpec) -> Result<Self> {
        let solver = BlochSolver::new(forms, eps)?;
        let trace = TraceGrid::from_forms(forms);
        let band = dirac.band_indices.0;
        let nodes = contour.nodes();
        let real_nodes: Vec<QuadNode> = nodes.iter().copied().filter(|n| n.kind != NodeKind::Arc).collect();
        let real: Vec<RealSample> = real_nodes
            .par_iter()
            .map(|n| {
                let p = n.p.re;
                if n.kind == NodeKind::RealDeflated {
                    let (values, traces, vector) = solver.solve_trace_with(p, &trace.dofs, band);
                    RealSample { p, weight: n.weight.re, values, traces, skip: Some((band, vector)) }
                } else {
                    let (values, traces) = solver.solve_trace(p, &trace.dofs);
                    RealSample { p, weight: n.weight.re, values, traces, skip: None }
                }
            })
            .collect();
        let arc_nodes: Vec<QuadNode> = nodes.iter().copied().filter(|n| n.kind == NodeKind::Arc).collect();
        let mut arc = Vec::with_capacity(arc_nodes.len());
        if !arc_nodes.is_empty() {
            let start_p = if contour.kind == ContourKind::CEps { contour.q_star - contour.radius } else { arc_nodes[0].p.re };
            let mut prev = star_pair_real(&solver, band, start_p);
            for n in &arc_nodes {
                let pair = continue_pair(forms, eps, n.p, &prev).or_else(|_| {
                    // Retry through an intermediate point when the step is
                    // too large for the Rayleigh iteration.
                    let mid = 0.5 * (prev.p + n.p);
                    let m = continue_pair(forms, eps, mid, &prev)?;
                    continue_pair(forms, eps, n.p, &m)
                })?;
                let t_right = trace.restrict(&pair.vector);
                let t_left = trace.restrict(&pair.left);
                arc.push(ArcSample { weight: n.weight, pair: pair.clone(), t_right, t_left });
                prev = pair;
            }
        }
        Ok(ContinuedGreens { eps, contour, trace, real, arc })
    }

    pub fn node_count(&self) -> (usize, usize) {
        (self.real.len(), self.arc.len())
    }

    fn accumulate(&self, lambda: C64, power: i32) -> (DMatrix<C64>, DMatrix<C64>) {
        let nt = self.trace.len();
        let mut rem = DMatrix::from_element(nt, nt, C64::new(0.0, 0.0));
        let kernel = |d: C64| -> C64 {
            if power == 1 {
                d.inv()
            } else {
                -(d * d).inv()
            }
        };
        for s in &self.real {
            let nb = s.values.len();
            for n in 0..nb {
                if let Some((b, _)) = &s.skip {
                    if *b == n {
                        continue;
                    }
                }
                let coef = kernel(lambda - s.values[n]) * s.weight;
                for j in 0..nt {
                    let tj = s.traces[(j, n)].conj() * coef;
                    for i in 0..nt {
                        rem[(i, j)] += s.traces[(i, n)] * tj;
                    }
                }
            }
        }
        let mut prop = DMatrix::from_element(nt, nt, C64::new(0.0, 0.0));
        for a in &self.arc {
            let coef = kernel(lambda - a.pair.value) * a.weight;
            for j in 0..nt {
                let tj = a.t_left[j].conj() * coef;
                for i in 0..nt {
                    prop[(i, j)] += a.t_right[i] * tj;
                }
            }
        }
        let w = &self.trace.weights;
        for j in 0..nt {
            for i in 0..nt {
                rem[(i, j)] *= w[j];
                prop[(i, j)] *= w[j];
            }
        }
        (prop, rem)
    }

    /// Continued operator at `λ`.
    pub fn operator(&self, lambda: C64) -> ContinuedOperatorSample {
        let (propagating, remainder) = self.accumulate(lambda, 1);
        ContinuedOperatorSample { lambda, eps: self.eps, matrix: &propagating + &remainder, propagating, remainder }
    }

    /// `d𝔾̃/dλ` from the spectral representation.
    pub fn derivative(&self, lambda: C64) -> DMatrix<C64> {
        let (p, r) = self.accumulate(lambda, 2);
        p + r
    }

    /// Bloch components `ũ_p` of the single-layer field `𝔾̃_ε(λ)φ` at every
    /// node, with their quasi-momenta and weights.
    fn components(&self, forms: &AssembledForms, lambda: C64, phi: &[C64]) -> Result<Vec<(C64, C64, Vec<C64>)>> {
        let b = self.trace.extend(phi);
        let eps = self.eps;
        let mut out: Vec<(C64, C64, Vec<C64>)> = self
            .real
            .par_iter()
            .map(|s| -> Result<(C64, C64, Vec<C64>)> {
                let mut rhs = b.clone();
                if let Some((_, v)) = &s.skip {
                    // Remove the propagating component: b ← b − M v (vᴴ b).
                    let proj = dotc(v, &b);
                    let mv = forms.apply_m(eps, v);
                    for (r, m) in rhs.iter_mut().zip(&mv) {
                        *r -= m * proj;
                    }
                }
                let lu = forms.shifted_band(c(s.p), eps, lambda).factor()?;
                let mut u = lu.solve(&rhs);
                for x in u.iter_mut() {
                    *x = -*x;
                }
                Ok((c(s.p), c(s.weight), u))
            })
            .collect::<Result<Vec<_>>>()?;
        for a in &self.arc {
            let amp = dotc(&a.pair.left, &b) / (lambda - a.pair.value);
            let u: Vec<C64> = a.pair.vector.iter().map(|v| v * amp).collect();
            out.push((a.pair.p, a.weight, u));
        }
        Ok(out)
    }

    /// Physical single-layer field on the listed cells (cell `k` is the
    /// mesh cell shifted by `k` periods, `X = x₁ − 1/2 + k`), as values at
    /// the mesh nodes.
    pub fn volume_field(&self, forms: &AssembledForms, lambda: C64, phi: &[C64], cells: &[i64]) -> Result<Vec<Vec<C64>>> {
        let comps = self.components(forms, lambda, phi)?;
        let nodes = &forms.mesh.nodes;
        let mut fields = vec![vec![C64::new(0.0, 0.0); nodes.len()]; cells.len()];
        for (p, w, u) in &comps {
            let pu = forms.apply_mirror(u);
            for (ci, &k) in cells.iter().enumerate() {
                let f = &mut fields[ci];
                for (a, x) in nodes.iter().enumerate() {
                    let d = forms.node_dof[a];
                    let xx = k as f64 + x[0] - 0.5;
                    let e = (I * p * xx).exp();
                    let em = (-I * p * xx).exp();
                    f[a] += 0.5 * w * (e * u[d] + em * pu[d]);
                }
            }
        }
        Ok(fields)
    }

    /// Variational right-sided normal derivative of the single-layer field at
    /// the trace nodes.
    pub fn jump_right(&self, forms: &AssembledForms, lambda: C64, phi: &[C64]) -> Result<Vec<C64>> {
        let comps = self.components(forms, lambda, phi)?;
        let nt = self.trace.len();
        let mut acc = vec![C64::new(0.0, 0.0); nt];
        for (p, w, u) in &comps {
            let r = forms.flux_right_variational(u, *p, self.eps, lambda);
            let pu = forms.apply_mirror(u);
            let rm = forms.flux_right_variational(&pu, -*p, self.eps, lambda);
            for k in 0..nt {
                acc[k] += 0.5 * w * (r[k] + rm[k]);
            }
        }
        Ok(acc)
    }
}

/// Trace resolvent `Σ_n t_n t_nᴴ W / (λ − λ_n(p)) = −Tr (A(p) − λM)⁻¹ Ext`
/// at one real quasi-momentum from banded solves.
pub fn trace_resolvent(forms: &AssembledForms, eps: f64, p: f64, lambda: C64, trace: &TraceGrid) -> Result<DMatrix<C64>> {
    let lu = forms.shifted_band(c(p), eps, lambda).factor()?;
    let nt = trace.len();
    let mut g = DMatrix::from_element(nt, nt, C64::new(0.0, 0.0));
    for j in 0..nt {
        let mut e = vec![C64::new(0.0, 0.0); nt];
        e[j] = c(1.0);
        let b = trace.extend(&e);
        let x = lu.solve(&b);
        for i in 0..nt {
            g[(i, j)] = -x[trace.dofs[i]];
        }
    }
    Ok(g)
}

/// Operator samples of one energy on contours that differ only in their
/// semicircle radius, and on the refined quadrature of the default contour.
#[derive(Debug, Clone)]
pub struct ContourReport {
    pub lambda: C64,
    pub radius: f64,
    pub radius_alternative: f64,
    /// `‖𝔾̃(r) − 𝔾̃(r/2)‖ / ‖𝔾̃(r)‖`.
    pub independence: f64,
    /// `‖𝔾̃ − 𝔾̃_refined‖ / ‖𝔾̃‖` (all panels halved).
    pub self_convergence: f64,
    pub nodes: (usize, usize),
    pub nodes_refined: (usize, usize),
}

pub fn contour_check(
    forms: &AssembledForms,
    dirac: &DiracData,
    t_abs: f64,
    eps: f64,
    lambda: C64,
    quad: &QuadratureSettings,
) -> Result<ContourReport> {
    let spec = ContourSpec::c_eps(dirac, t_abs, eps, quad);
    let radius = spec.radius;
    let base = ContinuedGreens::new(forms, dirac, eps, spec.clone())?;
    let half = ContinuedGreens::new(forms, dirac, eps, spec.with_radius(0.5 * radius))?;
    let fine = ContinuedGreens::new(forms, dirac, eps, ContourSpec::c_eps(dirac, t_abs, eps, &quad.refined()))?;
    let g = base.operator(lambda).matrix;
    let tr = &base.trace;
    let scale = tr.op_norm(&g);
    Ok(ContourReport {
        lambda,
        radius,
        radius_alternative: 0.5 * radius,
        independence: tr.op_norm(&(&g - &half.operator(lambda).matrix)) / scale,
        self_convergence: tr.op_norm(&(&g - &fine.operator(lambda).matrix)) / scale,
        nodes: base.node_count(),
        nodes_refined: fine.node_count(),
    })
}

/// Report of the residue identity at a real energy.
#[derive(Debug, Clone)]
pub struct ResidueReport {
    pub lambda: f64,
    pub q_plus: f64,
    pub slope_plus: f64,
    pub slope_minus: f64,
    /// Semicircle integral of the propagating dyad over the disc interval.
    pub contour_part: DMatrix<C64>,
    /// Principal value over the same interval (τ-extrapolated).
    pub pv_part: DMatrix<C64>,
    pub residue_part: DMatrix<C64>,
    pub discrepancy: f64,
    pub discrepancy_without_residue: f64,
    pub predicted_dyad_norm: f64,
    /// Discrepancy with the unextrapolated principal value, per τ.
    pub pv_by_tau: Vec<(f64, f64)>,
}

/// Compares the semicircle integral of the propagating dyad with the
/// principal value plus the two residue dyads `−iπ/|λ′(q±)|` (each with the
/// `1/2π` normalization). Real segments common to both sides cancel
/// identically and are omitted.
pub fn residue_identity_check(
    forms: &AssembledForms,
    dirac: &DiracData,
    eps: f64,
    lambda: f64,
    quad: &QuadratureSettings,
) -> Result<ResidueReport> {
    let r = eps.abs().cbrt();
    let qs = dirac.q_star;
    let band = dirac.band_indices.0;
    let trace = TraceGrid::from_forms(forms);
    let solver = BlochSolver::new(forms, eps)?;
    let root = find_complex_roots(forms, dirac, eps, c(lambda), r)?;
    let q0 = root.q_plus.re;
    let norm = 2.0 / (2.0 * PI);
    // Semicircle side.
    let mut contour_part = DMatrix::from_element(trace.len(), trace.len(), C64::new(0.0, 0.0));
    let mut prev = star_pair_real(&solver, band, qs - r);
    for (p, w) in arc_nodes(qs, r, false, quad.arc_panels, quad.gl_order, quad.refinement) {
        let pair = continue_pair(forms, eps, p, &prev)?;
        let d = trace.dyad(&trace.restrict(&pair.vector), &trace.restrict(&pair.left));
        contour_part += d * (w * norm / (c(lambda) - pair.value));
        prev = pair;
    }
    // Principal value over the disc interval, excising (q₊ − τ, q₊ + τ).
    let real_dyad = |p: f64| -> (f64, DMatrix<C64>) {
        let pr = star_pair_real(&solver, band, p);
        let t = trace.restrict(&pr.vector);
        (pr.value.re, trace.dyad(&t, &t))
    };
    let mut pvs = Vec::new();
    for &tau in &quad.tau {
        let mut acc = DMatrix::from_element(trace.len(), trace.len(), C64::new(0.0, 0.0));
        let mut panels = graded_panels(qs - r, q0 - tau, None, Some(tau), quad.grading_ratio, quad.panel_length.min(r / 2.0));
        panels.extend(graded_panels(q0 + tau, qs + r, Some(tau), None, quad.grading_ratio, quad.panel_length.min(r / 2.0)));
        let nodes = panel_nodes(&panels, quad.gl_order, quad.refinement);
        let parts: Vec<DMatrix<C64>> = nodes
            .par_iter()
            .map(|&(p, w)| {
                let (val, d) = real_dyad(p);
                d * c(w * norm / (lambda - val))
            })
            .collect();
        for pmat in parts {
            acc += pmat;
        }
        pvs.push(acc);
    }
    // Richardson in τ: remainder odd in τ (τ, τ³).
    let pv_part = richardson_odd(&quad.tau, &pvs);
    let slope_plus = root.derivative.re;
    let pair_minus = star_pair_real(&solver, band, -q0);
    let slope_minus = crate::bands::group_velocity(forms, &pair_minus, eps)?;
    let t_plus = trace.restrict(&root.pair.vector);
    let dyad_plus = trace.dyad(&t_plus, &t_plus);
    let t_minus = trace.restrict(&pair_minus.vector);
    let dyad_minus = trace.dyad(&t_minus, &t_minus);
    // The contour passes below the pole at q₊: the indentation contributes
    // πi times the residue of the dyad over λ − λ(p). The pole at −q₊ is
    // accounted for by the mirror doubling.
    let _ = dyad_minus;
    let residue_part = dyad_plus * (-I * norm * PI / slope_plus);
    let rhs = &pv_part + &residue_part;
    let scale = trace.op_norm(&contour_part);
    let discrepancy = trace.op_norm(&(&contour_part - &rhs)) / scale;
    let discrepancy_without_residue = trace.op_norm(&(&contour_part - &pv_part)) / scale;
    let predicted_dyad_norm = trace.op_norm(&residue_part) / scale;
    let pv_by_tau = quad
        .tau
        .iter()
        .zip(&pvs)
        .map(|(&tau, pv)| (tau, trace.op_norm(&(&contour_part - pv - &residue_part)) / scale))
        .collect();
    Ok(ResidueReport {
        lambda,
        q_plus: q0,
        slope_plus,
        slope_minus,
        contour_part,
        pv_part,
        residue_part,
        discrepancy,
        discrepancy_without_residue,
        predicted_dyad_norm,
        pv_by_tau,
    })
}

/// Richardson extrapolation to `τ → 0` for a remainder expanded in odd
/// powers of `τ` (uses `τ, τ³, τ⁵, …` up to the number of samples minus one).
pub fn richardson_odd(taus: &[f64], values: &[DMatrix<C64>]) -> DMatrix<C64> {
    let m = taus.len();
    let mut a = DMatrix::<f64>::zeros(m, m);
    for (i, &t) in taus.iter().enumerate() {
        a[(i, 0)] = 1.0;
        for k in 1..m {
            a[(i, k)] = t.powi(2 * k as i32 - 1);
        }
    }
    let inv = a.try_inverse().expect("distinct excision radii");
    let mut out = values[0].clone() * c(0.0);
    for i in 0..m {
        out += &values[i] * c(inv[(0, i)]);
    }
    out
}

/// Outgoing amplitude and decay certificate of a single-layer field.
#[derive(Debug, Clone)]
pub struct RadiationReport {
    pub lambda: C64,
    pub q_plus: C64,
    pub amp_plus: C64,
    /// M-norm of the field per cell `k = 1..K`.
    pub field_norms: Vec<f64>,
    /// M-norm of the field minus the outgoing Bloch wave per cell.
    pub residual_norms: Vec<f64>,
    /// Fitted exponential rate of the residual (positive = decay).
    pub residual_rate: f64,
    /// Fitted exponential growth rate of the field norm.
    pub field_growth_rate: f64,
}

/// Least-squares slope of `ln y_k` against `k`.
pub fn fit_rate(ks: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = ks.iter().zip(ys).filter(|(_, y)| **y > 0.0).map(|(k, y)| (*k, y.ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Outgoing Bloch wave `amp · e^{iq(k+X)} ṽ(q)` at the mesh nodes of
/// cell `k`.
pub fn outgoing_wave(forms: &AssembledForms, pair: &BlochEigenpair, amp: C64, k: i64) -> Vec<C64> {
    forms
        .mesh
        .nodes
        .iter()
        .enumerate()
        .map(|(a, x)| amp * pair.vector[forms.node_dof[a]] * (I * pair.p * (k as f64 + x[0] - 0.5)).exp())
        .collect()
}

pub fn radiation_split(
    forms: &AssembledForms,
    dirac: &DiracData,
    greens: &ContinuedGreens,
    lambda: C64,
    phi: &[C64],
    n_cells: usize,
    skip_cells: usize,
) -> Result<RadiationReport> {
    let eps = greens.eps;
    let root = find_complex_roots(forms, dirac, eps, lambda, greens.contour.radius)?;
    let trace = &greens.trace;
    let t_left = trace.restrict(&root.pair.left);
    // ⟨φ, conj(u(q̄₊))⟩ = Σ w φ conj(w_left)
    let pairing: C64 = trace.weights.iter().zip(phi).zip(&t_left).map(|((w, f), l)| *w * f * l.conj()).sum();
    let amp_plus = -I * pairing / root.derivative;
    let cells: Vec<i64> = (1..=n_cells as i64).collect();
    let fields = greens.volume_field(forms, lambda, phi, &cells)?;
    let cell = PhysicalCell::new(forms);
    let medium = Medium::Uniform(eps);
    let mut field_norms = Vec::new();
    let mut residual_norms = Vec::new();
    for (ci, &k) in cells.iter().enumerate() {
        let out = outgoing_wave(forms, &root.pair, amp_plus, k);
        let res: Vec<C64> = fields[ci].iter().zip(&out).map(|(a, b)| a - b).collect();
        field_norms.push(cell.mass_norm(&fields[ci], medium));
        residual_norms.push(cell.mass_norm(&res, medium));
    }
    let ks: Vec<f64> = cells.iter().map(|&k| k as f64).collect();
    let s = skip_cells.min(n_cells.saturating_sub(2));
    let residual_rate = -fit_rate(&ks[s..], &residual_norms[s..]);
    let field_growth_rate = fit_rate(&ks[s..], &field_norms[s..]);
    Ok(RadiationReport {
        lambda,
        q_plus: root.q_plus,
        amp_plus,
        field_norms,
        residual_norms,
        residual_rate,
        field_growth_rate,
    })
}

/// Smallest positive imaginary part of the complex quasi-momenta at which a
/// band other than `𝔫*` reaches the energy `λ`, found by scanning
/// `|λ_n(p) − λ|` over a rectangle of complex momenta with dense solves and
/// polishing by Newton. This is the slowest evanescent decay rate.
pub fn slowest_evanescent_rate(forms: &AssembledForms, dirac: &DiracData, eps: f64, lambda: f64, im_max: f64) -> Result<f64> {
    let solver = BlochSolver::new(forms, eps)?;
    let n_re = 48;
    let n_im = 24;
    let mut best = f64::INFINITY;
    let window = (lambda - 0.5 * dirac.lambda_star, lambda + 0.5 * dirac.lambda_star);
    let mut grid = Vec::new();
    for a in 0..=n_re {
        for b in 1..=n_im {
            grid.push(C64::new(PI * a as f64 / n_re as f64, im_max * b as f64 / n_im as f64));
        }
    }
    let vals: Vec<Vec<C64>> = grid
        .par_iter()
        .map(|&p| solver.solve_complex_window(p, window.0, window.1).into_iter().map(|e| e.0).collect())
        .collect();
    // A root lies near grid points where some eigenvalue passes close to λ
    // (real part crossing with small imaginary part).
    for (k, p) in grid.iter().enumerate() {
        for v in &vals[k] {
            let d = (v - lambda).norm();
            if d < 0.05 * dirac.lambda_star * (im_max / n_im as f64) * 4.0 {
                best = best.min(p.im);
            }
        }
    }
    let _ = DVector::<f64>::zeros(0);
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_panels_cover_interval() {
        let p = graded_panels(0.0, 2.0, Some(1e-3), Some(1e-2), 4.0, 0.25);
        assert!((p[0].0 - 0.0).abs() < 1e-15);
        assert!((p.last().unwrap().1 - 2.0).abs() < 1e-15);
        for w in p.windows(2) {
            assert!((w[0].1 - w[1].0).abs() < 1e-14);
        }
        assert!((p[0].1 - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn box_contour_integrates_entire_function_to_zero() {
        let spec = ContourSpec {
            kind: ContourKind::Box,
            q_star: 2.0,
            radius: 0.3,
            dirac_scale: 0.0,
            upper_arc: false,
            quad: QuadratureSettings::default(),
        };
        let s: C64 = spec.nodes().iter().map(|n| n.weight * (n.p * 3.0).exp()).sum();
        assert!(s.norm() < 1e-12);
    }
}

/// Single-layer fields far from the interface. The full band sum is the
/// exact discrete resolvent, meromorphic in `p`, so for `λ` inside the
/// window it can be integrated along the real axis indented below `+q*`
/// by a small semicircle; by contour independence this equals `𝔾̃_ε(λ)`
/// with any admissible radius. A small radius keeps `e^{ipk}` bounded on
/// the semicircle for large `k`, and panels shrink like `1/k` to resolve
/// the oscillation.
#[derive(Debug, Clone)]
pub struct FarField {
    pub eps: f64,
    pub radius: f64,
    nodes: Vec<(C64, C64)>,
}

impl FarField {
    pub fn new(dirac: &DiracData, eps: f64, radius: f64, k_max: f64, dirac_scale: f64, gl_order: usize) -> Self {
        let qs = dirac.q_star;
        let h = (8.0 / k_max.max(1.0)).min(0.25);
        let g0 = if dirac_scale > 0.0 { Some((0.5 * dirac_scale).min(h)) } else { None };
        let norm = 2.0 / (2.0 * PI);
        let mut nodes = Vec::new();
        for (p, w) in panel_nodes(&graded_panels(0.0, qs - radius, g0, None, 4.0, h), gl_order, 0) {
            nodes.push((c(p), c(norm * w)));
        }
        for (p, w) in arc_nodes(qs, radius, false, 4, gl_order, 0) {
            nodes.push((p, w * norm));
        }
        for (p, w) in panel_nodes(&graded_panels(qs + radius, PI, None, None, 4.0, h), gl_order, 0) {
            nodes.push((c(p), c(norm * w)));
        }
        FarField { eps, radius, nodes }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Nodal fields on the listed cells.
    pub fn volume_field(&self, forms: &AssembledForms, lambda: C64, phi: &[C64], cells: &[i64]) -> Result<Vec<Vec<C64>>> {
        let trace = TraceGrid::from_forms(forms);
        let b = trace.extend(phi);
        let n_nodes = forms.mesh.nodes.len();
        let parts: Vec<Vec<Vec<C64>>> = self
            .nodes
            .par_iter()
            .map(|&(p, w)| -> Result<Vec<Vec<C64>>> {
                let lu = forms.shifted_band(p, self.eps, lambda).factor()?;
                let u: Vec<C64> = lu.solve(&b).into_iter().map(|x| -x).collect();
                let pu = forms.apply_mirror(&u);
                let mut out = vec![vec![C64::new(0.0, 0.0); n_nodes]; cells.len()];
                for (ci, &k) in cells.iter().enumerate() {
                    for (a, x) in forms.mesh.nodes.iter().enumerate() {
                        let d = forms.node_dof[a];
                        let xx = k as f64 + x[0] - 0.5;
                        out[ci][a] = 0.5 * w * ((I * p * xx).exp() * u[d] + (-I * p * xx).exp() * pu[d]);
                    }
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut fields = vec![vec![C64::new(0.0, 0.0); n_nodes]; cells.len()];
        for part in parts {
            for (f, g) in fields.iter_mut().zip(part) {
                for (a, b) in f.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        Ok(fields)
    }
}

/// Exponential growth rate of the cell norms of `𝔾̃_ε(λ)φ` over distant
/// cells (positive = growth in the `+x₁` direction).
pub fn far_field_growth(
    forms: &AssembledForms,
    far: &FarField,
    lambda: C64,
    phi: &[C64],
    cells: &[i64],
) -> Result<(f64, Vec<f64>)> {
    let fields = far.volume_field(forms, lambda, phi, cells)?;
    let phys = PhysicalCell::new(forms);
    let norms: Vec<f64> = fields.iter().map(|f| phys.mass_norm(f, Medium::Uniform(far.eps))).collect();
    let ks: Vec<f64> = cells.iter().map(|&k| k as f64).collect();
    Ok((fit_rate(&ks, &norms), norms))
}
